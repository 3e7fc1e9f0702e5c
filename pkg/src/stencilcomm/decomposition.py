"""Communication cost of geometric decompositions and their exhaustive optimization.

Inter-node decompositions minimize the worst-case halo exchange volume per
node.  Intra-node decompositions minimize the part of a device's halo that has
to come from other nodes (the device grid minus its local subgrid).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .geometry import DecompositionError, Extent, cell_count, grid_of, subdomain_of

logger = logging.getLogger(__name__)


class Level(str, Enum):
    INTER = "inter"
    INTRA = "intra"


class Scheme(str, Enum):
    ONE_D = "1D"
    TWO_D = "2D"
    THREE_D = "3D"


@dataclass(frozen=True)
class DecompCost:
    work: int
    halo_volume: int
    q_inter: int
    q_intra: int
    local_subgrid: int

    def __post_init__(self):
        if self.work < 1 or min(self.halo_volume, self.q_inter, self.q_intra) < 0:
            raise ValueError(f"invalid cost {self}")


@dataclass(frozen=True)
class DecompSolution:
    p: Extent
    cost: DecompCost
    objective: int


def local_work(n: Sequence[int], p: Sequence[int]) -> int:
    return cell_count(subdomain_of(n, p))


def halo_exchange_volume(n: Sequence[int], p: Sequence[int], r: int, periodic: bool = True) -> int:
    """Cells sent plus received per node in the worst case.

    Under periodic boundaries an axis that is not split wraps onto the node
    itself, so it adds no halo that needs communicating.
    """
    sub = subdomain_of(n, p)
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    grown = [
        ni + (0 if periodic and pi == 1 else 2 * r) for ni, pi in zip(sub, p)
    ]
    return 2 * (math.prod(grown) - cell_count(sub))


def local_subgrid_size(n_node: Sequence[int], p_dev: Sequence[int], r: int) -> int:
    sub = subdomain_of(n_node, p_dev)
    return math.prod(ni + (r if pi >= 2 else 0) for ni, pi in zip(sub, p_dev))


def intra_inter_volumes(n_node: Sequence[int], p_dev: Sequence[int], r: int) -> tuple[int, int]:
    """Return ``(q_inter, q_intra)`` for one device of a node."""
    sub = subdomain_of(n_node, p_dev)
    c_m = cell_count(grid_of(sub, r))
    c_l = local_subgrid_size(n_node, p_dev, r)
    return c_m - c_l, c_l - cell_count(sub)


def factorizations(c: int, d: int) -> list[Extent]:
    """Ordered d-tuples of positive integers whose product is ``c``, sorted."""
    if c < 1 or d < 1:
        raise ValueError(f"need c >= 1 and d >= 1, got c={c}, d={d}")
    if d == 1:
        return [Extent((c,))]
    out = []
    for f in range(1, c + 1):
        if c % f == 0:
            out.extend(Extent((f, *rest)) for rest in factorizations(c // f, d - 1))
    return out


def _valid(n: Sequence[int], p: Sequence[int], min_extent: int) -> bool:
    return all(
        ni % pi == 0 and (pi == 1 or ni // pi >= min_extent) for ni, pi in zip(n, p)
    )


def decomposition_cost(
    n: Sequence[int], p: Sequence[int], r: int, level: Level | str = Level.INTER, periodic: bool = True
) -> DecompCost:
    """Cost breakdown of one decomposition.

    At the inter level the whole halo is inter-node traffic and the local
    subgrid is just the subdomain.  At the intra level ``n`` is a node's
    domain and ``p`` splits it across the node's devices.
    """
    level = Level(level)
    work = local_work(n, p)
    if level is Level.INTER:
        q = halo_exchange_volume(n, p, r, periodic)
        return DecompCost(work, q, q // 2, 0, work)
    q_inter, q_intra = intra_inter_volumes(n, p, r)
    return DecompCost(
        work,
        halo_exchange_volume(n, p, r, periodic=False),
        q_inter,
        q_intra,
        local_subgrid_size(n, p, r),
    )


def _objective(cost: DecompCost, level: Level) -> int:
    return cost.halo_volume if level is Level.INTER else cost.q_inter


def feasible_counts(n: Sequence[int], counts: Iterable[int], min_extent: int = 1) -> list[int]:
    return [
        c for c in counts
        if any(_valid(n, p, min_extent) for p in factorizations(c, len(n)))
    ]


def optimize_decomposition(
    n: Sequence[int],
    c_p: int,
    r: int,
    level: Level | str = Level.INTER,
    periodic: bool = True,
    min_extent: int = 1,
) -> DecompSolution:
    """Exhaustively search the factorizations of ``c_p`` for the cheapest one.

    Ties go to the lexicographically smallest ``p``.  ``min_extent`` rejects
    decompositions whose split axes would leave fewer cells than that per
    subdomain (the runtime needs ``n'_i > 2r``).
    """
    level = Level(level)
    n = Extent(n)
    if c_p < 1:
        raise ValueError(f"processor count must be >= 1, got {c_p}")
    best = None
    for p in factorizations(c_p, n.ndim):
        if not _valid(n, p, min_extent):
            continue
        cost = decomposition_cost(n, p, r, level, periodic)
        obj = _objective(cost, level)
        # factorizations() is sorted, so strict < keeps the smallest tuple on ties
        if best is None or obj < best.objective:
            best = DecompSolution(p, cost, obj)
    if best is None:
        window = range(max(1, c_p - 8), c_p + 9)
        near = feasible_counts(n, window, min_extent)
        lower = [c for c in near if c < c_p]
        upper = [c for c in near if c > c_p]
        hint = [x for x in (lower[-1:] + upper[:1])]
        raise DecompositionError(
            f"no factorization of {c_p} divides {tuple(n)}; nearest feasible counts: {hint}"
        )
    return best


def scheme_partition(c_p: int, scheme: Scheme | str, d: int = 3) -> Extent | None:
    """The constrained decomposition of a 1D/2D/3D scheme, or None if not integral."""
    free = {Scheme.ONE_D: 1, Scheme.TWO_D: 2, Scheme.THREE_D: 3}[Scheme(scheme)]
    if free > d:
        return None
    root = round(c_p ** (1.0 / free))
    for cand in (root - 1, root, root + 1):
        if cand >= 1 and cand ** free == c_p:
            return Extent([cand] * free + [1] * (d - free))
    return None


def halo_curve(
    n: Sequence[int],
    r: int,
    scheme: Scheme | str,
    counts: Iterable[int],
    periodic: bool = False,
) -> tuple[list[tuple[int, int]], list[str]]:
    """Halo size of a subgrid versus processor count for a fixed scheme.

    Returns ``(rows, warnings)`` with rows ``(C_P, halo_cells)``.  With
    ``periodic`` the unsplit axes wrap locally and contribute no halo.
    """
    rows, warnings = [], []
    for c in counts:
        p = scheme_partition(c, scheme, len(n))
        if p is None or any(ni % pi for ni, pi in zip(n, p)):
            msg = f"C_P={c}: no integral {Scheme(scheme).value} decomposition of {tuple(n)}"
            logger.warning(msg)
            warnings.append(msg)
            continue
        rows.append((c, halo_exchange_volume(n, p, r, periodic) // 2))
    return rows, warnings


def decomposition_table(
    n: Sequence[int],
    counts: Iterable[int],
    r: int,
    level: Level | str = Level.INTER,
    periodic: bool = True,
    min_extent: int = 1,
) -> list[dict]:
    """One row per count; infeasible counts carry an ``error`` entry instead of a solution."""
    rows = []
    for c in counts:
        try:
            sol = optimize_decomposition(n, c, r, level, periodic, min_extent)
        except DecompositionError as exc:
            rows.append({"C_P": c, "error": str(exc)})
            continue
        rows.append({"C_P": c, "p": tuple(sol.p), "objective": sol.objective, "cost": sol.cost})
    return rows


def write_table_csv(rows: list[dict], level: Level | str, fh, comment: str | None = None) -> None:
    level = Level(level)
    obj_name = "Q" if level is Level.INTER else "C_M''-C_L''"
    if comment:
        fh.write(f"# {comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["C_P", "p1", "p2", "p3", obj_name, "error"])
    for row in rows:
        if "error" in row:
            w.writerow([row["C_P"], "", "", "", "", row["error"]])
        else:
            p = list(row["p"]) + [""] * (3 - len(row["p"]))
            w.writerow([row["C_P"], *p[:3], row["objective"], ""])
