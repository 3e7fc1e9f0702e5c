"""Running-time model for iterative stencil loops.

A step takes ``max(W / pi, Q / beta) + tau0``: computation and communication
overlap fully, and only a sequential overhead adds on top.  Rates are per
cell per full integration step.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .decomposition import halo_exchange_volume, local_work, optimize_decomposition
from .geometry import DecompositionError, Extent, cell_count
from .mapping import partition_from_count

logger = logging.getLogger(__name__)


class Bound(str, Enum):
    COMPUTE = "compute"
    COMMUNICATION = "communication"


@dataclass(frozen=True)
class PerfParams:
    pi_inv: float
    beta_inv: float
    tau0: float = 0.0

    def __post_init__(self):
        if self.pi_inv <= 0 or self.beta_inv <= 0 or self.tau0 < 0:
            raise ValueError(f"invalid performance parameters {self}")


# Benchmark compute and network rates, per cell per full RK3 step.
BENCHMARK_PARAMS = PerfParams(pi_inv=2.2e-9, beta_inv=3.9e-9, tau0=0.0)


@dataclass(frozen=True)
class ScalingPoint:
    """One device count on a scaling curve.

    ``time_per_cell`` divides the step time by every cell in the global
    domain.  ``device_time_per_cell`` divides it by the cells one device
    updates, so it sits at ``pi_inv`` while compute-bound.
    """

    devices: int
    p: Extent
    work: int
    halo: int
    total_cells: int
    tau_w: float
    tau_q: float
    time_per_step: float
    bound: Bound

    @property
    def time_per_cell(self) -> float:
        return self.time_per_step / self.total_cells

    @property
    def device_time_per_cell(self) -> float:
        return self.time_per_step / self.work


def predict_time(work: float, halo: float, params: PerfParams) -> float:
    return max(work * params.pi_inv, halo * params.beta_inv) + params.tau0


def classify_bound(work: float, halo: float, params: PerfParams) -> Bound:
    if halo == 0:
        return Bound.COMPUTE
    # I > pi/beta, with pi = 1/pi_inv and beta = 1/beta_inv
    intensity = work / halo
    return Bound.COMPUTE if intensity > params.beta_inv / params.pi_inv else Bound.COMMUNICATION


def _point(devices, p, work, halo, total, params) -> ScalingPoint:
    return ScalingPoint(
        devices=devices,
        p=Extent(p),
        work=work,
        halo=halo,
        total_cells=total,
        tau_w=work * params.pi_inv,
        tau_q=halo * params.beta_inv,
        time_per_step=predict_time(work, halo, params),
        bound=classify_bound(work, halo, params),
    )


def strong_scaling(
    n: Sequence[int],
    r: int,
    device_counts: Iterable[int],
    params: PerfParams = BENCHMARK_PARAMS,
    periodic: bool = True,
) -> tuple[list[ScalingPoint], list[str]]:
    """Model a fixed global grid over growing device counts.

    Each count uses its communication-optimal decomposition.  Counts that do
    not decompose ``n`` are skipped and reported in the warning list.
    """
    n = Extent(n)
    points, warnings = [], []
    for c in device_counts:
        try:
            sol = optimize_decomposition(n, c, r, "inter", periodic)
        except DecompositionError as exc:
            logger.info("skipping %d devices: %s", c, exc)
            warnings.append(f"{c}: {exc}")
            continue
        points.append(_point(c, sol.p, sol.cost.work, sol.cost.halo_volume, cell_count(n), params))
    return points, warnings


def weak_scaling(
    per_device: Sequence[int],
    r: int,
    device_counts: Iterable[int],
    params: PerfParams = BENCHMARK_PARAMS,
    periodic: bool = True,
) -> tuple[list[ScalingPoint], list[str]]:
    """Model a fixed per-device grid; the global grid grows with the device count.

    Devices are laid out with the Morton partition, so only power-of-two
    counts are accepted.
    """
    per_device = Extent(per_device)
    points, warnings = [], []
    for c in device_counts:
        try:
            p = partition_from_count(c, per_device.ndim)
        except ValueError as exc:
            logger.info("skipping %d devices: %s", c, exc)
            warnings.append(f"{c}: {exc}")
            continue
        n = Extent(ni * pi for ni, pi in zip(per_device, p))
        work = local_work(n, p)
        halo = halo_exchange_volume(n, p, r, periodic)
        points.append(_point(c, p, work, halo, cell_count(n), params))
    return points, warnings


def parallel_efficiency(points: Sequence[ScalingPoint], weak: bool = False) -> list[float]:
    """Efficiency of each point relative to the single-device baseline.

    Strong scaling: ``t(1) / (P t(P))``.  Weak scaling: ``t(1) / t(P)``.
    """
    base = [pt for pt in points if pt.devices == 1]
    if not base:
        raise ValueError("parallel efficiency needs a 1-device baseline point")
    t1 = base[0].time_per_step
    if weak:
        return [t1 / pt.time_per_step for pt in points]
    return [t1 / (pt.devices * pt.time_per_step) for pt in points]


CSV_COLUMNS = [
    "devices", "p1", "p2", "p3", "W", "Q", "tau_w_ns", "tau_q_ns",
    "time_per_step_ns", "time_per_cell_ns", "device_time_per_cell_ns", "bound", "efficiency",
]


def write_curve_csv(points: Sequence[ScalingPoint], fh, weak: bool = False, comment: str | None = None) -> None:
    if comment:
        fh.write(f"# {comment}\n")
    try:
        eff = parallel_efficiency(points, weak)
    except ValueError:
        eff = [float("nan")] * len(points)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for pt, e in zip(points, eff):
        p = list(pt.p) + [1] * (3 - len(pt.p))
        w.writerow([
            pt.devices, *p[:3], pt.work, pt.halo,
            f"{pt.tau_w * 1e9:.6g}", f"{pt.tau_q * 1e9:.6g}",
            f"{pt.time_per_step * 1e9:.6g}", f"{pt.time_per_cell * 1e9:.6g}",
            f"{pt.device_time_per_cell * 1e9:.6g}", pt.bound.value, f"{e:.6g}",
        ])
