"""Simulated multi-rank execution of the pipelined halo-exchange protocol.

Every rank owns one subgrid and runs the same program for each RK substep::

    pack -> post sends -> inner update -> wait-all -> unpack -> outer update -> barrier

A rank program is a generator that yields at every point where another rank
may run: a bare ``yield`` is a scheduling point, ``WaitAll`` blocks until the
listed messages have arrived and ``BARRIER`` blocks until every rank arrives.
The same program runs under a cooperative scheduler (round-robin or seeded
random interleaving, single thread) or with one thread per rank.

Messages travel through :class:`Network`, a set of reliable FIFO mailboxes
keyed by ``(destination, source, tag)``.  Self-messages on wrapped axes go
through the same mailboxes.
"""

from __future__ import annotations

import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .geometry import Extent, HaloSegment, cell_count, enumerate_halo_segments, segment_tag, subdomain_of
from .mapping import MappingScheme, RankTopology, build_topology
from .mhd import FieldState, RhsProvider, rk3_substep

SUBSTEPS = 3


class RuntimeProtocolError(RuntimeError):
    pass


class HazardError(RuntimeProtocolError):
    """The protocol ordering was violated (e.g. a halo read before its unpack)."""


class DeadlockError(RuntimeProtocolError):
    pass


@dataclass(frozen=True)
class Message:
    source: int
    tag: int
    payload: np.ndarray


@dataclass(frozen=True)
class WaitAll:
    keys: tuple[tuple[int, int], ...]  # (source, tag)


class _Barrier:
    def __repr__(self):
        return "BARRIER"


BARRIER = _Barrier()


class Network:
    """Reliable, ordered, tag-matched mailboxes shared by all ranks."""

    def __init__(self):
        self._boxes: dict[tuple[int, int, int], deque] = defaultdict(deque)
        self._cond = threading.Condition()
        self.sent = 0
        self.received = 0
        self.cells_sent = 0

    def send(self, dest: int, msg: Message) -> None:
        with self._cond:
            self._boxes[(dest, msg.source, msg.tag)].append(msg)
            self.sent += 1
            self.cells_sent += msg.payload[0].size
            self._cond.notify_all()

    def ready(self, dest: int, keys: Iterable[tuple[int, int]]) -> bool:
        with self._cond:
            return all(self._boxes.get((dest, s, t)) for s, t in keys)

    def missing(self, dest: int, keys: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
        with self._cond:
            return [(s, t) for s, t in keys if not self._boxes.get((dest, s, t))]

    def wait(self, dest: int, keys: Sequence[tuple[int, int]], timeout: float) -> None:
        with self._cond:
            ok = self._cond.wait_for(
                lambda: all(self._boxes.get((dest, s, t)) for s, t in keys), timeout
            )
        if not ok:
            miss = self.missing(dest, keys)
            raise DeadlockError(f"rank {dest} timed out waiting for (source, tag) {miss}")

    def receive(self, dest: int, source: int, tag: int) -> Message:
        with self._cond:
            box = self._boxes.get((dest, source, tag))
            if not box:
                raise HazardError(f"rank {dest} read tag {tag} from rank {source} before it arrived")
            self.received += 1
            return box.popleft()

    def pending(self) -> int:
        with self._cond:
            return sum(len(b) for b in self._boxes.values())


def inner_extent(n_local: Sequence[int], r: int) -> Extent:
    if any(n <= 2 * r for n in n_local):
        raise ValueError(f"subdomain {tuple(n_local)} has no inner segment for radius {r}")
    return Extent(n - 2 * r for n in n_local)


def inner_region(n_local: Sequence[int], r: int) -> tuple[slice, ...]:
    inner_extent(n_local, r)
    return tuple(slice(2 * r, n) for n in n_local)


def outer_regions(n_local: Sequence[int], r: int) -> list[tuple[slice, ...]]:
    """Disjoint boxes covering the computational domain minus the inner segment."""
    inner_extent(n_local, r)
    full = [slice(r, r + n) for n in n_local]
    core = [slice(2 * r, n) for n in n_local]
    boxes = []
    for axis in range(3):
        for lo, hi in ((r, 2 * r), (n_local[axis], n_local[axis] + r)):
            box = []
            for a in range(3):
                if a < axis:
                    box.append(core[a])
                elif a == axis:
                    box.append(slice(lo, hi))
                else:
                    box.append(full[a])
            boxes.append(tuple(box))
    return boxes


@dataclass
class SegmentLink:
    """A halo segment together with its peers and packing geometry."""

    segment: HaloSegment
    source: int  # rank whose cells fill this segment
    dest: int  # rank that receives our packed copy of the mapped region
    pack_slices: tuple[slice, ...]

    @property
    def tag(self) -> int:
        return self.segment.tag


@dataclass
class Instrumentation:
    """Per-rank protocol state for the current substep plus run-wide counters."""

    substep: int = -1
    packed: set = field(default_factory=set)
    sent: set = field(default_factory=set)
    received: set = field(default_factory=set)
    unpacked: set = field(default_factory=set)
    inner_done: bool = False
    outer_done: bool = False
    messages_sent: int = 0
    messages_received: int = 0
    cells_sent: int = 0
    cells_received: int = 0
    inter_node_cells: int = 0
    intra_node_cells: int = 0
    hazards_checked: int = 0

    def reset(self, substep: int) -> None:
        self.substep = substep
        self.packed.clear()
        self.sent.clear()
        self.received.clear()
        self.unpacked.clear()
        self.inner_done = False
        self.outer_done = False


class RankContext:
    """One simulated rank: its subgrid, segment buffers and protocol bookkeeping."""

    def __init__(
        self,
        rank: int,
        topology: RankTopology,
        state: FieldState,
        include_corners: bool = False,
        poison_halo: bool = False,
    ):
        self.rank = rank
        self.topology = topology
        self.coord = topology.rank_to_coord[rank]
        self.state = state
        self.r = state.radius
        self.n_local = Extent(state.extent)
        self.include_corners = include_corners
        self.poison_halo = poison_halo
        self.links: list[SegmentLink] = []
        for seg in enumerate_halo_segments(self.n_local, self.r, include_corners):
            mapped, _ = segment_tag(seg.first, self.n_local, self.r)
            pack = tuple(slice(m, m + e) for m, e in zip(mapped, seg.extent))
            self.links.append(SegmentLink(
                seg,
                source=topology.neighbor(rank, seg.neighbor_offset),
                dest=topology.neighbor(rank, tuple(-o for o in seg.neighbor_offset)),
                pack_slices=pack,
            ))
        nf = state.num_fields
        self.send_buffers = {lk.tag: np.empty((nf, *lk.segment.extent)) for lk in self.links}
        self.recv_buffers = {lk.tag: np.empty((nf, *lk.segment.extent)) for lk in self.links}
        self.w = np.zeros((nf, *self.n_local))
        self.f_next = np.empty((nf, *self.n_local))
        self.inner = inner_region(self.n_local, self.r)
        self.outer = outer_regions(self.n_local, self.r)
        self.instr = Instrumentation()
        self.timings: list[tuple[int, int, str, int]] = []
        self._step = 0

    # bookkeeping -----------------------------------------------------------

    def _time(self, phase: str, t0: int) -> None:
        self.timings.append((self.rank, self._step * SUBSTEPS + self.instr.substep, phase, time.perf_counter_ns() - t0))

    def _hazard(self, ok: bool, msg: str) -> None:
        self.instr.hazards_checked += 1
        if not ok:
            raise HazardError(f"rank {self.rank}, substep {self.instr.substep}: {msg}")

    def expected_keys(self) -> tuple[tuple[int, int], ...]:
        return tuple((lk.source, lk.tag) for lk in self.links)

    def begin_substep(self, substep: int) -> None:
        self.instr.reset(substep)
        if self.poison_halo:
            comp = self.state.interior.copy()
            self.state.data[...] = np.nan
            self.state.data[(slice(None),) + self.state.region] = comp

    # protocol phases -------------------------------------------------------

    def pack(self, link: SegmentLink) -> np.ndarray:
        t0 = time.perf_counter_ns()
        buf = self.send_buffers[link.tag]
        buf[...] = self.state.data[(slice(None),) + link.pack_slices]
        self.instr.packed.add(link.tag)
        self._time("pack", t0)
        return buf

    def post_send(self, link: SegmentLink, net: Network) -> None:
        t0 = time.perf_counter_ns()
        self._hazard(link.tag in self.instr.packed, f"send of tag {link.tag} before it was packed")
        payload = self.send_buffers[link.tag].copy()
        net.send(link.dest, Message(self.rank, link.tag, payload))
        self.instr.sent.add(link.tag)
        self.instr.messages_sent += 1
        cells = link.segment.cells
        self.instr.cells_sent += cells
        if self.topology.node_of(link.dest) == self.topology.node_of(self.rank):
            self.instr.intra_node_cells += cells
        else:
            self.instr.inter_node_cells += cells
        self._time("send", t0)

    def receive(self, link: SegmentLink, net: Network) -> None:
        t0 = time.perf_counter_ns()
        msg = net.receive(self.rank, link.source, link.tag)
        buf = self.recv_buffers[link.tag]
        if msg.payload.shape != buf.shape:
            raise RuntimeProtocolError(
                f"rank {self.rank}: payload {msg.payload.shape} does not fit segment tag {link.tag} {buf.shape}"
            )
        buf[...] = msg.payload
        self.instr.received.add(link.tag)
        self.instr.messages_received += 1
        self.instr.cells_received += link.segment.cells
        self._time("receive", t0)

    def unpack(self, link: SegmentLink) -> None:
        t0 = time.perf_counter_ns()
        self._hazard(link.tag in self.instr.received, f"unpack of tag {link.tag} before its message arrived")
        self.state.data[(slice(None),) + link.segment.slices()] = self.recv_buffers[link.tag]
        self.instr.unpacked.add(link.tag)
        self._time("unpack", t0)

    def _update(self, region, substep: int, dt: float, rhs: RhsProvider) -> None:
        local = tuple(slice(s.start - self.r, s.stop - self.r) for s in region)
        full = (slice(None),) + region
        loc = (slice(None),) + local
        d = rhs(self.state, region)
        f_new, w_new = rk3_substep(self.state.data[full], self.w[loc], d, substep, dt)
        self.f_next[loc] = f_new
        self.w[loc] = w_new

    def inner_update(self, substep: int, dt: float, rhs: RhsProvider) -> None:
        t0 = time.perf_counter_ns()
        self._hazard(
            len(self.instr.packed) == len(self.links),
            "inner segment update started before packing completed",
        )
        self._update(self.inner, substep, dt, rhs)
        self.instr.inner_done = True
        self._time("inner", t0)

    def outer_update(self, substep: int, dt: float, rhs: RhsProvider) -> None:
        t0 = time.perf_counter_ns()
        missing = [lk.tag for lk in self.links if lk.tag not in self.instr.unpacked]
        self._hazard(not missing, f"outer segment update read halo tags {missing} before unpacking")
        for region in self.outer:
            self._update(region, substep, dt, rhs)
        self.instr.outer_done = True
        self._time("outer", t0)

    def commit(self) -> None:
        self._hazard(self.instr.inner_done and self.instr.outer_done, "commit before all segments were updated")
        self.state.data[(slice(None),) + self.state.region] = self.f_next
        if self.instr.substep == SUBSTEPS - 1:
            self._step += 1
            self.w[...] = 0.0


# rank programs -------------------------------------------------------------

def step_program(ctx: RankContext, net: Network, dt: float, rhs: RhsProvider) -> Iterator:
    """One integration step (three substeps) of the pipelined protocol."""
    for i in range(SUBSTEPS):
        ctx.begin_substep(i)
        for lk in ctx.links:
            ctx.pack(lk)
            yield
        for lk in ctx.links:
            ctx.post_send(lk, net)
            yield
        ctx.inner_update(i, dt, rhs)
        yield
        yield WaitAll(ctx.expected_keys())
        for lk in ctx.links:
            ctx.receive(lk, net)
            ctx.unpack(lk)
            yield
        ctx.outer_update(i, dt, rhs)
        yield BARRIER
        ctx.commit()


def exchange_program(ctx: RankContext, net: Network) -> Iterator:
    """Halo exchange only: pack, send, wait, unpack."""
    ctx.begin_substep(0)
    for lk in ctx.links:
        ctx.pack(lk)
        yield
    for lk in ctx.links:
        ctx.post_send(lk, net)
        yield
    yield WaitAll(ctx.expected_keys())
    for lk in ctx.links:
        ctx.receive(lk, net)
        ctx.unpack(lk)
        yield
    yield BARRIER


# schedulers ----------------------------------------------------------------

def run_cooperative(
    programs: Sequence[Iterator], net: Network, order: str = "roundrobin", seed: int | None = None
) -> None:
    """Drive rank programs in one thread.

    ``order="roundrobin"`` steps every runnable rank in rank order;
    ``order="random"`` picks the next runnable rank from a seeded RNG.
    """
    if order not in ("roundrobin", "random"):
        raise ValueError(f"unknown scheduling order {order!r}")
    rng = random.Random(seed)
    n = len(programs)
    pending: list = [None] * n
    done = [False] * n
    at_barrier: set[int] = set()

    def runnable(k: int) -> bool:
        op = pending[k]
        if done[k]:
            return False
        if op is None:
            return True
        if isinstance(op, WaitAll):
            return net.ready(k, op.keys)
        return False  # barrier, released below

    def advance(k: int) -> None:
        try:
            op = next(programs[k])
        except StopIteration:
            done[k] = True
            pending[k] = None
            return
        pending[k] = op
        if op is BARRIER:
            at_barrier.add(k)

    while not all(done):
        live = [k for k in range(n) if not done[k]]
        if at_barrier and at_barrier >= set(live):
            for k in at_barrier:
                pending[k] = None
            at_barrier.clear()
        ready = [k for k in live if runnable(k)]
        if not ready:
            blocked = {k: net.missing(k, pending[k].keys) for k in live if isinstance(pending[k], WaitAll)}
            raise DeadlockError(f"no rank can progress; missing (source, tag) per rank: {blocked}")
        if order == "random":
            advance(rng.choice(ready))
        else:
            for k in ready:
                if runnable(k):
                    advance(k)


def run_threaded(programs: Sequence[Iterator], net: Network, timeout: float = 30.0) -> None:
    """Drive each rank program on its own thread with real blocking waits."""
    barrier = threading.Barrier(len(programs), timeout=timeout)
    errors: list[BaseException] = []

    def drive(k: int) -> None:
        try:
            for op in programs[k]:
                if isinstance(op, WaitAll):
                    net.wait(k, op.keys, timeout)
                elif op is BARRIER:
                    barrier.wait()
        except threading.BrokenBarrierError:
            if not errors:
                errors.append(DeadlockError(f"rank {k}: barrier broken or timed out"))
        except BaseException as exc:  # propagated to the caller below
            errors.append(exc)
            barrier.abort()

    threads = [threading.Thread(target=drive, args=(k,), name=f"rank-{k}") for k in range(len(programs))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        real = [e for e in errors if not isinstance(e, DeadlockError)]
        raise (real or errors)[0]


def run_programs(programs, net: Network, schedule: str = "roundrobin", seed: int | None = None, timeout: float = 30.0):
    if schedule == "threads":
        run_threaded(programs, net, timeout)
    else:
        run_cooperative(programs, net, schedule, seed)


# cluster of ranks ------------------------------------------------------------

class Cluster:
    """All ranks of one simulated run over a global periodic grid."""

    def __init__(
        self,
        n: Sequence[int],
        device_grid: Sequence[int],
        radius: int,
        ranks_per_node: int | None = None,
        scheme: MappingScheme | str = MappingScheme.ZORDER,
        include_corners: bool = False,
        spacing=None,
        poison_halo: bool = False,
    ):
        self.n = Extent(n)
        self.device_grid = Extent(device_grid)
        self.radius = radius
        self.n_local = subdomain_of(self.n, self.device_grid)
        inner_extent(self.n_local, radius)
        total = cell_count(self.device_grid)
        self.topology = build_topology(self.device_grid, ranks_per_node or total, scheme)
        self.include_corners = include_corners
        self.spacing = spacing
        self.poison_halo = poison_halo
        self.contexts: list[RankContext] = []
        self.net = Network()

    @property
    def size(self) -> int:
        return self.topology.total_ranks

    def _block(self, coord) -> tuple[slice, ...]:
        return tuple(slice(c * m, (c + 1) * m) for c, m in zip(coord, self.n_local))

    def scatter(self, state: FieldState) -> None:
        if tuple(state.extent) != tuple(self.n):
            raise ValueError(f"state extent {state.extent} does not match cluster grid {tuple(self.n)}")
        interior = state.interior
        self.spacing = state.spacing
        self.contexts = []
        for rank, coord in enumerate(self.topology.rank_to_coord):
            block = np.ascontiguousarray(interior[(slice(None),) + self._block(coord)])
            local = FieldState.from_interior(block, self.radius, state.spacing)
            self.contexts.append(RankContext(rank, self.topology, local, self.include_corners, self.poison_halo))

    def gather(self) -> FieldState:
        nf = self.contexts[0].state.num_fields
        interior = np.empty((nf, *self.n))
        for ctx in self.contexts:
            interior[(slice(None),) + self._block(ctx.coord)] = ctx.state.interior
        return FieldState.from_interior(interior, self.radius, self.spacing)

    def halo_exchange(self, schedule: str = "roundrobin", seed: int | None = None) -> None:
        run_programs([exchange_program(c, self.net) for c in self.contexts], self.net, schedule, seed)

    def integration_step(self, dt: float, rhs: RhsProvider, schedule: str = "roundrobin", seed: int | None = None) -> None:
        run_programs([step_program(c, self.net, dt, rhs) for c in self.contexts], self.net, schedule, seed)
        if self.net.pending():
            raise RuntimeProtocolError(f"{self.net.pending()} undelivered messages after the step")

    def run(self, state: FieldState, dt: float, steps: int, rhs: RhsProvider, schedule: str = "roundrobin",
            seed: int | None = None) -> FieldState:
        self.scatter(state)
        for k in range(steps):
            self.integration_step(dt, rhs, schedule, None if seed is None else seed + k)
        return self.gather()

    def timings(self) -> list[tuple[int, int, str, int]]:
        return [t for c in self.contexts for t in c.timings]


def integration_step(
    cluster: Cluster, dt: float, rhs: RhsProvider, schedule: str = "roundrobin", seed: int | None = None
) -> list[FieldState]:
    cluster.integration_step(dt, rhs, schedule, seed)
    return [c.state for c in cluster.contexts]


def zero_rhs(state: FieldState, region) -> np.ndarray:
    return np.zeros((state.num_fields, *(s.stop - s.start for s in region)))


def diffusion_rhs(coefficient: float = 0.1, order: int = 2) -> RhsProvider:
    """A cheap linear kernel (Laplacian per field) for protocol tests."""
    from .stencil import Stencil, laplacian

    cache: dict = {}

    def rhs(state: FieldState, region) -> np.ndarray:
        st = cache.get(state.spacing)
        if st is None:
            st = cache[state.spacing] = Stencil(order, state.spacing)
        return np.stack([coefficient * laplacian(state.data[k], st, region) for k in range(state.num_fields)])

    return rhs


def write_timings_csv(rows: Iterable[tuple[int, int, str, int]], fh, comment: str | None = None) -> None:
    import csv

    if comment:
        fh.write(f"# {comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["rank", "substep", "phase", "nanoseconds"])
    for row in rows:
        w.writerow(row)


def pack_segment(state: FieldState, segment: HaloSegment) -> np.ndarray:
    """Copy the cells a neighbor needs for ``segment`` into a new contiguous buffer."""
    n_local = state.extent
    mapped, _ = segment_tag(segment.first, n_local, state.radius)
    src = tuple(slice(m, m + e) for m, e in zip(mapped, segment.extent))
    return np.ascontiguousarray(state.data[(slice(None),) + src])


def unpack_segment(state: FieldState, segment: HaloSegment, payload: np.ndarray) -> None:
    expected = (state.num_fields, *segment.extent)
    if payload.shape != expected:
        if payload.size != int(np.prod(expected)):
            raise ValueError(f"payload of {payload.size} values does not fit segment {expected}")
        payload = payload.reshape(expected)
    state.data[(slice(None),) + segment.slices()] = payload

