"""Controller synthesis by state-space bisection and pattern search.

Given a problem (recurrence box R, safety box S, optional obstacle B,
pattern length bound K, bisection depth bound D), the synthesizer covers R
with cells (V_i, pi_i) such that applying pattern pi_i from anywhere in V_i
certifiably lands in the target box (R itself for recurrence, another box
for reach tasks) while the whole validated tube stays inside S and never
touches B.  Every test is on validated enclosures, so a returned
decomposition is a machine-checked certificate; ``verify_decomposition``
re-derives it independently.

Two pattern searches are provided:

* ``find_pattern``: exhaustive enumeration in (length, lexicographic)
  order, recomputing the full tube per candidate -- simple, and kept as
  the reference for benchmarks and cross-checking;
* ``find_pattern2``: breadth-first search over stored (initial box,
  current box, pattern) triplets; prefix enclosures are reused and a
  branch is cut as soon as its one-step tube leaves S or touches B.
  Cutting is sound because a pattern's tube extends its prefix's tube.

Both return the same first validated pattern under the FIFO frontier and
ascending mode order, so results are reproducible across runs and worker
counts.
"""

from __future__ import annotations

import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import (
    IntegrationFailure,
    InvalidProblem,
    SynthesisFailure,
    SynthesisTimeout,
)
from .integrate import (
    DEFAULT_OPTIONS,
    IntegratorOptions,
    TubeResult,
    integrate_mode,
    tube,
)
from .intervals import Box, bisect
from .model import SwitchedSystem

Pattern = tuple[int, ...]

DiagFn = Callable[[str], None]


@dataclass(frozen=True)
class SynthesisProblem:
    """Boxes and bounds of one synthesis task.

    ``target`` defaults to the recurrence box (tau-stability); pointing it
    at another box turns the task into guaranteed reachability.
    """

    recurrence: Box                 # R: box to be covered
    safe: Box                       # S: tubes must stay inside
    target: Box | None = None       # Post goal; None means recurrence
    obstacle: Box | None = None     # B: tubes must avoid
    max_pattern_len: int = 1        # K
    max_depth: int = 0              # D

    def __post_init__(self):
        if self.max_pattern_len < 1:
            raise InvalidProblem("max pattern length K must be >= 1")
        if self.max_depth < 0:
            raise InvalidProblem("max bisection depth D must be >= 0")
        if not self.recurrence.subset_of(self.safe):
            raise InvalidProblem("R must be contained in the safety box S")
        if self.target is not None and not self.target.subset_of(self.safe):
            raise InvalidProblem("target must be contained in the safety box S")
        if self.obstacle is not None:
            if not self.obstacle.subset_of(self.safe):
                raise InvalidProblem("obstacle B must be contained in S")
            if self.recurrence.intersects(self.obstacle):
                raise InvalidProblem("R must not intersect the obstacle B")

    @property
    def goal(self) -> Box:
        return self.target if self.target is not None else self.recurrence


@dataclass(frozen=True)
class SearchNode:
    """Triplet stored by the pruned search: initial box, its image under
    the pattern so far, and that pattern."""

    y_init: Box
    y_current: Box
    pattern: Pattern


@dataclass
class SearchStats:
    expansions: int = 0         # candidate patterns whose extension was tested
    integrations: int = 0       # one-mode tau integrations performed
    cuts: int = 0
    validations: int = 0
    wall_time: float = 0.0

    def merge(self, other: "SearchStats") -> None:
        self.expansions += other.expansions
        self.integrations += other.integrations
        self.cuts += other.cuts
        self.validations += other.validations


@dataclass(frozen=True)
class Decomposition:
    """Cover of R by certified (cell, pattern) pairs."""

    cells: tuple[tuple[Box, Pattern], ...]
    problem: SynthesisProblem


def _fmt_pattern(pattern: Pattern) -> str:
    return ".".join(str(m) for m in pattern) if pattern else "-"


def _segments_admissible(
    tr: TubeResult, prob: SynthesisProblem
) -> bool:
    for _, box in tr.segments:
        if not box.subset_of(prob.safe):
            return False
        if prob.obstacle is not None and box.intersects(prob.obstacle):
            return False
    return True


def _check_deadline(deadline: float | None, stats: SearchStats) -> None:
    if deadline is not None and time.time() > deadline:
        raise SynthesisTimeout("pattern search exceeded its time budget", stats)


def _patterns_of_length(n_modes: int, length: int) -> Iterable[Pattern]:
    # lexicographic enumeration with ascending mode indices
    pattern = [1] * length
    while True:
        yield tuple(pattern)
        k = length - 1
        while k >= 0 and pattern[k] == n_modes:
            pattern[k] = 1
            k -= 1
        if k < 0:
            return
        pattern[k] += 1


def find_pattern(
    sys: SwitchedSystem,
    w: Box,
    prob: SynthesisProblem,
    opts: IntegratorOptions = DEFAULT_OPTIONS,
    stats: SearchStats | None = None,
    diag: DiagFn | None = None,
    cell_id: str = "root",
    deadline: float | None = None,
) -> Pattern | None:
    """Exhaustive search: first valid pattern in (length, lex) order.

    Every candidate is integrated over its full length before testing, as
    in the naive formulation; failures to integrate count as rejection.
    """
    stats = stats if stats is not None else SearchStats()
    goal = prob.goal
    for length in range(1, prob.max_pattern_len + 1):
        for pattern in _patterns_of_length(sys.n_modes, length):
            _check_deadline(deadline, stats)
            stats.expansions += 1
            if diag:
                diag(f"EXPAND,{_fmt_pattern(pattern)},{cell_id}")
            try:
                stats.integrations += length
                tr = tube(sys, w, pattern, opts)
            except IntegrationFailure:
                stats.cuts += 1
                if diag:
                    diag(f"CUT,{_fmt_pattern(pattern)},{cell_id}")
                continue
            if (
                tr.endpoint.subset_of(goal)
                and _segments_admissible(tr, prob)
            ):
                stats.validations += 1
                if diag:
                    diag(f"VALIDATE,{_fmt_pattern(pattern)},{cell_id}")
                return pattern
            stats.cuts += 1
            if diag:
                diag(f"CUT,{_fmt_pattern(pattern)},{cell_id}")
    return None


def find_pattern2(
    sys: SwitchedSystem,
    w: Box,
    prob: SynthesisProblem,
    opts: IntegratorOptions = DEFAULT_OPTIONS,
    stats: SearchStats | None = None,
    diag: DiagFn | None = None,
    cell_id: str = "root",
    deadline: float | None = None,
) -> Pattern | None:
    """Pruned breadth-first search reusing stored prefix images.

    Returns the first validated pattern under FIFO frontier processing with
    modes tried in ascending index order (the same pattern ``find_pattern``
    returns).  A branch whose one-step tube leaves S or touches B is cut;
    an integration failure counts as a cut (cannot certify).  Validation is
    terminal for its branch: a validated pattern is never extended.
    """
    stats = stats if stats is not None else SearchStats()
    goal = prob.goal
    frontier: deque[SearchNode] = deque()
    frontier.append(SearchNode(w, w, ()))
    while frontier:
        node = frontier.popleft()
        for mode in range(1, sys.n_modes + 1):
            _check_deadline(deadline, stats)
            pattern = node.pattern + (mode,)
            stats.expansions += 1
            if diag:
                diag(f"EXPAND,{_fmt_pattern(pattern)},{cell_id}")
            try:
                stats.integrations += 1
                step = integrate_mode(sys, mode, node.y_current, sys.tau, opts)
            except IntegrationFailure:
                stats.cuts += 1
                if diag:
                    diag(f"CUT,{_fmt_pattern(pattern)},{cell_id}")
                continue
            if not _segments_admissible(step, prob):
                stats.cuts += 1
                if diag:
                    diag(f"CUT,{_fmt_pattern(pattern)},{cell_id}")
                continue
            if step.endpoint.subset_of(goal):
                stats.validations += 1
                if diag:
                    diag(f"VALIDATE,{_fmt_pattern(pattern)},{cell_id}")
                return pattern
            if len(pattern) < prob.max_pattern_len:
                frontier.append(SearchNode(node.y_init, step.endpoint, pattern))
    return None


_SEARCHERS = {"fp": find_pattern, "fp2": find_pattern2}


# ---------------------------------------------------------------------------
# decomposition by bisection
# ---------------------------------------------------------------------------


def _cell_id(path: tuple[int, ...]) -> str:
    return "root" if not path else ".".join(str(p) for p in path)


def _solve_box(args) -> tuple[tuple[int, ...], Pattern | None, SearchStats, list[str], bool]:
    sys, prob, opts, algo, path, box, deadline = args
    stats = SearchStats()
    lines: list[str] = []
    search = _SEARCHERS[algo]
    timed_out = False
    try:
        pattern = search(
            sys, box, prob, opts,
            stats=stats,
            diag=lines.append,
            cell_id=_cell_id(path),
            deadline=deadline,
        )
    except SynthesisTimeout:
        pattern = None
        timed_out = True
    return path, pattern, stats, lines, timed_out


def synthesize(
    sys: SwitchedSystem,
    prob: SynthesisProblem,
    opts: IntegratorOptions = DEFAULT_OPTIONS,
    algo: str = "fp2",
    jobs: int = 1,
    diag: DiagFn | None = None,
    timeout: float | None = None,
) -> tuple[Decomposition, SearchStats]:
    """Cover R with certified cells, bisecting on search failure.

    Sibling sub-boxes are independent and may be solved by worker
    processes (``jobs``); results are merged by bisection path, so the
    output is identical for any worker count.

    Raises ``SynthesisFailure`` with the witness cell when some sub-box
    cannot be controlled at depth 0, and ``SynthesisTimeout`` when the
    wall-clock budget runs out.
    """
    if algo not in _SEARCHERS:
        raise ValueError(f"unknown pattern search algorithm {algo!r}")
    if sys.n != prob.recurrence.n:
        raise InvalidProblem(
            f"problem boxes have dimension {prob.recurrence.n}, model has {sys.n}"
        )
    t0 = time.perf_counter()
    deadline = time.time() + timeout if timeout is not None else None
    total = SearchStats()
    cells: dict[tuple[int, ...], tuple[Box, Pattern]] = {}
    frontier: list[tuple[tuple[int, ...], Box, int]] = [
        ((), prob.recurrence, prob.max_depth)
    ]
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        while frontier:
            tasks = [
                (sys, prob, opts, algo, path, box, deadline)
                for path, box, _ in frontier
            ]
            if pool is not None:
                results = list(pool.map(_solve_box, tasks))
            else:
                results = [_solve_box(t) for t in tasks]
            next_frontier: list[tuple[tuple[int, ...], Box, int]] = []
            for (path, box, depth), (rpath, pattern, stats, lines, timed_out) in zip(
                frontier, results
            ):
                assert rpath == path
                total.merge(stats)
                if diag:
                    for line in lines:
                        diag(line)
                if timed_out:
                    total.wall_time = time.perf_counter() - t0
                    raise SynthesisTimeout(
                        "synthesis exceeded its time budget", total
                    )
                if pattern is not None:
                    cells[path] = (box, pattern)
                elif depth == 0:
                    total.wall_time = time.perf_counter() - t0
                    raise SynthesisFailure(
                        box, f"no pattern of length <= {prob.max_pattern_len} "
                             f"controls cell {box} at depth 0"
                    )
                else:
                    left, right = bisect(box)
                    next_frontier.append((path + (0,), left, depth - 1))
                    next_frontier.append((path + (1,), right, depth - 1))
            frontier = next_frontier
    finally:
        if pool is not None:
            pool.shutdown()
    total.wall_time = time.perf_counter() - t0
    ordered = tuple(cells[p] for p in sorted(cells))
    return Decomposition(cells=ordered, problem=prob), total


# ---------------------------------------------------------------------------
# independent certificate verification
# ---------------------------------------------------------------------------


@dataclass
class CellReport:
    index: int
    cell: Box
    pattern: Pattern
    post_in_target: bool
    tube_in_safe: bool
    tube_avoids_obstacle: bool
    error: str | None = None

    @property
    def ok(self) -> bool:
        return (
            self.error is None
            and self.post_in_target
            and self.tube_in_safe
            and self.tube_avoids_obstacle
        )


@dataclass
class VerificationReport:
    cells: list[CellReport] = field(default_factory=list)
    cover_ok: bool = False

    @property
    def all_ok(self) -> bool:
        return self.cover_ok and all(c.ok for c in self.cells)


def _cover_exact(cells: Sequence[Box], region: Box) -> bool:
    """Do the cells cover exactly ``region``?

    All cells must sit inside the region and every elementary grid cell of
    the coordinate arrangement must contain the centre of some cell.
    Overlaps are fine; only the cover matters.
    """
    if not cells:
        return region.max_width() == 0.0
    n = region.n
    for c in cells:
        if not c.subset_of(region):
            return False
    axes: list[list[float]] = []
    for k in range(n):
        lo, hi = region[k].lo, region[k].hi
        coords = {lo, hi}
        for c in cells:
            for v in (c[k].lo, c[k].hi):
                if lo < v < hi:
                    coords.add(v)
        axes.append(sorted(coords))
    # iterate elementary grid cells via centre points
    def rec(k: int, point: list[float]) -> bool:
        if k == n:
            return any(c.contains_point(point) for c in cells)
        ax = axes[k]
        if len(ax) == 1:        # degenerate dimension
            point.append(ax[0])
            ok = rec(k + 1, point)
            point.pop()
            return ok
        for a, b in zip(ax, ax[1:]):
            point.append(0.5 * (a + b))
            ok = rec(k + 1, point)
            point.pop()
            if not ok:
                return False
        return True

    return rec(0, [])


def verify_decomposition(
    sys: SwitchedSystem,
    dec: Decomposition,
    opts: IntegratorOptions = DEFAULT_OPTIONS,
) -> VerificationReport:
    """Recompute every cell's tube and re-check the certificate conditions.

    Never raises: integration problems become failed report entries.
    """
    prob = dec.problem
    goal = prob.goal
    report = VerificationReport()
    for index, (cell, pattern) in enumerate(dec.cells):
        try:
            tr = tube(sys, cell, pattern, opts)
        except Exception as exc:  # noqa: BLE001 - any failure fails the cell
            report.cells.append(
                CellReport(
                    index=index,
                    cell=cell,
                    pattern=pattern,
                    post_in_target=False,
                    tube_in_safe=False,
                    tube_avoids_obstacle=False,
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
            continue
        in_safe = all(box.subset_of(prob.safe) for _, box in tr.segments)
        avoids = prob.obstacle is None or not any(
            box.intersects(prob.obstacle) for _, box in tr.segments
        )
        report.cells.append(
            CellReport(
                index=index,
                cell=cell,
                pattern=pattern,
                post_in_target=tr.endpoint.subset_of(goal),
                tube_in_safe=in_safe,
                tube_avoids_obstacle=avoids,
            )
        )
    report.cover_ok = _cover_exact([c for c, _ in dec.cells], prob.recurrence)
    return report
