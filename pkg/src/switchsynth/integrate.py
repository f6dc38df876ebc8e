"""Guaranteed integration of one switching mode and of full mode patterns.

A validated step at size h produces two enclosures:

* an *a priori* box containing every solution over the whole step interval,
  certified with the Picard operator  x0 + [0,h] * f(box, [d]) <= box  and
  refined by re-applying the operator;
* a tight endpoint box: the Runge-Kutta update evaluated in interval
  arithmetic (natural extension intersected with a mean-value extension
  around the box midpoint) plus the local truncation error

      h^(p+1)/(p+1)! * ( f^(p) over the a priori box  -  phi^(p+1) ),

  where f^(p) is the p-th total time derivative of the vector field along
  the flow (Taylor coefficients of the solution series) and phi(t) is the
  RK update viewed as a function of the step size, differentiated p+1 times
  via Taylor series of the stage recurrence over the interval [0, h].

Everything is deterministic: identical inputs give bit-identical results.
The disturbance is re-widened to its full box at every substep (constant-
per-substep semantics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import (
    DivisionByZeroInterval,
    DomainError,
    EnclosureFailure,
    IntegrationFailure,
    StepTooWide,
)
from .expr import SeriesState, Tape, solution_series, tape_eval
from .intervals import (
    Box,
    add_up,
    div_down,
    div_up,
    i_add,
    i_div,
    i_meet,
    i_mul,
    i_sub,
    mul_up,
    sub_down,
    sub_up,
)
from .model import SwitchedSystem, mode_jacobian_tape, mode_tape

RawVec = list  # list[tuple[float, float]]


# ---------------------------------------------------------------------------
# Butcher schemes (coefficients stored as enclosing intervals)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ButcherScheme:
    """Explicit Runge-Kutta tableau; inexact rationals kept as 1-ulp
    intervals so the exact-coefficient method is always enclosed."""

    name: str
    s: int
    a: tuple[tuple[tuple[float, float], ...], ...]
    b: tuple[tuple[float, float], ...]
    c: tuple[tuple[float, float], ...]
    p: int


def _third() -> tuple[float, float]:
    return div_down(1.0, 3.0), div_up(1.0, 3.0)


def _sixth() -> tuple[float, float]:
    return div_down(1.0, 6.0), div_up(1.0, 6.0)


EULER = ButcherScheme(
    name="euler", s=1, a=((),), b=((1.0, 1.0),), c=((0.0, 0.0),), p=1
)

HEUN = ButcherScheme(
    name="heun",
    s=2,
    a=((), ((1.0, 1.0),)),
    b=((0.5, 0.5), (0.5, 0.5)),
    c=((0.0, 0.0), (1.0, 1.0)),
    p=2,
)

RK4 = ButcherScheme(
    name="rk4",
    s=4,
    a=(
        (),
        ((0.5, 0.5),),
        ((0.0, 0.0), (0.5, 0.5)),
        ((0.0, 0.0), (0.0, 0.0), (1.0, 1.0)),
    ),
    b=(_sixth(), _third(), _third(), _sixth()),
    c=((0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0)),
    p=4,
)

SCHEMES = {"euler": EULER, "heun": HEUN, "rk4": RK4}


@dataclass(frozen=True)
class IntegratorOptions:
    """Step-control knobs; defaults sized for the bundled case studies."""

    scheme: str = "rk4"
    lte_tol: float = 1e-6          # per-dimension LTE width triggering halving
    h_min_shift: int = 10          # h_min = tau / 2**h_min_shift
    h_max_factor: float = 1.0      # step cap as a fraction of tau
    max_inflations: int = 8
    inflation: float = 1.1         # candidate width multiplier per retry
    inflation_pad: float = 1e-10
    seed_widen: float = 0.1        # initial candidate: width * (1 + this)

    def butcher(self) -> ButcherScheme:
        try:
            return SCHEMES[self.scheme]
        except KeyError:
            raise ValueError(f"unknown scheme {self.scheme!r}") from None


DEFAULT_OPTIONS = IntegratorOptions()


@dataclass(frozen=True)
class StepResult:
    x_next: Box
    apriori: Box
    h: float
    lte: Box


@dataclass(frozen=True)
class TubeResult:
    """Boxes covering all trajectories, tiling the integration span."""

    segments: tuple[tuple[tuple[float, float], Box], ...]
    endpoint: Box

    def hull(self) -> Box:
        acc = self.segments[0][1]
        for _, box in self.segments[1:]:
            acc = acc.hull(box)
        return acc


def tube_to_csv(t: TubeResult) -> str:
    lines = []
    for (t0, t1), box in t.segments:
        cells = [repr(t0), repr(t1)]
        for iv in box.dims:
            cells.append(repr(iv.lo))
            cells.append(repr(iv.hi))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# raw vector helpers
# ---------------------------------------------------------------------------


def _vec_add(a: RawVec, b: RawVec) -> RawVec:
    return [i_add(x[0], x[1], y[0], y[1]) for x, y in zip(a, b)]


def _vec_scale(coef: tuple[float, float], a: RawVec) -> RawVec:
    return [i_mul(coef[0], coef[1], x[0], x[1]) for x in a]


def _vec_in(a: RawVec, b: RawVec) -> bool:
    return all(y[0] <= x[0] and x[1] <= y[1] for x, y in zip(a, b))


def _vec_meet(a: RawVec, b: RawVec) -> RawVec:
    return [i_meet(x[0], x[1], y[0], y[1]) for x, y in zip(a, b)]


def _widen(v: RawVec, rel: float, pad: float) -> RawVec:
    out = []
    for lo, hi in v:
        slack = add_up(mul_up(rel, sub_up(hi, lo)), pad)
        out.append((sub_down(lo, slack), add_up(hi, slack)))
    return out


# ---------------------------------------------------------------------------
# Picard-Lindeloef a priori enclosure
# ---------------------------------------------------------------------------


def _picard_image(tape: Tape, x0: RawVec, d: RawVec, h: float, cand: RawVec) -> RawVec:
    f = tape_eval(tape, cand, d)
    return _vec_add(x0, _vec_scale((0.0, h), f))


def _picard_raw(
    tape: Tape, x0: RawVec, d: RawVec, h: float, opts: IntegratorOptions
) -> RawVec | None:
    cand = _widen(x0, 0.5 * opts.seed_widen, opts.inflation_pad)
    for _ in range(opts.max_inflations):
        try:
            image = _picard_image(tape, x0, d, h, cand)
        except (DomainError, DivisionByZeroInterval):
            return None
        if _vec_in(image, cand):
            best = cand
            # refine: the operator image is itself a valid enclosure; keep
            # shrinking while the self-inclusion check still passes.
            current = image
            for _ in range(2):
                try:
                    nxt = _picard_image(tape, x0, d, h, current)
                except (DomainError, DivisionByZeroInterval):
                    break
                if _vec_in(nxt, current):
                    best = current
                    current = nxt
                else:
                    break
            return best
        cand = _widen(image, 0.5 * (opts.inflation - 1.0), opts.inflation_pad)
    return None


def picard_enclosure(
    sys: SwitchedSystem,
    mode: int,
    x0: Box,
    h: float,
    opts: IntegratorOptions = DEFAULT_OPTIONS,
) -> Box:
    """Box [xt] with  x0 + [0,h] * f([xt], [d])  included in [xt].

    The inclusion is re-verified on the returned box; all solutions from x0
    stay inside it for the whole of [0, h].
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    sys.check_mode(mode)
    tape = mode_tape(sys, mode)
    d = sys.dist_raw()
    enc = _picard_raw(tape, x0.raw(), d, h, opts)
    if enc is None:
        raise EnclosureFailure(
            f"mode {mode}: no certified enclosure at h={h:g} "
            f"after {opts.max_inflations} inflations"
        )
    # independent re-check of the accepted enclosure
    if not _vec_in(_picard_image(tape, x0.raw(), d, h, enc), enc):
        raise AssertionError("picard witness failed re-verification")
    return Box.from_raw(enc)


# ---------------------------------------------------------------------------
# LTE: remainder of the numerical update phi(t) via stage-recurrence series
# ---------------------------------------------------------------------------


def _stage_remainder(
    tape: Tape,
    scheme: ButcherScheme,
    xn: RawVec,
    d: RawVec,
    h: float,
    p: int,
) -> RawVec:
    """Enclosure of phi^(p+1) over the whole step, phi(t) = xn + t*sum b_i k_i(t)."""
    n = tape.nx
    order = p + 1
    that = (0.0, h)
    states = [SeriesState(tape, xn, d) for _ in range(scheme.s)]
    k_hist: list[list[list[tuple[float, float]]]] = [[] for _ in range(scheme.s)]
    a_hist: list[list[list[tuple[float, float]]]] = [[] for _ in range(scheme.s)]
    psi: list[list[tuple[float, float]]] = []
    for k in range(order + 1):
        for i in range(scheme.s):
            # A_i = sum_j a_ij * K_j, coefficient k (j < i: already done)
            acc = [(0.0, 0.0)] * n
            for j, coef in enumerate(scheme.a[i]):
                if coef == (0.0, 0.0):
                    continue
                acc = _vec_add(acc, _vec_scale(coef, k_hist[j][k]))
            a_hist[i].append(acc)
            # u_i = xn + (that + s) * A_i:  coefficient k is
            #   that*A_i[k] + A_i[k-1] (+ xn at k = 0)
            for dim in range(n):
                term = i_mul(that[0], that[1], *acc[dim])
                if k >= 1:
                    prev = a_hist[i][k - 1][dim]
                    term = i_add(term[0], term[1], prev[0], prev[1])
                    states[i].set_x_coeff(dim, k, term)
                else:
                    term = i_add(term[0], term[1], xn[dim][0], xn[dim][1])
                    states[i].coeffs[dim][0] = term
            states[i].extend(k)
            k_hist[i].append(states[i].outputs_at(k))
        acc = [(0.0, 0.0)] * n
        for i in range(scheme.s):
            acc = _vec_add(acc, _vec_scale(scheme.b[i], k_hist[i][k]))
        psi.append(acc)
    # phi^(p+1)(eta) = (p+1)! * ( psi[p] + that * psi[p+1] ),  eta in [0,h]
    fact = float(math.factorial(order))
    out = []
    for dim in range(n):
        t = i_mul(that[0], that[1], *psi[order][dim])
        t = i_add(t[0], t[1], *psi[p][dim])
        out.append(i_mul(t[0], t[1], fact, fact))
    return out


# ---------------------------------------------------------------------------
# one validated step
# ---------------------------------------------------------------------------


def _stage_values(
    tape: Tape,
    scheme: ButcherScheme,
    xn: RawVec,
    d: RawVec,
    h: float,
) -> tuple[list[RawVec], list[RawVec]]:
    """Stage argument boxes U_i and stage values K_i (natural extension)."""
    n = len(xn)
    U: list[RawVec] = []
    K: list[RawVec] = []
    for i in range(scheme.s):
        if i == 0:
            u = list(xn)
        else:
            acc = [(0.0, 0.0)] * n
            for j, coef in enumerate(scheme.a[i]):
                if coef == (0.0, 0.0):
                    continue
                acc = _vec_add(acc, _vec_scale(coef, K[j]))
            u = _vec_add(xn, _vec_scale((h, h), acc))
        U.append(u)
        K.append(tape_eval(tape, u, d))
    return U, K


def _rk_update(
    scheme: ButcherScheme, xn: RawVec, K: list[RawVec], h: float
) -> RawVec:
    n = len(xn)
    acc = [(0.0, 0.0)] * n
    for i in range(scheme.s):
        acc = _vec_add(acc, _vec_scale(scheme.b[i], K[i]))
    return _vec_add(xn, _vec_scale((h, h), acc))


def _identity(n: int) -> list[list[tuple[float, float]]]:
    return [
        [(1.0, 1.0) if i == j else (0.0, 0.0) for j in range(n)]
        for i in range(n)
    ]


def _mat_mul(A, B, n: int):
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            acc = (0.0, 0.0)
            for k in range(n):
                t = i_mul(*A[i][k], *B[k][j])
                acc = i_add(acc[0], acc[1], t[0], t[1])
            row.append(acc)
        out.append(row)
    return out


def _mat_axpy(Y, coef, X, n: int):
    """Y + coef * X elementwise."""
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            t = i_mul(coef[0], coef[1], *X[i][j])
            row.append(i_add(*Y[i][j], t[0], t[1]))
        out.append(row)
    return out


def _mean_value_update(
    sys: SwitchedSystem,
    mode: int,
    scheme: ButcherScheme,
    xn: RawVec,
    U: list[RawVec],
    d: RawVec,
    h: float,
) -> RawVec:
    """Mean-value extension of the RK update map over the step box.

    Phi(x) for x in [xn] lies in Phi(mid) + J * ([xn] - mid) with J the
    interval Jacobian of the update, assembled from vector-field Jacobians
    evaluated on the stage-argument boxes.
    """
    n = sys.n
    tape = mode_tape(sys, mode)
    jt = mode_jacobian_tape(sys, mode)
    hh = (h, h)
    # G_i = d(u_i)/dx, KJ_i = d(k_i)/dx = Df(U_i) * G_i
    KJ: list = []
    for i in range(scheme.s):
        flat = tape_eval(jt, U[i], d)
        Df = [[flat[r * n + c] for c in range(n)] for r in range(n)]
        G = _identity(n)
        for j, coef in enumerate(scheme.a[i]):
            if coef == (0.0, 0.0):
                continue
            hc = i_mul(coef[0], coef[1], *hh)
            G = _mat_axpy(G, hc, KJ[j], n)
        KJ.append(_mat_mul(Df, G, n))
    J = _identity(n)
    for i in range(scheme.s):
        hb = i_mul(scheme.b[i][0], scheme.b[i][1], *hh)
        J = _mat_axpy(J, hb, KJ[i], n)
    mid = [0.5 * (lo + hi) for lo, hi in xn]
    mid_vec = [(v, v) for v in mid]
    _, Km = _stage_values(tape, scheme, mid_vec, d, h)
    centre = _rk_update(scheme, mid_vec, Km, h)
    dev = [i_sub(lo, hi, m, m) for (lo, hi), m in zip(xn, mid)]
    out = []
    for i in range(n):
        acc = centre[i]
        for j in range(n):
            t = i_mul(*J[i][j], *dev[j])
            acc = i_add(acc[0], acc[1], t[0], t[1])
        out.append(acc)
    return out


def validated_step(
    sys: SwitchedSystem,
    mode: int,
    xn: Box,
    h: float,
    scheme: ButcherScheme | None = None,
    opts: IntegratorOptions = DEFAULT_OPTIONS,
) -> StepResult:
    """One guaranteed step: x(t+h; x) in x_next for every x in xn, d in [d]."""
    sys.check_mode(mode)
    scheme = scheme or opts.butcher()
    tape = mode_tape(sys, mode)
    d = sys.dist_raw()
    xr = xn.raw()
    apriori = _picard_raw(tape, xr, d, h, opts)
    if apriori is None:
        raise EnclosureFailure(f"mode {mode}: no certified enclosure at h={h:g}")

    p = scheme.p
    try:
        U, K = _stage_values(tape, scheme, xr, d, h)
        x_rk = _rk_update(scheme, xr, K, h)
        mv = _mean_value_update(sys, mode, scheme, xr, U, d, h)
        x_rk = _vec_meet(x_rk, mv)
        # f^(p) over the a priori enclosure: p! * p-th solution-series coeff
        sol = solution_series(tape, apriori, d, p)
        fact_p = float(math.factorial(p))
        f_p = [i_mul(lo, hi, fact_p, fact_p) for lo, hi in sol[p]]
        phi = _stage_remainder(tape, scheme, xr, d, h, p)
    except (DomainError, DivisionByZeroInterval) as exc:
        raise StepTooWide(f"mode {mode}: remainder bound failed at h={h:g}: {exc}") from exc

    # lte = h^(p+1)/(p+1)! * (f^(p) - phi^(p+1))
    hp = _h_power(h, p + 1)
    fact = float(math.factorial(p + 1))
    coef = i_div(hp[0], hp[1], fact, fact)
    lte = []
    for i in range(sys.n):
        t = i_sub(*f_p[i], *phi[i])
        lte.append(i_mul(coef[0], coef[1], t[0], t[1]))

    wmax = max(sub_up(hi, lo) for lo, hi in lte)
    if wmax > opts.lte_tol:
        raise StepTooWide(
            f"mode {mode}: lte width {wmax:g} > {opts.lte_tol:g} at h={h:g}"
        )

    x_next = _vec_add(x_rk, lte)
    # the endpoint also lies in the a priori box and in the forward cone
    fenc = tape_eval(tape, apriori, d)
    fwd = _vec_add(xr, _vec_scale((0.0, h), fenc))
    x_next = _vec_meet(_vec_meet(x_next, apriori), fwd)
    bwd = _vec_add(x_next, _vec_scale((-h, 0.0), fenc))
    seg = _vec_meet(_vec_meet(apriori, fwd), bwd)
    return StepResult(
        x_next=Box.from_raw(x_next),
        apriori=Box.from_raw(seg),
        h=h,
        lte=Box.from_raw(lte),
    )


def _h_power(h: float, e: int) -> tuple[float, float]:
    lo = hi = h
    for _ in range(e - 1):
        lo, hi = i_mul(lo, hi, h, h)
    return lo, hi


# ---------------------------------------------------------------------------
# mode integration and pattern operators
# ---------------------------------------------------------------------------


def integrate_mode(
    sys: SwitchedSystem,
    mode: int,
    x0: Box,
    duration: float,
    opts: IntegratorOptions = DEFAULT_OPTIONS,
) -> TubeResult:
    """Adaptive validated integration covering exactly [0, duration]."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    sys.check_mode(mode)
    scheme = opts.butcher()
    h_min = sys.tau / (1 << opts.h_min_shift)
    h_cap = sys.tau * opts.h_max_factor
    h = min(h_cap, duration)
    t = 0.0
    x = x0
    segs: list[tuple[tuple[float, float], Box]] = []
    while True:
        remaining = duration - t
        if remaining <= 0.0:
            break
        h_eff = min(h, remaining)
        try:
            step = validated_step(sys, mode, x, h_eff, scheme, opts)
        except (EnclosureFailure, StepTooWide) as exc:
            if h_eff <= h_min * (1.0 + 1e-9):
                raise IntegrationFailure(
                    f"mode {mode} failed at minimum step: {exc}"
                ) from exc
            h = max(0.5 * h_eff, h_min)
            continue
        t_next = duration if h_eff == remaining else t + h_eff
        segs.append(((t, t_next), step.apriori))
        x = step.x_next
        t = t_next
        if max(iv.width for iv in step.lte.dims) < 0.25 * opts.lte_tol:
            h = min(2.0 * h_eff, h_cap)
        else:
            h = h_eff
    return TubeResult(segments=tuple(segs), endpoint=x)


def tube(
    sys: SwitchedSystem,
    x0: Box,
    pattern: Sequence[int],
    opts: IntegratorOptions = DEFAULT_OPTIONS,
) -> TubeResult:
    """Union of boxes covering all trajectories of the pattern (tau each)."""
    if not pattern:
        return TubeResult(segments=(((0.0, 0.0), x0),), endpoint=x0)
    segs: list[tuple[tuple[float, float], Box]] = []
    x = x0
    offset = 0.0
    for mode in pattern:
        run = integrate_mode(sys, mode, x, sys.tau, opts)
        for (t0, t1), box in run.segments:
            segs.append(((offset + t0 if t0 else offset, offset + t1), box))
        offset = segs[-1][0][1]
        x = run.endpoint
    return TubeResult(segments=tuple(segs), endpoint=x)


def post(
    sys: SwitchedSystem,
    x0: Box,
    pattern: Sequence[int],
    opts: IntegratorOptions = DEFAULT_OPTIONS,
) -> Box:
    """Successor box: enclosure of the image of x0 after the pattern."""
    return tube(sys, x0, pattern, opts).endpoint
