"""Switched-system models: parsing, validation and derivative queries.

A model file declares N closed-loop vector fields (one per switching mode)
over state variables ``x1..xn`` and optional disturbance variables
``d1..dm``, a sampling period ``tau`` and named constants::

    system boost
    dim 2
    dist 2 in [-0.005,0.005]x[-0.005,0.005]   # omit when undisturbed
    tau 0.5
    const rl = 0.05
    mode 1:
      x1' = -rl/3*x1 + 1/3
      x2' = ...
    mode 2:
      ...

Comments start with ``#``.  Feedback terms are folded into each mode's
right-hand side at authoring time, so modes are autonomous vector fields;
the disturbance is an unknown constant over each integration substep,
re-widened to its declared box at every substep.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping

from .errors import ArityMismatch, ModelSyntaxError, UndeclaredVariable, UnsupportedOrder
from .expr import (
    Const,
    Expr,
    MAX_DERIVATIVE_ORDER,
    Tape,
    Unary,
    Binary,
    Var,
    compile_point_fn,
    compile_tape,
    diff,
    parse_expr,
    solution_series,
)
from .intervals import Box, Interval, parse_box, i_mul


@dataclass(frozen=True)
class SwitchedSystem:
    """N-mode sampled switched system with closed-loop mode dynamics."""

    name: str
    n: int
    m: int
    modes: tuple[tuple[Expr, ...], ...]
    tau: float
    dist_box: Box | None
    constants: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("state dimension must be >= 1")
        if len(self.modes) < 1:
            raise ValueError("at least one mode is required")
        if self.tau <= 0:
            raise ValueError("sampling period tau must be positive")
        for k, rhs in enumerate(self.modes, start=1):
            if len(rhs) != self.n:
                raise ArityMismatch(
                    f"mode {k} has {len(rhs)} equations, expected {self.n}"
                )
        if self.m > 0 and (self.dist_box is None or self.dist_box.n != self.m):
            raise ValueError("disturbance box dimension must match dist declaration")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def x_names(self) -> tuple[str, ...]:
        return tuple(f"x{i + 1}" for i in range(self.n))

    @property
    def d_names(self) -> tuple[str, ...]:
        return tuple(f"d{j + 1}" for j in range(self.m))

    def dist_raw(self) -> list[tuple[float, float]]:
        if self.dist_box is None:
            return []
        return self.dist_box.raw()

    def check_mode(self, mode: int) -> None:
        if not 1 <= mode <= self.n_modes:
            raise ValueError(f"mode {mode} outside 1..{self.n_modes}")


def _substitute_consts(e: Expr, consts: Mapping[str, float]) -> Expr:
    if isinstance(e, Var) and e.name in consts:
        return Const(consts[e.name])
    if isinstance(e, Unary):
        return Unary(e.op, _substitute_consts(e.arg, consts))
    if isinstance(e, Binary):
        return Binary(
            e.op,
            _substitute_consts(e.left, consts),
            _substitute_consts(e.right, consts),
        )
    return e


@lru_cache(maxsize=None)
def mode_exprs(sys: SwitchedSystem, mode: int) -> tuple[Expr, ...]:
    """Mode right-hand side with named constants inlined."""
    consts = dict(sys.constants)
    return tuple(_substitute_consts(e, consts) for e in sys.modes[mode - 1])


@lru_cache(maxsize=None)
def mode_tape(sys: SwitchedSystem, mode: int) -> Tape:
    return compile_tape(mode_exprs(sys, mode), sys.x_names, sys.d_names)


@lru_cache(maxsize=None)
def mode_jacobian_tape(sys: SwitchedSystem, mode: int) -> Tape:
    """Tape with n*n outputs: d f_i / d x_j in row-major order."""
    exprs = mode_exprs(sys, mode)
    rows = [diff(fi, xj) for fi in exprs for xj in sys.x_names]
    return compile_tape(rows, sys.x_names, sys.d_names)


@lru_cache(maxsize=None)
def mode_point_fn(sys: SwitchedSystem, mode: int) -> Callable:
    return compile_point_fn(mode_exprs(sys, mode), sys.x_names, sys.d_names)


_FACTORIALS = [1.0]
for _k in range(1, MAX_DERIVATIVE_ORDER + 1):
    _FACTORIALS.append(_FACTORIALS[-1] * _k)


def lie_derivative(
    sys: SwitchedSystem, mode: int, order: int, env: Mapping[str, Interval]
) -> list[Interval]:
    """Enclosure of the order-th total time derivative of f_mode along the
    flow of ``x' = f_mode(x, d)``, with d a time-constant interval parameter.

    Order 0 is the plain natural extension of the right-hand side.
    """
    sys.check_mode(mode)
    if not 0 <= order <= MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrder(f"order {order} outside 0..{MAX_DERIVATIVE_ORDER}")
    try:
        x0 = [(env[nm].lo, env[nm].hi) for nm in sys.x_names]
        d = [(env[nm].lo, env[nm].hi) for nm in sys.d_names]
    except KeyError as exc:
        raise UndeclaredVariable(f"no binding for variable {exc.args[0]!r}") from None
    series = solution_series(mode_tape(sys, mode), x0, d, order)
    fact = _FACTORIALS[order]
    out = []
    for lo, hi in series[order]:
        out.append(Interval(*i_mul(lo, hi, fact, fact)))
    return out


# ---------------------------------------------------------------------------
# model file parser
# ---------------------------------------------------------------------------

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*$")
_RESERVED = set(("sin", "cos", "exp", "sqrt"))


def _strip(line: str) -> str:
    cut = line.find("#")
    if cut >= 0:
        line = line[:cut]
    return line.strip()


def parse_model(text: str) -> SwitchedSystem:
    """Parse a model file into a validated ``SwitchedSystem``."""
    lines = text.splitlines()
    name = None
    n = None
    m = 0
    dist_box = None
    tau = None
    constants: dict[str, float] = {}
    modes: list[list[Expr]] = []
    mode_lines: list[int] = []
    in_modes = False

    def err(lineno: int, msg: str, col: int = 1):
        raise ModelSyntaxError(lineno, col, msg)

    for lineno, rawline in enumerate(lines, start=1):
        line = _strip(rawline)
        if not line:
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        if head == "mode" or (head.startswith("mode") and line.endswith(":")):
            if n is None or tau is None:
                err(lineno, "mode block before dim/tau declarations")
            if not line.endswith(":"):
                err(lineno, "mode header must end with ':'")
            body = line[len("mode"):-1].strip()
            try:
                k = int(body)
            except ValueError:
                err(lineno, f"bad mode index {body!r}")
            if k != len(modes) + 1:
                err(lineno, f"mode indices must be contiguous; expected {len(modes) + 1}, got {k}")
            modes.append([])
            mode_lines.append(lineno)
            in_modes = True
            continue
        if in_modes:
            m_eq = re.match(r"x(\d+)'\s*=\s*(.*)$", line)
            if not m_eq:
                err(lineno, f"expected an equation like x1' = <expr>, got {line!r}")
            idx = int(m_eq.group(1))
            cur = modes[-1]
            if idx != len(cur) + 1:
                err(lineno, f"equations must appear in order; expected x{len(cur) + 1}', got x{idx}'")
            if idx > n:
                raise ArityMismatch(
                    f"line {lineno}: mode {len(modes)} defines x{idx}' but dim is {n}"
                )
            allowed = (
                {f"x{i + 1}" for i in range(n)}
                | {f"d{j + 1}" for j in range(m)}
                | set(constants)
            )
            cur.append(parse_expr(m_eq.group(2), line=lineno, allowed=allowed))
            continue
        if head == "system":
            if not rest:
                err(lineno, "system needs a name")
            name = rest
        elif head == "dim":
            try:
                n = int(rest)
            except ValueError:
                err(lineno, f"bad dimension {rest!r}")
            if n < 1:
                err(lineno, "dim must be >= 1")
        elif head == "dist":
            m_d = re.match(r"(\d+)\s+in\s+(.*)$", rest)
            if not m_d:
                err(lineno, "dist line must read: dist <m> in <box>")
            m = int(m_d.group(1))
            if m < 1:
                err(lineno, "dist count must be >= 1 (omit the line when 0)")
            try:
                dist_box = parse_box(m_d.group(2))
            except ValueError as exc:
                err(lineno, str(exc))
            if dist_box.n != m:
                err(lineno, f"disturbance box has {dist_box.n} components, declared {m}")
        elif head == "tau":
            try:
                tau = float(rest)
            except ValueError:
                err(lineno, f"bad tau value {rest!r}")
            if tau <= 0:
                err(lineno, "tau must be positive")
        elif head == "const":
            m_c = re.match(r"([A-Za-z_][A-Za-z_0-9]*)\s*=\s*(\S+)$", rest)
            if not m_c:
                err(lineno, "const line must read: const <name> = <real>")
            cname = m_c.group(1)
            if not _NAME_RE.match(cname) or cname in _RESERVED:
                err(lineno, f"bad constant name {cname!r}")
            if re.fullmatch(r"[xd]\d+", cname):
                err(lineno, f"constant name {cname!r} collides with a variable slot")
            try:
                constants[cname] = float(m_c.group(2))
            except ValueError:
                err(lineno, f"bad constant value {m_c.group(2)!r}")
        else:
            err(lineno, f"unknown directive {head!r}")

    last = len(lines) + 1
    if name is None:
        err(last, "missing 'system <name>' line")
    if n is None:
        err(last, "missing 'dim <n>' line")
    if tau is None:
        err(last, "missing 'tau <real>' line")
    if not modes:
        err(last, "no mode blocks found")
    for k, (rhs, lineno) in enumerate(zip(modes, mode_lines), start=1):
        if len(rhs) != n:
            raise ArityMismatch(
                f"line {lineno}: mode {k} has {len(rhs)} equations, expected {n}"
            )

    return SwitchedSystem(
        name=name,
        n=n,
        m=m,
        modes=tuple(tuple(rhs) for rhs in modes),
        tau=tau,
        dist_box=dist_box,
        constants=tuple(sorted(constants.items())),
    )


def load_model(path) -> SwitchedSystem:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_model(fh.read())
