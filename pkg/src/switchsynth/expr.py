"""Expression ASTs for vector fields, with interval and Taylor-mode evaluation.

The grammar (see ``parse_expr``) covers +, -, *, /, integer powers, unary
negation and the elementary functions sin/cos/exp/sqrt.  Precedence:
``^`` binds tightest, then ``*``/``/``, then unary ``-``, then binary
``+``/``-``; ``^`` is right-associative and its exponent must be a positive
integer constant, so ``-0.5*x1^3`` parses as ``neg(0.5 * x1^3)``.

Three evaluation back ends share one compiled "tape" (a flat postorder
instruction list with common-subexpression elimination):

* plain interval evaluation (natural extension, outward rounded);
* Taylor-series propagation: every register carries interval coefficients
  of a univariate series, extended one order at a time -- this powers both
  Lie/time derivatives of the flow and the Runge-Kutta remainder bounds;
* generated Python point functions for fast non-validated simulation.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import ModelSyntaxError, UndeclaredVariable, UnsupportedOrder
from .intervals import (
    Interval,
    i_add,
    i_div,
    i_exp,
    i_cos,
    i_mul,
    i_neg,
    i_pow,
    i_sin,
    i_sqrt,
    i_sub,
)

FUNCTIONS = ("sin", "cos", "exp", "sqrt")

MAX_DERIVATIVE_ORDER = 12


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class Expr:
    """Marker base class for AST nodes."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Unary(Expr):
    op: str                     # neg | sin | cos | exp | sqrt
    arg: Expr


@dataclass(frozen=True, slots=True)
class Binary(Expr):
    op: str                     # + | - | * | / | pow
    left: Expr
    right: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Const):
        return set()
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Unary):
        return free_vars(e.arg)
    return free_vars(e.left) | free_vars(e.right)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text: str, line: int):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            col = pos + (len(text[pos:]) - len(stripped)) + 1
            raise ModelSyntaxError(line, col, f"unexpected character {stripped[0]!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind) + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str, line: int):
        self.tokens = _tokenize(text, line)
        self.line = line
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, col: int, msg: str):
        raise ModelSyntaxError(self.line, col, msg)

    def expect_op(self, op: str):
        kind, val, col = self.next()
        if kind != "op" or val != op:
            self.error(col, f"expected {op!r}, found {val or 'end of input'!r}")

    # expr := neg (('+'|'-') neg)*
    def parse_expr(self) -> Expr:
        node = self.parse_neg()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.parse_neg()
                node = Binary(val, node, rhs)
            else:
                return node

    # neg := '-' neg | term
    def parse_neg(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return Unary("neg", self.parse_neg())
        return self.parse_term()

    # term := factor (('*'|'/') factor)*
    def parse_term(self) -> Expr:
        node = self.parse_factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.parse_factor()
                node = Binary(val, node, rhs)
            else:
                return node

    # factor := atom ('^' factor)?   (right-associative)
    def parse_factor(self) -> Expr:
        node = self.parse_atom()
        kind, val, col = self.peek()
        if kind == "op" and val == "^":
            self.next()
            _, _, ecol = self.peek()
            exponent = self.parse_factor()
            if (
                not isinstance(exponent, Const)
                or exponent.value < 1
                or exponent.value != int(exponent.value)
            ):
                self.error(ecol, "power exponent must be a positive integer constant")
            return Binary("pow", node, Const(float(int(exponent.value))))
        return node

    def parse_atom(self) -> Expr:
        kind, val, col = self.next()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            nkind, nval, _ = self.peek()
            if nkind == "op" and nval == "(":
                if val not in FUNCTIONS:
                    self.error(col, f"unknown function {val!r}")
                self.next()
                arg = self.parse_expr()
                self.expect_op(")")
                return Unary(val, arg)
            return Var(val)
        if kind == "op" and val == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        self.error(col, f"expected a value, found {val or 'end of input'!r}")


def parse_expr(text: str, line: int = 1, allowed: set[str] | None = None) -> Expr:
    """Parse an expression; optionally restrict variable names to ``allowed``."""
    p = _Parser(text, line)
    node = p.parse_expr()
    kind, val, col = p.peek()
    if kind != "end":
        p.error(col, f"unexpected trailing input {val!r}")
    if allowed is not None:
        extra = free_vars(node) - allowed
        if extra:
            raise UndeclaredVariable(
                f"line {line}: undeclared variable(s) {', '.join(sorted(extra))}"
            )
    return node


# ---------------------------------------------------------------------------
# printer (minimal parentheses; reparsing yields a structurally equal AST)
# ---------------------------------------------------------------------------

_LEVEL_ADD, _LEVEL_NEG, _LEVEL_MUL, _LEVEL_POW, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _render(e: Expr, min_level: int) -> str:
    if isinstance(e, Const):
        if e.value < 0:
            text, level = f"-{_fmt_number(-e.value)}", _LEVEL_NEG
        else:
            text, level = _fmt_number(e.value), _LEVEL_ATOM
    elif isinstance(e, Var):
        text, level = e.name, _LEVEL_ATOM
    elif isinstance(e, Unary):
        if e.op == "neg":
            text, level = f"-{_render(e.arg, _LEVEL_NEG)}", _LEVEL_NEG
        else:
            text, level = f"{e.op}({_render(e.arg, _LEVEL_ADD)})", _LEVEL_ATOM
    elif isinstance(e, Binary):
        if e.op == "pow":
            text = f"{_render(e.left, _LEVEL_ATOM)}^{_render(e.right, _LEVEL_POW)}"
            level = _LEVEL_POW
        elif e.op in "*/":
            text = f"{_render(e.left, _LEVEL_MUL)}{e.op}{_render(e.right, _LEVEL_POW)}"
            level = _LEVEL_MUL
        else:
            text = f"{_render(e.left, _LEVEL_ADD)} {e.op} {_render(e.right, _LEVEL_NEG)}"
            level = _LEVEL_ADD
    else:  # pragma: no cover
        raise TypeError(f"not an Expr: {e!r}")
    if level < min_level:
        return f"({text})"
    return text


def print_expr(e: Expr) -> str:
    return _render(e, _LEVEL_ADD)


# ---------------------------------------------------------------------------
# symbolic differentiation (for Jacobians)
# ---------------------------------------------------------------------------


def _mk_add(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return Binary("+", a, b)


def _mk_sub(a: Expr, b: Expr) -> Expr:
    if b == ZERO:
        return a
    if a == ZERO:
        return Unary("neg", b)
    return Binary("-", a, b)


def _mk_mul(a: Expr, b: Expr) -> Expr:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    return Binary("*", a, b)


def _mk_div(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return Binary("/", a, b)


def _mk_pow(a: Expr, m: int) -> Expr:
    if m == 0:
        return ONE
    if m == 1:
        return a
    return Binary("pow", a, Const(float(m)))


def diff(e: Expr, var: str) -> Expr:
    """Partial derivative with identity simplifications only.

    Constants are never folded through inexact float arithmetic, so interval
    evaluation of the result keeps its outward rounding.
    """
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Unary):
        da = diff(e.arg, var)
        if e.op == "neg":
            return ZERO if da == ZERO else Unary("neg", da)
        if da == ZERO:
            return ZERO
        if e.op == "sin":
            return _mk_mul(Unary("cos", e.arg), da)
        if e.op == "cos":
            return Unary("neg", _mk_mul(Unary("sin", e.arg), da))
        if e.op == "exp":
            return _mk_mul(Unary("exp", e.arg), da)
        if e.op == "sqrt":
            return _mk_div(da, _mk_mul(Const(2.0), Unary("sqrt", e.arg)))
        raise ValueError(f"unknown unary op {e.op!r}")
    if isinstance(e, Binary):
        if e.op == "pow":
            m = int(e.right.value)
            da = diff(e.left, var)
            if da == ZERO:
                return ZERO
            if m == 1:
                return da
            return _mk_mul(Const(float(m)), _mk_mul(_mk_pow(e.left, m - 1), da))
        da, db = diff(e.left, var), diff(e.right, var)
        if e.op == "+":
            return _mk_add(da, db)
        if e.op == "-":
            return _mk_sub(da, db)
        if e.op == "*":
            return _mk_add(_mk_mul(da, e.right), _mk_mul(e.left, db))
        if e.op == "/":
            if db == ZERO:
                return _mk_div(da, e.right)
            num = _mk_sub(_mk_mul(da, e.right), _mk_mul(e.left, db))
            return _mk_div(num, _mk_pow(e.right, 2))
        raise ValueError(f"unknown binary op {e.op!r}")
    raise TypeError(f"not an Expr: {e!r}")


# ---------------------------------------------------------------------------
# interval evaluation over an environment (public natural extension)
# ---------------------------------------------------------------------------


def eval_interval(e: Expr, env: Mapping[str, Interval]) -> Interval:
    """Natural interval extension of ``e`` over variable bindings ``env``."""
    return Interval(*_eval_raw(e, env))


def _eval_raw(e: Expr, env) -> tuple[float, float]:
    if isinstance(e, Const):
        return e.value, e.value
    if isinstance(e, Var):
        try:
            iv = env[e.name]
        except KeyError:
            raise UndeclaredVariable(f"no binding for variable {e.name!r}") from None
        return iv.lo, iv.hi
    if isinstance(e, Unary):
        lo, hi = _eval_raw(e.arg, env)
        if e.op == "neg":
            return -hi, -lo
        if e.op == "sin":
            return i_sin(lo, hi)
        if e.op == "cos":
            return i_cos(lo, hi)
        if e.op == "exp":
            return i_exp(lo, hi)
        if e.op == "sqrt":
            return i_sqrt(lo, hi)
        raise ValueError(f"unknown unary op {e.op!r}")
    if e.op == "pow":
        lo, hi = _eval_raw(e.left, env)
        return i_pow(lo, hi, int(e.right.value))
    alo, ahi = _eval_raw(e.left, env)
    blo, bhi = _eval_raw(e.right, env)
    if e.op == "+":
        return i_add(alo, ahi, blo, bhi)
    if e.op == "-":
        return i_sub(alo, ahi, blo, bhi)
    if e.op == "*":
        return i_mul(alo, ahi, blo, bhi)
    if e.op == "/":
        return i_div(alo, ahi, blo, bhi)
    raise ValueError(f"unknown binary op {e.op!r}")


# ---------------------------------------------------------------------------
# compiled tape
# ---------------------------------------------------------------------------

OP_LOAD = 0        # leaf placeholder, never executed
OP_ADD = 1
OP_SUB = 2
OP_MUL = 3
OP_DIV = 4
OP_NEG = 5
OP_POW = 6         # aux = integer exponent
OP_SIN = 7         # aux = register of the paired cosine
OP_COS = 8         # aux = register of the paired sine
OP_EXP = 9
OP_SQRT = 10


@dataclass(frozen=True)
class Tape:
    """Flat CSE'd instruction list over shared registers.

    Registers ``0..nx-1`` hold state variables, ``nx..nx+nd-1`` disturbance
    variables; constants and computed values follow.  ``instrs[i]`` produces
    register ``first_computed + i``.
    """

    nx: int
    nd: int
    const_vals: tuple[float, ...]
    instrs: tuple[tuple[int, int, int, int], ...]
    outputs: tuple[int, ...]

    @property
    def first_computed(self) -> int:
        return self.nx + self.nd + len(self.const_vals)

    @property
    def n_regs(self) -> int:
        return self.first_computed + len(self.instrs)


class _TapeBuilder:
    def __init__(self, x_names: Sequence[str], d_names: Sequence[str]):
        self.x_names = list(x_names)
        self.d_names = list(d_names)
        self.const_vals: list[float] = []
        self.const_ix: dict[float, int] = {}
        self.instrs: list[list[int]] = []
        self.memo: dict = {}
        self.base = len(x_names) + len(d_names)

    def _emit(self, op: int, a: int, b: int, aux: int) -> int:
        key = (op, a, b, aux)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        reg = self.base + len(self.const_vals) + len(self.instrs)
        # Constants were interleaved conceptually; recompute offsets at finish.
        self.instrs.append([op, a, b, aux])
        self.memo[key] = reg
        return reg

    def _const(self, v: float) -> int:
        ix = self.const_ix.get(v)
        if ix is None:
            ix = len(self.const_vals)
            self.const_vals.append(v)
            self.const_ix[v] = ix
            # Registering a new constant shifts computed registers; to keep
            # things simple constants are collected in a pre-pass instead.
            raise RuntimeError("constants must be collected before emission")
        return len(self.x_names) + len(self.d_names) + ix

    def collect_consts(self, e: Expr) -> None:
        if isinstance(e, Const):
            if e.value not in self.const_ix:
                self.const_ix[e.value] = len(self.const_vals)
                self.const_vals.append(e.value)
        elif isinstance(e, Unary):
            self.collect_consts(e.arg)
        elif isinstance(e, Binary):
            self.collect_consts(e.left)
            if e.op == "pow":
                return
            self.collect_consts(e.right)

    def build(self, e: Expr) -> int:
        hit = self.memo.get(e)
        if hit is not None:
            return hit
        if isinstance(e, Const):
            reg = self._const(e.value)
        elif isinstance(e, Var):
            if e.name in self.x_names:
                reg = self.x_names.index(e.name)
            elif e.name in self.d_names:
                reg = len(self.x_names) + self.d_names.index(e.name)
            else:
                raise UndeclaredVariable(f"no slot for variable {e.name!r}")
        elif isinstance(e, Unary):
            a = self.build(e.arg)
            if e.op == "neg":
                reg = self._emit(OP_NEG, a, 0, 0)
            elif e.op == "exp":
                reg = self._emit(OP_EXP, a, 0, 0)
            elif e.op == "sqrt":
                reg = self._emit(OP_SQRT, a, 0, 0)
            elif e.op in ("sin", "cos"):
                sreg, creg = self._sincos(a)
                reg = sreg if e.op == "sin" else creg
            else:
                raise ValueError(f"unknown unary op {e.op!r}")
        elif isinstance(e, Binary):
            if e.op == "pow":
                a = self.build(e.left)
                reg = self._emit(OP_POW, a, 0, int(e.right.value))
            else:
                a = self.build(e.left)
                b = self.build(e.right)
                opc = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV}[e.op]
                reg = self._emit(opc, a, b, 0)
        else:
            raise TypeError(f"not an Expr: {e!r}")
        self.memo[e] = reg
        return reg

    def _sincos(self, a: int) -> tuple[int, int]:
        key = ("sincos", a)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        sreg = self._emit(OP_SIN, a, 0, 0)
        creg = self._emit(OP_COS, a, 0, sreg)
        # patch the sine's companion slot now that the cosine register exists
        self.instrs[sreg - self.base - len(self.const_vals)][3] = creg
        self.memo[key] = (sreg, creg)
        return sreg, creg


def compile_tape(
    exprs: Sequence[Expr], x_names: Sequence[str], d_names: Sequence[str]
) -> Tape:
    builder = _TapeBuilder(x_names, d_names)
    for e in exprs:
        builder.collect_consts(e)
    outputs = tuple(builder.build(e) for e in exprs)
    return Tape(
        nx=len(x_names),
        nd=len(d_names),
        const_vals=tuple(builder.const_vals),
        instrs=tuple(tuple(i) for i in builder.instrs),
        outputs=outputs,
    )


def tape_eval(
    tape: Tape,
    x: Sequence[tuple[float, float]],
    d: Sequence[tuple[float, float]],
) -> list[tuple[float, float]]:
    """Natural interval extension of all tape outputs over raw bounds."""
    regs: list[tuple[float, float]] = list(x) + list(d)
    for c in tape.const_vals:
        regs.append((c, c))
    for op, a, b, aux in tape.instrs:
        va = regs[a]
        if op == OP_ADD:
            regs.append(i_add(va[0], va[1], *regs[b]))
        elif op == OP_SUB:
            regs.append(i_sub(va[0], va[1], *regs[b]))
        elif op == OP_MUL:
            regs.append(i_mul(va[0], va[1], *regs[b]))
        elif op == OP_DIV:
            regs.append(i_div(va[0], va[1], *regs[b]))
        elif op == OP_NEG:
            regs.append((-va[1], -va[0]))
        elif op == OP_POW:
            regs.append(i_pow(va[0], va[1], aux))
        elif op == OP_SIN:
            regs.append(i_sin(va[0], va[1]))
        elif op == OP_COS:
            regs.append(i_cos(va[0], va[1]))
        elif op == OP_EXP:
            regs.append(i_exp(va[0], va[1]))
        elif op == OP_SQRT:
            regs.append(i_sqrt(va[0], va[1]))
        else:  # pragma: no cover
            raise ValueError(f"bad opcode {op}")
    return [regs[o] for o in tape.outputs]


# ---------------------------------------------------------------------------
# Taylor-series propagation through a tape
# ---------------------------------------------------------------------------


class SeriesState:
    """Per-register interval Taylor coefficients, extended order by order.

    ``coeffs[r][k]`` encloses the k-th series coefficient of register ``r``.
    Leaf coefficients (state variables) are supplied by the caller before
    each ``extend`` call; disturbance variables and constants are constant
    in the series variable.  Registers whose series is known to be constant
    (all arguments constant so far) skip their recurrences: their higher
    coefficients are exactly zero.
    """

    __slots__ = ("tape", "coeffs", "paux", "static", "order")

    def __init__(
        self,
        tape: Tape,
        x0: Sequence[tuple[float, float]],
        d: Sequence[tuple[float, float]],
    ):
        self.tape = tape
        self.coeffs: list[list[tuple[float, float]]] = []
        self.static: list[bool] = []
        for xi in x0:
            self.coeffs.append([tuple(xi)])
            self.static.append(True)    # until a nonzero coefficient arrives
        for di in d:
            self.coeffs.append([tuple(di)])
            self.static.append(True)
        for c in tape.const_vals:
            self.coeffs.append([(c, c)])
            self.static.append(True)
        for _ in tape.instrs:
            self.coeffs.append([])
            self.static.append(True)
        # scratch powers u^2..u^(m-1) for OP_POW registers
        self.paux: dict[int, list[list[tuple[float, float]]]] = {}
        self.order = -1

    def set_x_coeff(self, i: int, k: int, val: tuple[float, float]) -> None:
        cs = self.coeffs[i]
        assert len(cs) == k, "state coefficients must be appended in order"
        cs.append(val)
        if val != (0.0, 0.0):
            self.static[i] = False

    def outputs_at(self, k: int) -> list[tuple[float, float]]:
        return [self.coeffs[o][k] for o in self.tape.outputs]

    def extend(self, k: int) -> None:
        """Compute coefficient ``k`` of every computed register.

        Requires leaf coefficients up to index ``k`` and computed
        coefficients up to ``k-1`` to be present already.
        """
        tape = self.tape
        coeffs = self.coeffs
        static = self.static
        base = tape.first_computed
        zero = (0.0, 0.0)
        # pad leaves that are constant in the series variable
        for r in range(tape.nx, base):
            cs = coeffs[r]
            while len(cs) <= k:
                cs.append(zero)
        for idx, (op, a, b, aux) in enumerate(tape.instrs):
            r = base + idx
            ca = coeffs[a]
            out = coeffs[r]
            if len(out) > k:
                continue
            if k > 0 and static[r]:
                if op <= OP_DIV:          # binary: consult both arguments
                    args_static = static[a] and static[b]
                else:
                    args_static = static[a]
                if args_static:
                    out.append(zero)
                    continue
                static[r] = False
            if op == OP_ADD:
                if k > 0 and static[b]:
                    out.append(ca[k])
                elif k > 0 and static[a]:
                    out.append(coeffs[b][k])
                else:
                    out.append(i_add(*ca[k], *coeffs[b][k]))
            elif op == OP_SUB:
                if k > 0 and static[b]:
                    out.append(ca[k])
                elif k > 0 and static[a]:
                    lo, hi = coeffs[b][k]
                    out.append((-hi, -lo))
                else:
                    out.append(i_sub(*ca[k], *coeffs[b][k]))
            elif op == OP_NEG:
                lo, hi = ca[k]
                out.append((-hi, -lo))
            elif op == OP_MUL:
                cb = coeffs[b]
                if k > 0 and static[b]:
                    out.append(i_mul(*ca[k], *cb[0]))
                elif k > 0 and static[a]:
                    out.append(i_mul(*ca[0], *cb[k]))
                else:
                    out.append(_conv(ca, cb, k))
            elif op == OP_DIV:
                cb = coeffs[b]
                if k > 0 and static[b]:
                    out.append(i_div(*ca[k], *cb[0]))
                else:
                    acc = ca[k]
                    for j in range(k):
                        t = i_mul(*out[j], *cb[k - j])
                        acc = i_sub(*acc, *t)
                    out.append(i_div(*acc, *cb[0]))
            elif op == OP_POW:
                out.append(self._pow_coeff(r, a, aux, k))
            elif op == OP_EXP:
                if k == 0:
                    out.append(i_exp(*ca[0]))
                else:
                    out.append(_scaled_conv(ca, out, k, negate=False))
            elif op == OP_SIN:
                if k == 0:
                    out.append(i_sin(*ca[0]))
                else:
                    out.append(_scaled_conv(ca, coeffs[aux], k, negate=False))
            elif op == OP_COS:
                if k == 0:
                    out.append(i_cos(*ca[0]))
                else:
                    out.append(_scaled_conv(ca, coeffs[aux], k, negate=True))
            elif op == OP_SQRT:
                if k == 0:
                    out.append(i_sqrt(*ca[0]))
                else:
                    acc = ca[k]
                    for j in range(1, k):
                        t = i_mul(*out[j], *out[k - j])
                        acc = i_sub(*acc, *t)
                    r0 = out[0]
                    denom = i_add(r0[0], r0[1], r0[0], r0[1])
                    out.append(i_div(*acc, *denom))
            else:  # pragma: no cover
                raise ValueError(f"bad opcode {op}")
        self.order = k

    def _pow_coeff(self, r: int, a: int, m: int, k: int) -> tuple[float, float]:
        # u^m via a chain of convolutions u^2, u^3, ..., kept per register;
        # zeroth coefficients use the exact even/odd power range.
        ca = self.coeffs[a]
        if m == 1:
            return ca[k]
        chain = self.paux.get(r)
        if chain is None:
            chain = [[] for _ in range(m - 1)]     # chain[j] holds u^(j+2)
            self.paux[r] = chain
        prev = ca
        for j in range(m - 1):
            cur = chain[j]
            if len(cur) <= k:
                if k == 0:
                    cur.append(i_pow(ca[0][0], ca[0][1], j + 2))
                else:
                    cur.append(_conv(prev, ca, k))
            prev = cur
        return chain[m - 2][k]


def _conv(ca, cb, k) -> tuple[float, float]:
    lo, hi = 0.0, 0.0
    for j in range(k + 1):
        t = i_mul(*ca[j], *cb[k - j])
        lo, hi = i_add(lo, hi, t[0], t[1])
    return lo, hi


def _scaled_conv(cu, cg, k, negate: bool) -> tuple[float, float]:
    """(1/k) * sum_{j=1..k} j * u_j * g_{k-j}, the exp/sin/cos recurrence."""
    lo, hi = 0.0, 0.0
    for j in range(1, k + 1):
        t = i_mul(*cu[j], *cg[k - j])
        t = i_mul(t[0], t[1], float(j), float(j))
        lo, hi = i_add(lo, hi, t[0], t[1])
    if negate:
        lo, hi = -hi, -lo
    return i_div(lo, hi, float(k), float(k))


def solution_series(
    tape: Tape,
    x0: Sequence[tuple[float, float]],
    d: Sequence[tuple[float, float]],
    order: int,
) -> list[list[tuple[float, float]]]:
    """Taylor coefficients of t -> f(x(t), d) along solutions of x' = f(x, d).

    Returns ``G`` with ``G[k][i]`` enclosing the k-th series coefficient of
    component i of f along the flow, for every initial point in ``x0`` and
    constant d in ``d``; the p-th total time derivative of f is ``p! * G[p]``.
    """
    if order < 0 or order > MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrder(f"derivative order {order} outside 0..{MAX_DERIVATIVE_ORDER}")
    st = SeriesState(tape, x0, d)
    series_g: list[list[tuple[float, float]]] = []
    for k in range(order + 1):
        if k > 0:
            kk = float(k)
            for i in range(tape.nx):
                g = series_g[k - 1][i]
                st.set_x_coeff(i, k, i_div(g[0], g[1], kk, kk))
        st.extend(k)
        series_g.append(st.outputs_at(k))
    return series_g


# ---------------------------------------------------------------------------
# point-function code generation (fast non-validated evaluation)
# ---------------------------------------------------------------------------


def _py_src(e: Expr, x_names: Sequence[str], d_names: Sequence[str]) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        if e.name in x_names:
            return f"x[{x_names.index(e.name)}]"
        if e.name in d_names:
            return f"d[{d_names.index(e.name)}]"
        raise UndeclaredVariable(f"no slot for variable {e.name!r}")
    if isinstance(e, Unary):
        inner = _py_src(e.arg, x_names, d_names)
        if e.op == "neg":
            return f"(-{inner})"
        return f"_{e.op}({inner})"
    if e.op == "pow":
        return f"({_py_src(e.left, x_names, d_names)})**{int(e.right.value)}"
    a = _py_src(e.left, x_names, d_names)
    b = _py_src(e.right, x_names, d_names)
    return f"({a}{e.op}{b})"


def compile_point_fn(
    exprs: Sequence[Expr], x_names: Sequence[str], d_names: Sequence[str]
) -> Callable:
    """Compile expressions into a Python function ``f(x, d) -> tuple``."""
    body = ", ".join(_py_src(e, x_names, d_names) for e in exprs)
    src = f"def _rhs(x, d):\n    return ({body},)\n"
    ns = {
        "_sin": math.sin,
        "_cos": math.cos,
        "_exp": math.exp,
        "_sqrt": math.sqrt,
    }
    exec(src, ns)  # noqa: S102 - sources are generated from validated ASTs
    return ns["_rhs"]
