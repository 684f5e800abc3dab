"""Scalar expression language and evaluable fields over R^n.

Grammar (standard precedence, ``^`` > unary ``-`` > ``* /`` > ``+ -``, every
binary level left associative)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' powarg)*
    powarg  := '-' powarg | atom
    atom    := NUMBER | VAR | FUNC '(' expr ')' | NARY '(' expr (',' expr)* ')'
             | '(' expr ')'

``FUNC`` is one of ``exp ln abs sqrt``; ``NARY`` is one of ``min max norm2``.
Variables are ``x1..xn``; complex-mode fields on C^n = R^{2n} additionally use
``y1..yn`` for the imaginary parts (stored after the real parts).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

UNARY_FUNCS = ("exp", "ln", "abs", "sqrt")
NARY_FUNCS = ("min", "max", "norm2")
SMOOTHNESS = ("C0", "C2", "Cinf")

DEFAULT_GRAD_STEP = 1e-6
DEFAULT_HESS_STEP = 1e-4
# Hessian steps never exceed this fraction of a field's clearance: near a
# singular edge the curvature grows like 1/d^2 and a fixed step would swamp
# the small eigenvalues with truncation error
CLEARANCE_STEP_FRACTION = 1e-4


class ExprSyntaxError(ValueError):
    """Raised for malformed expressions; ``offset`` is a byte offset into the source."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class EvaluationError(ArithmeticError):
    pass


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of UNARY_FUNCS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class NAry:
    op: str  # "min" | "max"
    args: tuple


@dataclass(frozen=True)
class Norm:
    args: tuple


Node = Const | Var | Unary | Binary | NAry | Norm


def variable_names(dimension: int, complex_mode: bool = False) -> dict[str, int]:
    """Name -> coordinate index table; in complex mode ``dimension`` counts complex coordinates."""
    names = {f"x{i + 1}": i for i in range(dimension)}
    if complex_mode:
        names.update({f"y{i + 1}": dimension + i for i in range(dimension)})
    return names


# ---------------------------------------------------------------------------
# Lexer / parser
# ---------------------------------------------------------------------------


@dataclass
class _Tok:
    kind: str  # num, name, op, end
    text: str
    offset: int


def _tokenize(source: str) -> list[_Tok]:
    data = source.encode("utf-8")
    toks: list[_Tok] = []
    i = 0
    while i < len(data):
        c = chr(data[i])
        if c.isspace():
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < len(data) and chr(data[i + 1]).isdigit()):
            j = i
            while j < len(data) and (chr(data[j]).isdigit() or chr(data[j]) == "."):
                j += 1
            if j < len(data) and chr(data[j]) in "eE":
                k = j + 1
                if k < len(data) and chr(data[k]) in "+-":
                    k += 1
                if k < len(data) and chr(data[k]).isdigit():
                    while k < len(data) and chr(data[k]).isdigit():
                        k += 1
                    j = k
            text = data[i:j].decode()
            try:
                float(text)
            except ValueError:
                raise ExprSyntaxError(f"malformed number {text!r}", i) from None
            toks.append(_Tok("num", text, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < len(data) and (chr(data[j]).isalnum() or chr(data[j]) == "_"):
                j += 1
            toks.append(_Tok("name", data[i:j].decode(), i))
            i = j
            continue
        if c in "+-*/^(),":
            toks.append(_Tok("op", c, i))
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character {data[i:i + 1]!r}", i)
    toks.append(_Tok("end", "", len(data)))
    return toks


class _Parser:
    def __init__(self, source: str, names: dict[str, int]):
        self.toks = _tokenize(source)
        self.pos = 0
        self.names = names

    def peek(self) -> _Tok:
        return self.toks[self.pos]

    def take(self) -> _Tok:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.take()
        if tok.text != text or tok.kind != "op":
            raise ExprSyntaxError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.offset)

    def parse(self) -> Node:
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.take()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        while self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            node = Binary("^", node, self.powarg())
        return node

    def powarg(self) -> Node:
        if self.peek().kind == "op" and self.peek().text == "-":
            self.take()
            return Unary("neg", self.powarg())
        return self.atom()

    def atom(self) -> Node:
        tok = self.take()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "name":
            if tok.text in UNARY_FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(tok.text, arg)
            if tok.text in NARY_FUNCS:
                self.expect("(")
                args = [self.expr()]
                while self.peek().kind == "op" and self.peek().text == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if tok.text == "norm2":
                    return Norm(tuple(args))
                return NAry(tok.text, tuple(args))
            if tok.text in self.names:
                return Var(self.names[tok.text], tok.text)
            if tok.text[:1] in "xy" and tok.text[1:].isdigit():
                raise ExprSyntaxError(f"variable {tok.text} exceeds the declared dimension", tok.offset)
            raise ExprSyntaxError(f"unknown name {tok.text!r}", tok.offset)
        if tok.kind == "op" and tok.text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprSyntaxError(f"unexpected {tok.text or 'end of input'!r}", tok.offset)


def parse_expr(source: str, dimension: int, complex_mode: bool = False) -> Node:
    """Parse ``source`` into an AST over ``dimension`` variables."""
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    return _Parser(source, variable_names(dimension, complex_mode)).parse()


# precedence levels used by the printer
_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _fmt_number(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"cannot print constant {v}")
    if v < 0:
        return f"(-{_fmt_number(-v)})"
    return repr(float(v))


def print_expr(node: Node) -> str:
    """Render an AST back to grammar text; parses to a structurally equal AST."""
    if isinstance(node, Const):
        return _fmt_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = print_expr(node.arg)
            if _prec_of(node.arg) < _PREC["neg"]:
                inner = f"({inner})"
            return f"-{inner}"
        return f"{node.op}({print_expr(node.arg)})"
    if isinstance(node, NAry):
        return f"{node.op}({', '.join(print_expr(a) for a in node.args)})"
    if isinstance(node, Norm):
        return f"norm2({', '.join(print_expr(a) for a in node.args)})"
    p = _PREC[node.op]
    left = print_expr(node.left)
    if _prec_of(node.left) < p or (node.op == "^" and _prec_of(node.left) == p):
        left = f"({left})"
    right = print_expr(node.right)
    if node.op == "^":
        if _prec_of(node.right) < 10:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec_of(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def _prec_of(node: Node) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary) and node.op == "neg":
        return _PREC["neg"]
    return 10


def max_variable_index(node: Node) -> int:
    """Largest variable index referenced (-1 for constant expressions)."""
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Const):
        return -1
    if isinstance(node, Unary):
        return max_variable_index(node.arg)
    if isinstance(node, Binary):
        return max(max_variable_index(node.left), max_variable_index(node.right))
    return max(max_variable_index(a) for a in node.args)


def compile_expr(node: Node) -> Callable[[np.ndarray], np.ndarray]:
    """Turn an AST into a vectorized evaluator ``X[..., n] -> values[...]``.

    Non-real intermediates come out as NaN; callers decide whether that is an error.
    """
    if isinstance(node, Const):
        v = float(node.value)
        return lambda X: np.full(X.shape[:-1], v)
    if isinstance(node, Var):
        i = node.index
        return lambda X: X[..., i]
    if isinstance(node, Unary):
        f = compile_expr(node.arg)
        fn = {"neg": np.negative, "exp": np.exp, "ln": np.log, "abs": np.abs, "sqrt": np.sqrt}[node.op]
        return lambda X: fn(f(X))
    if isinstance(node, Binary):
        a, b = compile_expr(node.left), compile_expr(node.right)
        fn = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power}[node.op]
        return lambda X: fn(a(X), b(X))
    fs = [compile_expr(a) for a in node.args]
    if isinstance(node, Norm):
        return lambda X: np.sqrt(sum(np.square(f(X)) for f in fs))
    red = np.minimum if node.op == "min" else np.maximum

    def nary(X):
        out = fs[0](X)
        for f in fs[1:]:
            out = red(out, f(X))
        return out

    return nary


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


def as_box(box, dim: int) -> np.ndarray:
    """Normalize a box spec to an ``(dim, 2)`` float array; ``None`` means all of R^dim."""
    if box is None:
        out = np.empty((dim, 2))
        out[:, 0], out[:, 1] = -np.inf, np.inf
        return out
    arr = np.array([[_bound(lo), _bound(hi)] for lo, hi in box], dtype=float)
    if arr.shape != (dim, 2):
        raise ValueError(f"box has {arr.shape[0]} axes, expected {dim}")
    if np.any(arr[:, 0] >= arr[:, 1]):
        raise ValueError("box intervals must satisfy lo < hi")
    return arr


def _bound(v) -> float:
    if v is None:
        raise ValueError("use '-inf'/'inf' for unbounded box sides")
    return float(v)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Immutable evaluation oracle on an open box in R^n.

    ``func`` is vectorized over leading axes. Optional hooks:
    ``domain`` (membership mask when the field lives on a subset of its box),
    ``clearance`` (distance from a point to the edge of that subset),
    ``kink`` (mask of FD stencils ``(N, S, n)`` that straddle a non-smooth seam),
    ``hessian`` (exact Hessian oracle, used instead of finite differences).
    """

    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    box: np.ndarray
    smooth: str = "C2"
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    expr: Node | None = None
    name: str = ""
    domain: Callable[[np.ndarray], np.ndarray] | None = None
    clearance: Callable[[np.ndarray], np.ndarray] | None = None
    kink: Callable[[np.ndarray], np.ndarray] | None = None
    complex_mode: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.smooth not in SMOOTHNESS:
            raise ValueError(f"smoothness tag must be one of {SMOOTHNESS}")
        object.__setattr__(self, "box", as_box(self.box, self.dim) if not isinstance(self.box, np.ndarray) else self.box)

    @classmethod
    def from_expr(cls, source: str, dim: int, box=None, smooth: str = "C2", complex_mode: bool = False,
                  **hooks) -> "ScalarField":
        node = parse_expr(source, dim, complex_mode)
        real_dim = 2 * dim if complex_mode else dim
        return cls(real_dim, compile_expr(node), as_box(box, real_dim), smooth, expr=node,
                   name=source, complex_mode=complex_mode, **hooks)

    @classmethod
    def from_callable(cls, func, dim: int, box=None, smooth: str = "C2", **hooks) -> "ScalarField":
        """Internal oracle interface: wrap a vectorized Python callable."""
        return cls(dim, func, as_box(box, dim), smooth, **hooks)

    def with_hooks(self, **changes) -> "ScalarField":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return ScalarField(**fields)

    # -- evaluation --------------------------------------------------------

    def inside_box(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.all((points > self.box[:, 0]) & (points < self.box[:, 1]), axis=-1)

    def raw(self, points: np.ndarray) -> np.ndarray:
        """Evaluate without checks; failures surface as NaN."""
        points = np.asarray(points, dtype=float)
        with np.errstate(all="ignore"):
            vals = np.asarray(self.func(points), dtype=float)
        return np.broadcast_to(vals, points.shape[:-1]).copy()

    def evaluate(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.dim:
            raise ValueError(f"points have {points.shape[-1]} coordinates, field has {self.dim}")
        inside = self.inside_box(points)
        if not np.all(inside):
            bad = points[~inside].reshape(-1, self.dim)[0]
            raise DomainError(f"point {bad.tolist()} outside domain box")
        vals = self.raw(points)
        if np.any(np.isnan(vals)):
            bad = points[np.isnan(vals)].reshape(-1, self.dim)[0]
            raise EvaluationError(f"non-real intermediate at {bad.tolist()}")
        return vals

    def __call__(self, p) -> float:
        return eval_field(self, p)

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        if self.expr is None:
            raise ValueError("only expression fields serialize")
        dim = self.dim // 2 if self.complex_mode else self.dim
        box = [[_json_bound(lo), _json_bound(hi)] for lo, hi in self.box]
        out = {"dim": dim, "expr": print_expr(self.expr), "box": box, "smooth": self.smooth}
        if self.complex_mode:
            out["complex"] = True
        return out

    @classmethod
    def from_json(cls, data: dict | str) -> "ScalarField":
        if isinstance(data, str):
            data = json.loads(data)
        cm = bool(data.get("complex", False))
        dim = int(data["dim"])
        box = data.get("box")
        if box is not None:
            box = [[_parse_bound(lo), _parse_bound(hi)] for lo, hi in box]
        return cls.from_expr(data["expr"], dim, box=box, smooth=data.get("smooth", "C2"), complex_mode=cm)


def _json_bound(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _parse_bound(v) -> float:
    if v is None:
        raise ValueError("null box bound; use '-inf' or 'inf'")
    return float(v)


def eval_field(f: ScalarField, p) -> float:
    """Value of ``f`` at a single point; -inf is a legal result."""
    p = np.asarray(p, dtype=float).reshape(f.dim)
    return float(f.evaluate(p[None, :])[0])


def fd_steps(p: np.ndarray, h: float) -> np.ndarray:
    return h * np.maximum(1.0, np.abs(p))


def fd_gradient(f: ScalarField, p, h0: float = DEFAULT_GRAD_STEP) -> np.ndarray:
    """Central-difference gradient with per-axis steps ``h0*max(1,|p_i|)``."""
    p = np.asarray(p, dtype=float).reshape(f.dim)
    h = fd_steps(p, h0)
    E = np.diag(h)
    vals = f.evaluate(np.concatenate([p + E, p - E]))
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("non-finite value on the gradient stencil")
    n = f.dim
    return (vals[:n] - vals[n:]) / (2 * h)


@dataclass
class HessianEstimate:
    point: np.ndarray
    matrix: np.ndarray
    step: np.ndarray
    error_scale: float


def _hessian_stencil(n: int) -> tuple[np.ndarray, list]:
    """Unit offsets for the second-difference stencil (center, +-e_i, +-2e_i, +-e_i+-e_j)."""
    offs = [np.zeros(n)]
    idx = {}
    for i in range(n):
        for s in (1, -1, 2, -2):
            e = np.zeros(n)
            e[i] = s
            idx[(i, s)] = len(offs)
            offs.append(e)
    for i in range(n):
        for j in range(i + 1, n):
            for si in (1, -1):
                for sj in (1, -1):
                    e = np.zeros(n)
                    e[i], e[j] = si, sj
                    idx[(i, j, si, sj)] = len(offs)
                    offs.append(e)
    return np.array(offs), idx


_STENCIL_CACHE: dict[int, tuple] = {}


def hessian_stencil(n: int):
    if n not in _STENCIL_CACHE:
        _STENCIL_CACHE[n] = _hessian_stencil(n)
    return _STENCIL_CACHE[n]


def stencil_points(points: np.ndarray, h1: float = DEFAULT_HESS_STEP,
                   clearance: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """All stencil evaluation points ``(N, S, n)`` plus the per-axis steps ``(N, n)``.

    With ``clearance`` (one distance per point), steps are capped at
    ``CLEARANCE_STEP_FRACTION * clearance`` wherever that is finite and positive.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    offs, _ = hessian_stencil(points.shape[1])
    h = fd_steps(points, h1)
    if clearance is not None:
        cap = CLEARANCE_STEP_FRACTION * np.asarray(clearance, dtype=float).reshape(-1)
        usable = np.isfinite(cap) & (cap > 0)
        h = np.where(usable[:, None], np.minimum(h, np.where(usable, cap, np.inf)[:, None]), h)
    return points[:, None, :] + offs[None, :, :] * h[:, None, :], h


def hessian_from_stencil(vals: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric second-difference Hessians and a truncation error scale per point."""
    N, n = h.shape
    _, idx = hessian_stencil(n)
    H = np.empty((N, n, n))
    f0 = vals[:, 0]
    err = np.zeros(N)
    with np.errstate(invalid="ignore", over="ignore"):
        _fill_hessian(H, err, vals, f0, h, idx, n)
    H = (H + np.swapaxes(H, 1, 2)) / 2
    return H, err


def _fill_hessian(H, err, vals, f0, h, idx, n):
    for i in range(n):
        hi = h[:, i]
        d1 = (vals[:, idx[(i, 1)]] - 2 * f0 + vals[:, idx[(i, -1)]]) / hi**2
        d2 = (vals[:, idx[(i, 2)]] - 2 * f0 + vals[:, idx[(i, -2)]]) / (4 * hi**2)
        H[:, i, i] = d1
        err[:] = np.maximum(err, np.abs(d2 - d1) / 3)
        for j in range(i + 1, n):
            hj = h[:, j]
            v = (vals[:, idx[(i, j, 1, 1)]] - vals[:, idx[(i, j, 1, -1)]]
                 - vals[:, idx[(i, j, -1, 1)]] + vals[:, idx[(i, j, -1, -1)]]) / (4 * hi * hj)
            H[:, i, j] = v
            H[:, j, i] = v


@dataclass
class BatchHessian:
    """Hessians at many points; ``status`` is "ok" or the reason a point was skipped."""

    points: np.ndarray
    matrices: np.ndarray
    status: list
    error_scale: np.ndarray
    steps: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return np.array([s == "ok" for s in self.status], dtype=bool)


def fd_hessian_batch(f: ScalarField, points, h1: float = DEFAULT_HESS_STEP) -> BatchHessian:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    N, n = points.shape
    if n != f.dim:
        raise ValueError("dimension mismatch")
    status = ["ok"] * N
    if f.hessian is not None:
        H = np.array([np.asarray(f.hessian(p), dtype=float) for p in points]).reshape(N, n, n)
        H = (H + np.swapaxes(H, 1, 2)) / 2
        return BatchHessian(points, H, status, np.zeros(N), fd_steps(points, h1))
    clear = None
    if f.clearance is not None:
        with np.errstate(invalid="ignore", divide="ignore"):
            clear = f.clearance(points)
    stencil, h = stencil_points(points, h1, clear)
    in_box = np.all(f.inside_box(stencil), axis=1)
    if f.domain is not None:
        in_dom = np.all(np.asarray(f.domain(stencil.reshape(-1, n))).reshape(N, -1), axis=1)
    else:
        in_dom = np.ones(N, dtype=bool)
    safe = np.where((in_box & in_dom)[:, None, None], stencil, points[:, None, :])
    vals = f.raw(safe)
    H, err = hessian_from_stencil(vals, h)
    kinked = np.zeros(N, dtype=bool) if f.kink is None else np.asarray(f.kink(stencil), dtype=bool)
    for k in range(N):
        if not in_box[k]:
            status[k] = "out-of-domain"
        elif not in_dom[k]:
            status[k] = "out-of-domain"
        elif np.any(np.isnan(vals[k])):
            status[k] = "eval-error"
        elif not np.all(np.isfinite(vals[k])) or not np.all(np.isfinite(H[k])):
            status[k] = "non-finite"
        elif kinked[k]:
            status[k] = "kink"
    return BatchHessian(points, H, status, err, h)


def fd_hessian(f: ScalarField, p, h1: float = DEFAULT_HESS_STEP) -> HessianEstimate:
    """Central second-difference Hessian, exactly symmetrized."""
    p = np.asarray(p, dtype=float).reshape(f.dim)
    b = fd_hessian_batch(f, p[None, :], h1)
    st = b.status[0]
    if st == "out-of-domain":
        raise DomainError(f"Hessian stencil around {p.tolist()} leaves the domain")
    if st == "eval-error":
        raise EvaluationError(f"evaluation failed on the stencil around {p.tolist()}")
    if st == "non-finite":
        raise EvaluationError(f"non-finite Hessian entries at {p.tolist()}")
    return HessianEstimate(p, b.matrices[0], b.steps[0], float(b.error_scale[0]))


def field_sum(fields: Sequence[ScalarField], name: str = "") -> ScalarField:
    """Pointwise sum of fields sharing a dimension; box is the intersection."""
    dim = fields[0].dim
    lo = np.max([f.box[:, 0] for f in fields], axis=0)
    hi = np.min([f.box[:, 1] for f in fields], axis=0)
    funcs = [f.func for f in fields]
    smooth = min((f.smooth for f in fields), key=SMOOTHNESS.index)
    return ScalarField(dim, lambda X: sum(fn(X) for fn in funcs), np.stack([lo, hi], axis=1), smooth,
                       name=name or " + ".join(f"({f.name})" for f in fields))
