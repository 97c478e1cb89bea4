"""Problem data: generators, barrier/terminal/driver processes and their evaluators."""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, NamedTuple, Union

import numpy as np

from .errors import (
    InfeasibleBarriers,
    InvalidConfiguration,
    NumericError,
    StabilityError,
)
from .lattice import LatticeModel

# A time-dependent coefficient: a constant or piecewise-linear knots ((t, v), ...).
Coefficient = Union[float, tuple]


def truncate(k: float, x):
    """Clamp ``x`` into ``[-k, k]``."""
    if k < 0:
        raise InvalidConfiguration(f"truncation level must be nonnegative, got {k!r}")
    return np.minimum(k, np.maximum(-k, x)) if isinstance(x, np.ndarray) else min(k, max(-k, x))


def sign_hat(x):
    """Sign with ``sign_hat(0) == 0``."""
    if isinstance(x, np.ndarray):
        return np.sign(x)
    return 0.0 if x == 0 else math.copysign(1.0, x)


def _coefficient(value) -> Coefficient:
    if isinstance(value, (int, float, np.floating, np.integer)):
        return float(value)
    knots = tuple((float(t), float(v)) for t, v in value)
    if not knots:
        raise InvalidConfiguration("coefficient knot list is empty")
    ts = [t for t, _ in knots]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise InvalidConfiguration("coefficient knot times must be strictly increasing")
    return knots


def _evaluate_coefficient(coef: Coefficient, t):
    if isinstance(coef, float):
        return np.full(np.shape(t), coef) if np.ndim(t) else coef
    ts, vs = zip(*coef)
    out = np.interp(t, ts, vs)
    return out if np.ndim(t) else float(out)


def _coefficient_range(coef: Coefficient) -> tuple[float, float]:
    if isinstance(coef, float):
        return coef, coef
    vs = [v for _, v in coef]
    return min(vs), max(vs)


def _coefficient_json(coef: Coefficient):
    return coef if isinstance(coef, float) else [list(k) for k in coef]


@dataclass(frozen=True)
class ZCondition:
    """Growth bound ``|f(t,y,z) - f(t,y,0)| <= gamma * (g_t + |y| + |z|)**alpha``.

    Stored for diagnostics only; solvers never read it.
    """

    alpha: float
    gamma: float
    g: Coefficient = 0.0

    def __post_init__(self):
        object.__setattr__(self, "g", _coefficient(self.g))
        if not 0 < self.alpha < 1:
            raise InvalidConfiguration(f"z_condition.alpha must lie in (0, 1), got {self.alpha!r}")
        if self.gamma < 0:
            raise InvalidConfiguration("z_condition.gamma must be nonnegative")
        if _coefficient_range(self.g)[0] < 0:
            raise InvalidConfiguration("z_condition.g must be nonnegative")


GENERATOR_FORMS = ("linear", "monotone_poly", "tabulated")


@dataclass(frozen=True)
class GeneratorSpec:
    """Driver ``f(t, y, z) = a(t) y - d(t) y**3 + b(t) z + c(t)`` with ``d >= 0``.

    Every supported form is a member of this cubic family, which is what the
    compiled kernels solve.  ``mu`` and ``lam`` are the *declared*
    monotonicity and z-Lipschitz constants; they default to the tight values
    ``max a`` and ``max |b|``.
    """

    form: str
    a: Coefficient = 0.0
    b: Coefficient = 0.0
    c: Coefficient = 0.0
    d: Coefficient = 0.0
    mu: float | None = None
    lam: float | None = None
    z_condition: ZCondition | None = None
    params: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.form not in GENERATOR_FORMS:
            raise InvalidConfiguration(f"unknown generator form {self.form!r}")
        for name in "abcd":
            object.__setattr__(self, name, _coefficient(getattr(self, name)))
        if _coefficient_range(self.d)[0] < 0:
            raise InvalidConfiguration("cubic coefficient d must be nonnegative")
        if self.mu is None:
            object.__setattr__(self, "mu", _coefficient_range(self.a)[1])
        if self.lam is None:
            lo, hi = _coefficient_range(self.b)
            object.__setattr__(self, "lam", max(abs(lo), abs(hi)))
        if self.lam < 0:
            raise InvalidConfiguration("lambda must be nonnegative")

    @classmethod
    def linear(cls, a=0.0, b=0.0, c=0.0, *, mu=None, lam=None, z_condition=None):
        return cls("linear", a=a, b=b, c=c, mu=mu, lam=lam, z_condition=z_condition,
                   params={"a": _coefficient(a), "b": _coefficient(b), "c": _coefficient(c)})

    @classmethod
    def monotone_poly(cls, mu_tilde=0.0, c=0.0, *, mu=None, z_condition=None):
        """``f = -y**3 + mu_tilde * y + c(t)``."""
        return cls("monotone_poly", a=mu_tilde, c=c, d=1.0,
                   mu=mu_tilde if mu is None else mu, lam=0.0, z_condition=z_condition,
                   params={"mu_tilde": float(mu_tilde), "c": _coefficient(c)})

    @classmethod
    def tabulated(cls, a=0.0, b=0.0, c=0.0, d=0.0, *, mu=None, lam=None, z_condition=None):
        return cls("tabulated", a=a, b=b, c=c, d=d, mu=mu, lam=lam, z_condition=z_condition,
                   params={k: _coefficient(v) for k, v in dict(a=a, b=b, c=c, d=d).items()})

    def coefficients(self, times) -> tuple[np.ndarray, ...]:
        t = np.asarray(times, dtype=float)
        return tuple(np.asarray(_evaluate_coefficient(getattr(self, k), t), dtype=float)
                     for k in "abcd")

    def __call__(self, t, y, z):
        a, b, c, d = (_evaluate_coefficient(getattr(self, k), t) for k in "abcd")
        return a * y - d * y * y * y + b * z + c

    @property
    def exogenous(self) -> bool:
        """True when ``f`` depends on time only."""
        return all(_coefficient_range(getattr(self, k)) == (0.0, 0.0) for k in "abd")

    def to_dict(self) -> dict:
        out = {"form": self.form}
        out.update({k: _coefficient_json(v) if isinstance(v, (float, tuple)) else v
                    for k, v in self.params.items()})
        out["mu"] = self.mu
        out["lambda"] = self.lam
        if self.z_condition is not None:
            zc = self.z_condition
            out["z_condition"] = {"alpha": zc.alpha, "gamma": zc.gamma,
                                  "g": _coefficient_json(zc.g)}
        return out


def eval_generator(gen: GeneratorSpec, t: float, y: float, z: float) -> float:
    if not all(math.isfinite(v) for v in (t, y, z)):
        raise NumericError(f"non-finite generator argument (t={t!r}, y={y!r}, z={z!r})")
    return float(gen(t, y, z))


class StructureReport(NamedTuple):
    h2_ok: bool
    h3_ok: bool
    h5_ok: bool
    worst_violation: float
    worst_h2: float
    worst_h3: float


def generator_structure_check(gen, sample_box=((0.0, 1.0), (-10.0, 10.0), (-10.0, 10.0)),
                              samples: int = 10_000, seed: int = 0,
                              tol: float = 1e-12) -> StructureReport:
    """Sample pairs and test the declared monotonicity and z-Lipschitz constants.

    Violations are scaled by ``max(1, size of the compared terms)`` so that
    rounding in large cubic terms is not mistaken for a violation.  ``gen``
    may be any object with ``__call__(t, y, z)``, ``mu`` and ``lam``.
    """
    if samples < 2:
        raise InvalidConfiguration("need at least two samples")
    rng = np.random.default_rng(seed)
    (t0, t1), (y0, y1), (z0, z1) = sample_box
    t = rng.uniform(t0, t1, samples)
    y, yp = rng.uniform(y0, y1, (2, samples))
    z, zp = rng.uniform(z0, z1, (2, samples))

    dy = y - yp
    fy, fyp = gen(t, y, z), gen(t, yp, z)
    lhs = (fy - fyp) * dy
    rhs = gen.mu * dy * dy
    scale = np.maximum(1.0, np.abs(fy) * np.abs(dy) + np.abs(fyp) * np.abs(dy) + np.abs(rhs))
    h3 = float(np.max((lhs - rhs) / scale))

    fz, fzp = gen(t, y, z), gen(t, y, zp)
    bound = gen.lam * np.abs(z - zp)
    scale = np.maximum(1.0, np.abs(fz) + np.abs(fzp) + bound)
    h2 = float(np.max((np.abs(fz - fzp) - bound) / scale))

    radius = max(abs(y0), abs(y1))
    ys = np.linspace(-radius, radius, 101)
    sup = np.max(np.abs(gen(t[:, None][:50], ys[None, :], 0.0) - gen(t[:50, None], 0.0, 0.0)))
    h5 = bool(np.isfinite(sup))
    return StructureReport(h2 <= tol, h3 <= tol, h5, max(h2, h3), h2, h3)


# -- processes ---------------------------------------------------------------

_SAFE_FUNCS = {
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "max": np.maximum, "min": np.minimum, "maximum": np.maximum, "minimum": np.minimum,
    "where": np.where, "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "pi": np.pi,
}


def _compile_expression(expr: str, params: Mapping[str, float]):
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise InvalidConfiguration(f"cannot parse expression {expr!r}: {exc.msg}") from None
    allowed = set(_SAFE_FUNCS) | set(params) | {"t", "B"}
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise InvalidConfiguration(f"unknown name {node.id!r} in expression {expr!r}")
        if isinstance(node, (ast.Attribute, ast.Lambda, ast.Subscript, ast.comprehension)):
            raise InvalidConfiguration(f"unsupported syntax in expression {expr!r}")
    return compile(tree, "<process>", "eval")


ROLES = ("barrier-lower", "barrier-upper", "terminal", "driver")


@dataclass(frozen=True, kw_only=True)
class ProcessSpec:
    """Base class of node-evaluable processes with optional grid-aligned jumps.

    ``jumps`` holds ``(time, size)`` pairs.  The value at ``t_i`` includes
    every jump at times ``<= t_i``; the left limit excludes the jump at ``t_i``.
    """

    jumps: tuple = ()
    role: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "jumps", tuple((float(t), float(s)) for t, s in self.jumps))
        if self.role is not None and self.role not in ROLES:
            raise InvalidConfiguration(f"unknown process role {self.role!r}")

    deterministic = True

    def _base(self, model: LatticeModel) -> np.ndarray:
        raise NotImplementedError

    def jump_sizes(self, model: LatticeModel) -> np.ndarray:
        """Total jump at each grid time ``t_0..t_N``."""
        out = np.zeros(model.N + 1)
        for t, size in self.jumps:
            try:
                k = model.grid.index_of(t)
            except InvalidConfiguration:
                raise InvalidConfiguration(
                    f"jump time {t!r} off grid (dt={model.dt!r})") from None
            if k == 0:
                raise InvalidConfiguration(f"jump time {t!r} must lie in (0, T]")
            out[k] += size
        return out

    def node_values(self, model: LatticeModel) -> np.ndarray:
        cum = np.cumsum(self.jump_sizes(model))
        return np.where(model.mask, self._base(model) + cum[:, None], np.nan)

    def left_limits(self, model: LatticeModel) -> np.ndarray:
        jumps = self.jump_sizes(model)
        return self.node_values(model) - jumps[:, None]

    def time_values(self, model: LatticeModel) -> np.ndarray:
        """Values at ``t_0..t_N`` for a deterministic process."""
        if not self.deterministic:
            raise InvalidConfiguration(f"{type(self).__name__} depends on the state")
        return self.node_values(model)[:, 0]

    def increments(self, model: LatticeModel) -> np.ndarray:
        """``V(t_{i+1}) - V(t_i)`` for ``i = 0..N-1`` (jumps at ``t_{i+1}`` included)."""
        return np.diff(self.time_values(model))

    def total_variation(self, model: LatticeModel) -> float:
        """Variation of the continuous part plus absolute jump sizes."""
        base = self._base(model)[:, 0] if self.deterministic else None
        if base is None:
            raise InvalidConfiguration("total variation needs a deterministic process")
        return float(np.sum(np.abs(np.diff(base))) + np.sum(np.abs(self.jump_sizes(model))))

    def to_dict(self) -> dict:
        out = self._params()
        if self.jumps:
            out["jumps"] = [list(j) for j in self.jumps]
        return out


@dataclass(frozen=True, kw_only=True)
class Constant(ProcessSpec):
    value: float

    def _base(self, model):
        return np.full((model.N + 1, model.N + 1), float(self.value))

    def _params(self):
        return {"kind": "constant", "value": float(self.value)}


@dataclass(frozen=True, kw_only=True)
class DeterministicTime(ProcessSpec):
    """A function of time given either on every grid point or as knots."""

    values: tuple | None = None
    knots: tuple | None = None

    def __post_init__(self):
        super().__post_init__()
        if (self.values is None) == (self.knots is None):
            raise InvalidConfiguration("deterministic_time needs exactly one of values / knots")
        if self.values is not None:
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        else:
            object.__setattr__(self, "knots", _coefficient(self.knots))

    def _base(self, model):
        if self.values is not None:
            if len(self.values) != model.N + 1:
                raise InvalidConfiguration(
                    f"deterministic_time has {len(self.values)} values, grid needs {model.N + 1}")
            row = np.asarray(self.values)
        else:
            row = np.asarray(_evaluate_coefficient(self.knots, model.times), dtype=float)
        return np.broadcast_to(row[:, None], (model.N + 1, model.N + 1))

    def _params(self):
        out = {"kind": "deterministic_time"}
        if self.values is not None:
            out["values"] = list(self.values)
        else:
            out["knots"] = [list(k) for k in self.knots]
        return out


@dataclass(frozen=True, kw_only=True)
class FunctionOfState(ProcessSpec):
    """``g(t, B)`` given as an expression over ``t``, ``B`` and named parameters."""

    expr: str
    params: Mapping = field(default_factory=dict)

    deterministic = False

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "_code", _compile_expression(self.expr, self.params))

    def evaluate(self, t, B):
        scope = dict(_SAFE_FUNCS)
        scope.update(self.params)
        scope.update(t=t, B=B)
        with np.errstate(invalid="ignore"):
            return eval(self._code, {"__builtins__": {}}, scope)  # noqa: S307 - names vetted

    def _base(self, model):
        t = np.where(model.mask, model.time_grid, 0.0)
        B = np.where(model.mask, model.brownian, 0.0)
        return np.broadcast_to(np.asarray(self.evaluate(t, B), dtype=float), t.shape)

    def _params(self):
        return {"kind": "function_of_state", "expr": self.expr, "params": dict(self.params)}


def eval_process(spec: ProcessSpec, model: LatticeModel, node) -> float:
    i, j = model.check_node(node)
    return float(spec.node_values(model)[i, j])


def left_limit(spec: ProcessSpec, model: LatticeModel, i: int, j: int | None = None):
    """Pre-jump value at ``t_i``: a scalar for deterministic processes, else the layer (or node ``j``)."""
    if not 1 <= i <= model.N:
        raise InvalidConfiguration(f"left limit defined for 1 <= i <= N, got {i}")
    layer = spec.left_limits(model)[i, : i + 1]
    if j is not None:
        return float(layer[j])
    return float(layer[0]) if spec.deterministic else layer


def driver_increment(spec: ProcessSpec, model: LatticeModel, i: int) -> float:
    if not 0 <= i < model.N:
        raise InvalidConfiguration(f"driver increment defined for 0 <= i < N, got {i}")
    return float(spec.increments(model)[i])


# -- problem instance ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Full problem instance ``(xi, f, V, L, U)`` on a lattice."""

    lattice: LatticeModel
    terminal: ProcessSpec
    generator: GeneratorSpec
    driver: ProcessSpec | None = None
    lower: ProcessSpec | None = None
    upper: ProcessSpec | None = None
    p: float = 2.0

    def __post_init__(self):
        if not self.p >= 1:
            raise InvalidConfiguration(f"integrability exponent p must be >= 1, got {self.p!r}")
        if self.lattice.dt * max(self.generator.mu, 0.0) >= 1:
            raise StabilityError(
                f"dt * max(mu, 0) = {self.lattice.dt * max(self.generator.mu, 0.0)!r} >= 1")
        if self.driver is not None and not self.driver.deterministic:
            raise InvalidConfiguration("driver V must be a deterministic function of time")
        for spec in (self.terminal, self.driver, self.lower, self.upper):
            if spec is not None:
                spec.jump_sizes(self.lattice)
        if self.lower is not None and self.upper is not None:
            gap = self.lower_values - self.upper_values
            bad = np.argwhere(self.lattice.mask & (gap > 0))
            if bad.size:
                i, j = bad[0]
                raise InfeasibleBarriers(f"L > U at node ({i}, {j}) by {gap[i, j]!r}")

    @cached_property
    def xi(self) -> np.ndarray:
        N = self.lattice.N
        return np.ascontiguousarray(self.terminal.node_values(self.lattice)[N, : N + 1])

    @cached_property
    def dv(self) -> np.ndarray:
        if self.driver is None:
            return np.zeros(self.lattice.N)
        return np.ascontiguousarray(self.driver.increments(self.lattice))

    @cached_property
    def lower_values(self) -> np.ndarray | None:
        return None if self.lower is None else self.lower.node_values(self.lattice)

    @cached_property
    def upper_values(self) -> np.ndarray | None:
        return None if self.upper is None else self.upper.node_values(self.lattice)

    @cached_property
    def step_coefficients(self) -> tuple[np.ndarray, ...]:
        """Generator coefficients ``(a, b, c, d)`` at ``t_0..t_{N-1}``."""
        return tuple(np.ascontiguousarray(v)
                     for v in self.generator.coefficients(self.lattice.times[:-1]))

    def replace(self, **changes) -> "ProblemData":
        from dataclasses import replace
        return replace(self, **changes)


def as_process(value, role=None) -> ProcessSpec:
    """Coerce a number to a constant process; specs pass through."""
    if isinstance(value, ProcessSpec):
        return value
    if isinstance(value, (int, float)):
        return Constant(value=float(value), role=role)
    raise InvalidConfiguration(f"cannot interpret {value!r} as a process")


__all__ = [
    "Constant", "DeterministicTime", "FunctionOfState", "GeneratorSpec", "ProblemData",
    "ProcessSpec", "StructureReport", "ZCondition", "as_process", "driver_increment",
    "eval_generator", "eval_process", "generator_structure_check", "left_limit",
    "sign_hat", "truncate",
]
