"""Norms, a priori audits, class (D) norm, Mokobodzki feasibility, convexity residuals.

Path functionals are computed exactly where the lattice allows it: running
maxima through a threshold recursion (any depth), additive functionals by
enumerating all ``2**N`` paths when ``N <= 12``.  Deeper lattices fall back to
a fixed-seed sample of paths and the result is flagged ``exact=False``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InvalidConfiguration
from .lattice import MAX_PATH_DEPTH, LatticeModel, all_paths, along_paths
from .processes import ProblemData, ProcessSpec, sign_hat

PATH_SAMPLES = 1 << 15
PATH_SEED = 20240607
AUDIT_FACTOR = 1.01


# -- path functionals ----------------------------------------------------------


def expected_running_max(model: LatticeModel, X: np.ndarray) -> float:
    """Exact ``E[max_i X_i]`` for a nonnegative node array.

    Uses ``E[M] = sum_k (v_k - v_{k-1}) P(M >= v_k)`` over the sorted node
    values, with ``P(M < v)`` from a forward pass that kills paths on
    reaching a node with ``X >= v``.
    """
    N = model.N
    vals = np.unique(model.valid(X))
    if vals[0] < 0:
        raise InvalidConfiguration("running-max functional needs nonnegative values")
    thresholds = vals[vals > 0]
    if thresholds.size == 0:
        return 0.0
    thr = thresholds[:, None]
    q = (X[0, :1][None, :] < thr).astype(float)
    for i in range(N):
        nxt = np.zeros((thresholds.size, i + 2))
        nxt[:, :-1] += 0.5 * q
        nxt[:, 1:] += 0.5 * q
        q = nxt * (X[i + 1, : i + 2][None, :] < thr)
    survive = q.sum(axis=1)  # P(M < v_k)
    steps = np.diff(np.concatenate(([0.0], thresholds)))
    return float(np.sum(steps * (1.0 - survive)))


class PathSample(NamedTuple):
    paths: np.ndarray
    weights: np.ndarray
    exact: bool


def path_sample(model: LatticeModel, seed: int = PATH_SEED) -> PathSample:
    N = model.N
    if N <= MAX_PATH_DEPTH:
        paths = all_paths(N)
        return PathSample(paths, np.full(len(paths), 2.0**-N), True)
    rng = np.random.default_rng(seed)
    paths = rng.integers(0, 2, size=(PATH_SAMPLES, N))
    return PathSample(paths, np.full(PATH_SAMPLES, 1.0 / PATH_SAMPLES), False)


def expected_sum_power(model: LatticeModel, terms: np.ndarray, q: float,
                       sample: PathSample | None = None) -> tuple[float, bool]:
    """``E[(sum_i terms_i)**q]`` for nonnegative node terms; returns ``(value, exact)``."""
    if q == 1.0:
        return model.expected_sum(terms), True
    sample = sample or path_sample(model)
    sums = np.nansum(along_paths(np.nan_to_num(terms), sample.paths), axis=1)
    return float(np.sum(sample.weights * sums**q)), sample.exact


# -- norms ---------------------------------------------------------------------


class NormReport(NamedTuple):
    sup_p: float
    m_p: float
    var_p: float
    class_d: float
    exact: bool


def class_d_norm(Y: np.ndarray, lattice: LatticeModel) -> float:
    """``sup over stopping times of E|Y_tau|`` via the backward envelope of ``|Y|``."""
    N = lattice.N
    W = np.abs(Y[N, : N + 1])
    for i in range(N - 1, -1, -1):
        W = np.maximum(np.abs(Y[i, : i + 1]), 0.5 * (W[1:] + W[:-1]))
    return float(W[0])


def _variation_terms(sol) -> np.ndarray | None:
    lo = getattr(sol, "lower_increments", None)
    up = getattr(sol, "upper_increments", None)
    if lo is None and up is None:
        return None
    return np.nan_to_num(lo if lo is not None else 0.0) + np.nan_to_num(up if up is not None else 0.0)


def compute_norms(sol, data: ProblemData, p: float | None = None) -> NormReport:
    """``E sup|Y|^p``, ``E (sum Z^2 dt)^(p/2)``, ``E (sum |dK|)^p`` and the class (D) norm."""
    p = data.p if p is None else p
    if p <= 0:
        raise InvalidConfiguration("norm exponent must be positive")
    model = data.lattice
    sample = path_sample(model)
    sup_p = expected_running_max(model, np.abs(sol.Y) ** p)
    z2 = np.where(model.mask, np.nan_to_num(sol.Z) ** 2 * model.dt, np.nan)
    m_p, exact_m = expected_sum_power(model, z2, p / 2.0, sample)
    var_terms = _variation_terms(sol)
    if var_terms is None:
        var_p, exact_v = 0.0, True
    else:
        var_p, exact_v = expected_sum_power(model, np.abs(var_terms), p, sample)
    return NormReport(sup_p, m_p, var_p, class_d_norm(sol.Y, model), exact_m and exact_v)


# -- Ito-Tanaka convexity gap --------------------------------------------------


def convexity_residual(path, p: float) -> np.ndarray:
    """Per-step gap ``|x'|^p - |x|^p - p |x|^(p-1) sgn(x) (x' - x)``; nonnegative for p >= 1."""
    if p < 1:
        raise InvalidConfiguration(f"convexity residual needs p >= 1, got {p!r}")
    x = np.asarray(path, dtype=float)
    x0, x1 = x[:-1], x[1:]
    a0 = np.abs(x0)
    slope = p * np.where(a0 > 0, a0 ** (p - 1), 1.0 if p == 1 else 0.0) * sign_hat(x0)
    return np.abs(x1) ** p - a0**p - slope * (x1 - x0)


# -- Mokobodzki ----------------------------------------------------------------


class MokobodzkiReport(NamedTuple):
    feasible: bool
    witness: np.ndarray | None
    witness_norms: dict | None
    note: str


def doob_decomposition(model: LatticeModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-node predictable drift ``E_i X_{i+1} - X_i`` and martingale coefficient."""
    drift, coef = model.empty(), model.empty()
    for i in range(model.N):
        drift[i, : i + 1] = model.layer_expectation(X, i) - X[i, : i + 1]
        coef[i, : i + 1] = model.layer_coefficient(X, i)
    return drift, coef


def feasible_barriers(model: LatticeModel, L: np.ndarray, U: np.ndarray) -> bool:
    """``L <= U`` at every node."""
    return not np.any(model.valid(L) > model.valid(U))


def mokobodzki_check(data: ProblemData, candidate: ProcessSpec | None = None) -> MokobodzkiReport:
    """Feasibility of a process between the barriers and its semimartingale norms.

    Every adapted lattice process is a semimartingale, so feasibility reduces
    to ``L <= U`` at every node; the default witness is the midpoint.
    """
    if data.lower is None or data.upper is None:
        raise InvalidConfiguration("Mokobodzki check needs both barriers")
    model = data.lattice
    L, U = data.lower_values, data.upper_values
    note = ("on a finite lattice every adapted process is a semimartingale; "
            "feasibility reduces to L <= U nodewise")
    if not feasible_barriers(model, L, U):
        return MokobodzkiReport(False, None, None, note)
    X = 0.5 * (L + U) if candidate is None else candidate.node_values(model)
    if np.any(model.valid(X) < model.valid(L)) or np.any(model.valid(X) > model.valid(U)):
        return MokobodzkiReport(False, X, None, "candidate leaves the barrier corridor")
    p = data.p
    sample = path_sample(model)
    drift, coef = doob_decomposition(model, X)
    var, ex1 = expected_sum_power(model, np.abs(drift), p, sample)
    mart, ex2 = expected_sum_power(model, coef**2 * model.dt, p / 2.0, sample)
    fX = np.abs(data.generator(model.time_grid, X, 0.0))
    fX[-1] = np.where(model.mask[-1], 0.0, np.nan)
    gen, ex3 = expected_sum_power(model, fX * model.dt, p, sample)
    norms = {"martingale": mart, "variation": var, "generator": gen,
             "sup": expected_running_max(model, np.abs(X) ** p), "exact": ex1 and ex2 and ex3}
    return MokobodzkiReport(True, X, norms, note)


# -- a priori audit ------------------------------------------------------------


class AuditMember(NamedTuple):
    lhs: float
    rhs: float
    ratio: float
    K_total: float


class AuditReport(NamedTuple):
    members: tuple
    fitted_ratio: float
    max_ratio: float
    fitted_K: float
    max_K: float
    passed: bool


def _weights(model: LatticeModel, rate: float) -> np.ndarray:
    return np.exp(rate * model.time_grid)


def apriori_lhs(sol, data: ProblemData, p: float, a: float) -> float:
    """``E sup e^{apt}|Y|^p + E (sum e^{2as} Z^2 dt)^{p/2} + E (sum e^{as} dK)^p``."""
    model = data.lattice
    sample = path_sample(model)
    lhs = expected_running_max(model, _weights(model, a * p) * np.abs(sol.Y) ** p)
    z2 = np.where(model.mask, _weights(model, 2 * a) * np.nan_to_num(sol.Z) ** 2 * model.dt, np.nan)
    lhs += expected_sum_power(model, z2, p / 2.0, sample)[0]
    var = _variation_terms(sol)
    if var is not None:
        lhs += expected_sum_power(model, _weights(model, a) * np.abs(var), p, sample)[0]
    return lhs


def apriori_rhs(data: ProblemData, p: float, a: float, dominating: np.ndarray | None = None) -> float:
    """Data functional of the a priori estimate.

    ``f_t = |f(t, 0, 0)|`` bounds ``sgn(y) f(t, y, z) - mu |y| - lam |z|`` under
    the monotonicity and Lipschitz hypotheses.  With a barrier, the terms of
    a dominating process ``X >= Y`` are added.
    """
    model = data.lattice
    N = model.N
    sample = path_sample(model)
    T = model.grid.horizon
    prob_N = model.probabilities[N, : N + 1]
    rhs = float(np.sum(prob_N * np.exp(a * p * T) * np.abs(data.xi) ** p))
    times = model.times[:-1]
    _, _, c, _ = data.step_coefficients
    rhs += float(np.sum(np.exp(a * times) * np.abs(c) * model.dt)) ** p
    rhs += float(np.sum(np.exp(a * model.times[1:]) * np.abs(data.dv))) ** p
    if dominating is not None:
        X = dominating
        Xp = np.maximum(X, 0.0)
        rhs += expected_running_max(model, (_weights(model, a) * Xp) ** p)
        fneg = np.maximum(-data.generator(model.time_grid, X, 0.0), 0.0)
        fneg[-1] = np.where(model.mask[-1], 0.0, np.nan)
        rhs += expected_sum_power(model, _weights(model, a) * fneg * model.dt, p, sample)[0]
        drift_x = np.where(model.mask, max(a, 0.0) * _weights(model, a) * Xp * model.dt, np.nan)
        drift_x[-1] = np.where(model.mask[-1], 0.0, np.nan)
        rhs += expected_sum_power(model, drift_x, p, sample)[0]
    return rhs


def apriori_audit(family, data: ProblemData, p: float, a: float,
                  dominating: np.ndarray | None = None) -> AuditReport:
    """Uniform-boundedness audit of the implied a priori constant over a family.

    The ratio ``lhs / rhs`` is fitted on the first member; the audit passes
    when no member exceeds ``1.01`` times the fitted ratio and no member's
    expected total variation exceeds ``1.01`` times the first member's.
    """
    if p <= 1:
        raise InvalidConfiguration("a priori audit needs p > 1")
    gen = data.generator
    bound = gen.mu + gen.lam**2 / min(1.0, p - 1.0)
    if a < bound:
        raise InvalidConfiguration(f"a = {a!r} below mu + lam^2 / min(1, p - 1) = {bound!r}")
    members = []
    rhs = apriori_rhs(data, p, a, dominating)
    for sol in family:
        lhs = apriori_lhs(sol, data, p, a)
        var = _variation_terms(sol)
        k_total = 0.0 if var is None else data.lattice.expected_sum(np.abs(var))
        members.append(AuditMember(lhs, rhs, lhs / rhs if rhs > 0 else np.inf, k_total))
    if not members:
        return AuditReport((), 0.0, 0.0, 0.0, 0.0, True)
    fitted, fitted_k = members[0].ratio, members[0].K_total
    max_ratio = max(m.ratio for m in members)
    max_k = max(m.K_total for m in members)
    passed = (max_ratio <= AUDIT_FACTOR * fitted) and (max_k <= AUDIT_FACTOR * fitted_k)
    return AuditReport(tuple(members), fitted, max_ratio, fitted_k, max_k, passed)
