"""Exact large-deviation machinery on finite-state Markov chains.

Finite chains are the desk-scale ground truth for occupation-measure
asymptotics: the level-2 rate function has the classical variational
form

    J(nu) = sup_{u > 0} sum_x nu(x) log(u(x) / (P u)(x)),

computable by concave maximization over log u, hitting-time exponential
moments reduce to linear solves, and empirical occupation statistics can
be compared against both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

__all__ = [
    "FiniteChain",
    "ProbVector",
    "as_prob_vector",
    "dv_rate",
    "DVConvergenceError",
    "scgf",
    "legendre_rate",
    "HittingMomentExact",
    "exp_hitting_moment_exact",
    "divergence_threshold",
    "total_variation",
    "sample_occupation",
    "sample_hitting_times",
    "survival_decay_rate",
    "simplex_grid",
    "rate_infimum_on_tv_complement",
    "empirical_ldp_check",
]


class DVConvergenceError(RuntimeError):
    """Rate-function maximization stalled; carries the final gradient norm."""

    def __init__(self, grad_norm: float):
        self.grad_norm = grad_norm
        super().__init__(
            f"rate maximization did not converge (final |grad| = {grad_norm:.3e})"
        )


@dataclass(frozen=True)
class FiniteChain:
    """Row-stochastic transition matrix with optional state labels."""

    matrix: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        p = np.asarray(self.matrix, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(p < 0.0):
            raise ValueError("transition probabilities must be nonnegative")
        rows = p.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-12):
            worst = int(np.argmax(np.abs(rows - 1.0)))
            raise ValueError(f"row {worst} sums to {rows[worst]!r}, not 1")
        object.__setattr__(self, "matrix", p)
        if self.labels is not None and len(self.labels) != p.shape[0]:
            raise ValueError("label count does not match state count")

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def is_irreducible(self) -> bool:
        reach = np.eye(self.n_states, dtype=bool) | (self.matrix > 0.0)
        power = reach.copy()
        for _ in range(self.n_states - 1):
            power = power @ reach
        return bool(np.all(power))

    def is_aperiodic(self) -> bool:
        """Period-1 check via BFS levels (assumes irreducibility)."""
        adj = self.matrix > 0.0
        level = np.full(self.n_states, -1)
        level[0] = 0
        queue = [0]
        while queue:
            x = queue.pop()
            for y in np.nonzero(adj[x])[0]:
                if level[y] < 0:
                    level[y] = level[x] + 1
                    queue.append(int(y))
        gcd = 0
        for x, y in zip(*np.nonzero(adj)):
            gcd = math.gcd(gcd, level[x] + 1 - level[y])
        return gcd == 1

    def stationary(self) -> np.ndarray:
        """Invariant distribution via the unit left eigenvector."""
        vals, vecs = np.linalg.eig(self.matrix.T)
        k = int(np.argmin(np.abs(vals - 1.0)))
        pi = np.real(vecs[:, k])
        pi = np.abs(pi)
        return pi / pi.sum()


ProbVector = np.ndarray


def as_prob_vector(weights, tol: float = 1e-12) -> np.ndarray:
    """Validate simplex membership and return a float copy."""
    nu = np.asarray(weights, dtype=float)
    if np.any(nu < -tol):
        raise ValueError("negative mass in probability vector")
    total = nu.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"mass {total!r} differs from 1 beyond tolerance")
    return np.clip(nu, 0.0, None)


# -- level-2 rate function ---------------------------------------------------


def _rate_objective(chain: FiniteChain, nu: np.ndarray):
    with np.errstate(divide="ignore"):
        log_p = np.log(chain.matrix)

    def value_and_grad(phi_free: np.ndarray):
        phi = np.concatenate(([0.0], phi_free))
        shifted = log_p + phi[None, :]
        lse = logsumexp(shifted, axis=1)
        value = float(np.dot(nu, phi - lse))
        tilted = np.exp(shifted - lse[:, None])
        grad = nu - tilted.T @ nu
        return -value, -grad[1:]

    return value_and_grad


def dv_rate(
    nu, chain: FiniteChain, grad_tol: float = 1e-10, max_iter: int = 2000
) -> float:
    """Level-2 occupation rate J(nu) by concave maximization over log u.

    The scale invariance u -> c u is removed by pinning log u = 0 at the
    first state.  Raises DVConvergenceError when the final full gradient
    norm exceeds `grad_tol` (e.g. when the supremum is not attained).
    """
    nu = as_prob_vector(nu)
    if nu.size != chain.n_states:
        raise ValueError("distribution size does not match chain")
    fun = _rate_objective(chain, nu)
    x0 = np.zeros(chain.n_states - 1)
    best = None
    for attempt in range(3):
        res = optimize.minimize(
            fun,
            x0,
            jac=True,
            method="BFGS",
            options={"gtol": grad_tol * 0.1, "maxiter": max_iter},
        )
        gnorm = float(np.linalg.norm(res.jac))
        if best is None or gnorm < best[0]:
            best = (gnorm, res)
        if gnorm <= grad_tol:
            break
        x0 = res.x + 0.01 * (attempt + 1) * np.random.default_rng(attempt).standard_normal(x0.size)
    gnorm, res = best
    if gnorm > grad_tol:
        raise DVConvergenceError(gnorm)
    return max(0.0, -float(res.fun))


# -- cumulant generating function and its Legendre transform ----------------


def scgf(chain: FiniteChain, potential) -> float:
    """Scaled cumulant generating function: log spectral radius of P diag(e^V)."""
    v = np.asarray(potential, dtype=float)
    tilted = chain.matrix * np.exp(v)[None, :]
    return float(np.log(np.max(np.abs(np.linalg.eigvals(tilted)))))


def legendre_rate(chain: FiniteChain, potential, mean_value: float) -> float:
    """Rate of the additive functional at a queried mean: sup_t (t m - scgf(t V))."""
    v = np.asarray(potential, dtype=float)
    if mean_value > np.max(v) or mean_value < np.min(v):
        return math.inf

    def neg(t: float) -> float:
        return scgf(chain, t * v) - t * mean_value

    span = 1.0
    while span < 1e6:
        res = optimize.minimize_scalar(neg, bounds=(-span, span), method="bounded")
        if abs(res.x) < 0.95 * span:
            return max(0.0, -float(res.fun))
        span *= 8.0
    return max(0.0, -float(res.fun))


# -- hitting-time exponential moments ----------------------------------------


@dataclass(frozen=True)
class HittingMomentExact:
    value: float
    diverged: bool
    threshold: float  # sup of admissible lam: -log rho(P restricted off the set)


def divergence_threshold(chain: FiniteChain, target: set[int] | list[int]) -> float:
    """-log spectral radius of the chain restricted to the complement."""
    target = sorted(set(int(s) for s in target))
    comp = [s for s in range(chain.n_states) if s not in target]
    if not comp:
        return math.inf
    sub = chain.matrix[np.ix_(comp, comp)]
    rho = float(np.max(np.abs(np.linalg.eigvals(sub)))) if sub.size else 0.0
    if rho == 0.0:
        return math.inf
    return -math.log(rho)


def exp_hitting_moment_exact(
    chain: FiniteChain,
    target: set[int] | list[int],
    lam: float,
    start: int,
    from_one: bool = False,
) -> HittingMomentExact:
    """E^start[exp(lam tau)] for tau the first entry step into `target`.

    tau counts steps (n >= 0); with from_one=True the infimum runs over
    n >= 1.  Solves h = e^lam (P_cc h + P_ck 1) on the complement and
    declares divergence when e^lam rho(P_cc) >= 1.
    """
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    target = sorted(set(int(s) for s in target))
    if not target:
        raise ValueError("target set is empty")
    thr = divergence_threshold(chain, target)
    if not from_one and start in target:
        return HittingMomentExact(1.0, False, thr)
    if lam >= thr - 1e-13:
        return HittingMomentExact(math.inf, True, thr)
    comp = [s for s in range(chain.n_states) if s not in target]
    p = chain.matrix
    h_full = np.zeros(chain.n_states)
    if comp:
        pcc = p[np.ix_(comp, comp)]
        to_target = p[np.ix_(comp, target)].sum(axis=1)
        rhs = math.exp(lam) * to_target
        h = np.linalg.solve(np.eye(len(comp)) - math.exp(lam) * pcc, rhs)
        h_full[comp] = h
    h_full[target] = 1.0
    if not from_one:
        return HittingMomentExact(float(h_full[start]), False, thr)
    row = p[start]
    value = math.exp(lam) * float(
        row[target].sum() + sum(row[c] * h_full[c] for c in comp)
    )
    return HittingMomentExact(value, False, thr)


# -- total variation ----------------------------------------------------------


def total_variation(nu1, nu2) -> float:
    """sup over |psi| <= 1 of |sum psi (nu1 - nu2)| = sum |nu1 - nu2|."""
    return float(np.sum(np.abs(np.asarray(nu1, float) - np.asarray(nu2, float))))


# -- Monte Carlo --------------------------------------------------------------


def _step_states(chain_cum: np.ndarray, states: np.ndarray, rng) -> np.ndarray:
    u = rng.random(states.size)
    rows = chain_cum[states]
    return (rows < u[:, None]).sum(axis=1)


def sample_occupation(
    chain: FiniteChain,
    horizon: int,
    n_runs: int,
    rng: np.random.Generator,
    start: int | np.ndarray | None = None,
) -> np.ndarray:
    """Empirical occupation vectors L_T, shape (n_runs, n_states).

    `start` may be a state index, an array of indices, or None to draw
    initial states from the invariant distribution.
    """
    n = chain.n_states
    cum = np.cumsum(chain.matrix, axis=1)
    if start is None:
        pi = chain.stationary()
        states = rng.choice(n, size=n_runs, p=pi)
    elif np.isscalar(start):
        states = np.full(n_runs, int(start))
    else:
        states = np.asarray(start, dtype=int).copy()
    counts = np.zeros((n_runs, n))
    runs = np.arange(n_runs)
    for _ in range(horizon):
        counts[runs, states] += 1.0
        states = _step_states(cum, states, rng)
    return counts / horizon


def sample_hitting_times(
    chain: FiniteChain,
    target: set[int] | list[int],
    start: int,
    n_runs: int,
    horizon: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """First-entry step counts into `target`; censored runs flagged."""
    target = np.asarray(sorted(set(int(s) for s in target)))
    cum = np.cumsum(chain.matrix, axis=1)
    states = np.full(n_runs, int(start))
    taus = np.zeros(n_runs, dtype=int)
    active = ~np.isin(states, target)
    for step in range(1, horizon + 1):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        states[idx] = _step_states(cum, states[idx], rng)
        arrived = np.isin(states[idx], target)
        taus[idx[arrived]] = step
        active[idx[arrived]] = False
    censored = active
    taus[censored] = horizon
    return taus, censored


def survival_decay_rate(taus: np.ndarray, censored: np.ndarray) -> float:
    """Fitted exponential decay rate of P(tau > n) from Monte Carlo samples.

    Least-squares slope of log survival over the range where at least
    ~30 samples survive, skipping the short-time transient.
    """
    horizon = int(taus.max())
    grid = np.arange(1, horizon + 1)
    surv = np.array([(taus > n).sum() + censored.sum() * 0 for n in grid], float)
    surv = np.array([np.sum(taus > n) for n in grid], dtype=float)
    n_total = taus.size
    keep = surv >= 30.0
    if keep.sum() < 5:
        raise ValueError("not enough surviving mass to fit a decay rate")
    lo = int(np.argmax(surv / n_total < 0.9)) if np.any(surv / n_total < 0.9) else 0
    idx = np.nonzero(keep)[0]
    idx = idx[idx >= lo]
    if idx.size < 5:
        idx = np.nonzero(keep)[0]
    slope = np.polyfit(grid[idx], np.log(surv[idx] / n_total), 1)[0]
    return float(-slope)


# -- empirical LDP comparison --------------------------------------------------


def simplex_grid(n_states: int, resolution: int):
    """All probability vectors with coordinates multiple of 1/resolution."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + [remaining])
            return
        for v in range(remaining + 1):
            rec(prefix + [v], remaining - v, slots - 1)

    rec([], resolution, n_states)
    return np.array(out, dtype=float) / resolution


def rate_infimum_on_tv_complement(
    chain: FiniteChain,
    radius: float,
    resolution: int = 20,
    grad_tol: float = 1e-8,
) -> tuple[float, np.ndarray]:
    """Grid infimum of J over {nu: ||nu - pi||_var >= radius}."""
    pi = chain.stationary()
    best_val, best_nu = math.inf, None
    for nu in simplex_grid(chain.n_states, resolution):
        if total_variation(nu, pi) < radius:
            continue
        try:
            val = dv_rate(nu, chain, grad_tol=grad_tol)
        except DVConvergenceError:
            continue
        if val < best_val:
            best_val, best_nu = val, nu
    return best_val, best_nu


@dataclass
class LdpCheckReport:
    horizon: int
    n_runs: int
    hits: int
    empirical_rate: float      # -(1/T) log fraction; inf when no hits
    reference_rate: float      # grid infimum of J over the target
    ratio: float               # empirical / reference


def empirical_ldp_check(
    chain: FiniteChain,
    radius: float,
    horizons: list[int],
    n_runs: int,
    rng: np.random.Generator,
    resolution: int = 20,
) -> list[LdpCheckReport]:
    """Decay rate of P(||L_T - pi||_var >= radius) against the rate infimum."""
    if not (chain.is_irreducible() and chain.is_aperiodic()):
        raise ValueError("chain must be irreducible and aperiodic")
    pi = chain.stationary()
    ref, _ = rate_infimum_on_tv_complement(chain, radius, resolution)
    reports = []
    for horizon in horizons:
        occ = sample_occupation(chain, horizon, n_runs, rng)
        tv = np.abs(occ - pi[None, :]).sum(axis=1)
        hits = int(np.sum(tv >= radius))
        if hits == 0:
            rate = math.inf
        else:
            rate = -math.log(hits / n_runs) / horizon
        ratio = rate / ref if ref > 0.0 else math.inf
        reports.append(LdpCheckReport(horizon, n_runs, hits, rate, ref, ratio))
    return reports
