"""Relative-completions analysis of a completion-labelled service process.

Given a :class:`~marcq.chains.LabeledCTMC` this module computes the
time-average distribution ``Y``, the throughput threshold ``lambda*``, the
departure-average distribution ``Y_d``, the relative completions ``Delta(y)``
and from those the dominant term of the mean response time

    E[T] ~ (1/lambda*) (1 + Delta(Y_d)) / (1 - lambda/lambda*).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.lapack import dgecon

from .simulate import chain_completions
from .chains import LabeledCTMC

DENSE_LIMIT = 2000
MAX_COND = 1e12
POWER_TOL = 1e-12
POWER_MAXITER = 2_000_000


class NumericError(ArithmeticError):
    """A linear solve was singular or too ill-conditioned to trust."""


@dataclass(frozen=True)
class MarcSolution:
    stationary: np.ndarray
    lambda_star: float
    departure: np.ndarray
    delta: np.ndarray
    delta_yd: float
    labels: tuple = ()

    def prediction(self) -> "PredictionCurve":
        return PredictionCurve(self.lambda_star, self.delta_yd)

    def to_dict(self) -> dict:
        return {
            "lambda_star": float(self.lambda_star),
            "states": list(self.labels),
            "stationary": [float(x) for x in self.stationary],
            "departure": [float(x) for x in self.departure],
            "delta": [float(x) for x in self.delta],
            "delta_yd": float(self.delta_yd),
        }


@dataclass(frozen=True)
class PredictionCurve:
    """Dominant-term mean response time and queue length as functions of lambda."""

    lambda_star: float
    delta_yd: float

    def __call__(self, lam):
        return predict(self, lam)

    def evaluate(self, lams) -> dict:
        return {float(l): predict(self, l) for l in lams}


def _lu_solve_checked(A, b):
    lu, piv = sla.lu_factor(A, check_finite=True)
    anorm = np.linalg.norm(A, 1)
    rcond, info = dgecon(lu, anorm, norm="1")
    if info != 0 or rcond == 0 or 1.0 / rcond > MAX_COND:
        cond = np.inf if rcond == 0 else 1.0 / rcond
        raise NumericError(f"linear system is ill-conditioned (condition estimate {cond:.3g})")
    return sla.lu_solve((lu, piv), b)


def stationary(chain: LabeledCTMC) -> np.ndarray:
    """Time-average stationary distribution of ``chain``."""
    n = chain.n_states
    if n == 1:
        return np.ones(1)
    if not chain.is_irreducible():
        raise NumericError("chain is reducible; stationary distribution is not unique")
    if n <= DENSE_LIMIT:
        A = chain.generator().T
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = _lu_solve_checked(A, b)
    else:
        pi = _power_iteration(chain)
    pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
    if np.any(pi < -1e-12):
        raise NumericError("stationary solve produced negative probabilities")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _power_iteration(chain):
    n = chain.n_states
    unif = 1.1 * chain.total_rate.max()
    P = (chain.sparse_rates() / unif).tolil()
    P.setdiag(P.diagonal() + 1.0 - chain.total_rate / unif)
    PT = P.tocsr().T.tocsr()
    x = np.full(n, 1.0 / n)
    for _ in range(POWER_MAXITER):
        y = PT @ x
        y /= y.sum()
        if np.abs(y - x).sum() < POWER_TOL:
            return y
        x = y
    raise NumericError("power iteration did not converge")


def balance_residual(chain: LabeledCTMC, pi) -> float:
    inflow = chain.sparse_rates().T @ pi
    return float(np.max(np.abs(pi * chain.total_rate - inflow)))


def throughput(chain: LabeledCTMC, pi) -> float:
    return float(np.dot(pi, chain.completion_rate))


def departure_dist(chain: LabeledCTMC, pi, lambda_star: float) -> np.ndarray:
    """Distribution of the service state just after a completion."""
    yd = chain.sparse_rates(label=1).T @ np.asarray(pi) / lambda_star
    return np.asarray(yd).reshape(-1)


def relative_completions(chain: LabeledCTMC, pi, lambda_star: float) -> np.ndarray:
    """Solve the forward recurrence for Delta, normalised so that ``pi @ Delta = 0``.

    The recurrence fixes Delta only up to a constant, so one state is pinned
    to zero, the reduced system solved, and the result shifted.  The pinned
    state is the most probable one: pinning a rarely visited state leaves a
    badly conditioned system.
    """
    n = chain.n_states
    if n == 1:
        return np.zeros(1)
    pi = np.asarray(pi)
    anchor = int(np.argmax(pi))
    keep = np.flatnonzero(np.arange(n) != anchor)
    r = chain.completion_rate - lambda_star
    if n <= DENSE_LIMIT:
        M = -chain.generator()
        sub = _lu_solve_checked(M[np.ix_(keep, keep)], r[keep])
    else:
        M = (sp.diags(chain.total_rate) - chain.sparse_rates()).tocsr()
        M = M[keep][:, keep].tocsc()
        sub = spla.spsolve(M, r[keep])
        if not np.all(np.isfinite(sub)):
            raise NumericError("sparse relative-completions solve failed")
    delta = np.zeros(n)
    delta[keep] = sub
    return delta - np.dot(pi, delta)


def recurrence_residual(chain: LabeledCTMC, delta, lambda_star: float) -> float:
    R = chain.sparse_rates()
    rhs = (chain.completion_rate - lambda_star) / chain.total_rate + (R @ delta) / chain.total_rate
    return float(np.max(np.abs(delta - rhs)))


def generator_residual(chain: LabeledCTMC, solution: MarcSolution) -> float:
    """max_y |sum_{y',a} mu_{y,y',a} (Delta(y') - Delta(y)) - (lambda* - mu_{y,.,1})|."""
    d = solution.delta
    drift = np.zeros(chain.n_states)
    np.add.at(drift, chain.src, chain.rate * (d[chain.dst] - d[chain.src]))
    return float(np.max(np.abs(drift - (solution.lambda_star - chain.completion_rate))))


def solve(chain: LabeledCTMC) -> MarcSolution:
    pi = stationary(chain)
    lam = throughput(chain, pi)
    if not lam > 0:
        raise NumericError("service process never completes jobs")
    yd = departure_dist(chain, pi, lam)
    delta = relative_completions(chain, pi, lam)
    return MarcSolution(pi, lam, yd, delta, float(np.dot(yd, delta)), tuple(chain.labels))


def predict(solution, lam: float):
    """Dominant terms ``(E[T], E[Q])`` at arrival rate ``lam``."""
    ls = solution.lambda_star
    if not 0 < lam < ls:
        raise ValueError(f"arrival rate must lie in (0, {ls}), got {lam}")
    eq = (1.0 + solution.delta_yd) / (1.0 - lam / ls)
    return eq / ls, eq


def estimate_delta_mc(chain: LabeledCTMC, state: int, horizon: float, reps: int, seed: int,
                      level: float = 0.95, lambda_star: float | None = None):
    """Monte-Carlo estimate of ``E[C(y, t)] - lambda* t`` at ``t = horizon``.

    Returns ``(estimate, half_width)`` of a normal confidence interval.
    ``lambda_star`` defaults to the exact throughput of ``chain``.
    """
    from scipy.stats import norm

    if lambda_star is None:
        lambda_star = throughput(chain, stationary(chain))
    counts = chain_completions(chain, state, horizon, reps, seed)
    est = counts.mean() - lambda_star * horizon
    if reps < 2:
        return float(est), float("inf")
    half = norm.ppf(0.5 + level / 2) * counts.std(ddof=1) / np.sqrt(reps)
    return float(est), float(half)
