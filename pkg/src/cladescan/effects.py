"""Per-branch additive logistic MAP fits on expected dosages and the
BF-weighted normal-mixture posterior of the log-odds effect size."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .data import DataError


class FitError(DataError):
    """Degenerate input or non-convergence of a branch fit."""


@dataclass
class BranchEffect:
    branch_id: int
    beta_hat: float
    sigma_hat: float
    log_bf: float  # natural log
    prior_weight: float


@dataclass
class EffectPosterior:
    components: list[BranchEffect]
    weights: np.ndarray  # mixture weights, sum to 1
    beta_star: float

    @property
    def odds_ratio(self) -> float:
        return math.exp(self.beta_star)

    def density(self, beta) -> np.ndarray:
        """Mixture-of-normals posterior density at beta."""
        beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        out = np.zeros_like(beta)
        for w, comp in zip(self.weights, self.components):
            s = comp.sigma_hat
            out += (
                w
                / (s * math.sqrt(2.0 * math.pi))
                * np.exp(-0.5 * ((beta - comp.beta_hat) / s) ** 2)
            )
        return out


def branch_logistic_map(
    dosages: np.ndarray,
    phenotypes: np.ndarray,
    effect_prior_sd: float = 0.2,
    max_iter: int = 50,
    tol: float = 1e-8,
) -> tuple[float, float]:
    """MAP fit of logit P(case) = mu + beta * e with a zero-mean normal prior on
    beta (flat on mu). Returns (beta_hat, sigma_hat) with sigma_hat from the
    inverse observed information at the MAP."""
    e = np.asarray(dosages, dtype=np.float64)
    y = np.asarray(phenotypes, dtype=np.float64)
    if e.shape != y.shape:
        raise DataError("dosage and phenotype lengths differ")
    if not (np.any(y == 0) and np.any(y == 1)):
        raise FitError("need at least one case and one control")
    if np.ptp(e) == 0.0:
        raise FitError("degenerate covariate: all dosages identical")
    if effect_prior_sd <= 0:
        raise DataError("effect prior sd must be positive")
    tau2 = effect_prior_sd**2

    x = np.column_stack([np.ones_like(e), e])
    beta = np.zeros(2)
    for _ in range(max_iter):
        eta = x @ beta
        p = expit(eta)
        grad = x.T @ (y - p)
        grad[1] -= beta[1] / tau2
        w = p * (1.0 - p)
        info = x.T @ (x * w[:, None])
        info[1, 1] += 1.0 / tau2
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"singular information matrix: {exc}") from exc
        beta = beta + step
        if np.linalg.norm(grad) < tol:
            break
    else:
        eta = x @ beta
        p = expit(eta)
        grad = x.T @ (y - p)
        grad[1] -= beta[1] / tau2
        if np.linalg.norm(grad) >= tol:
            raise FitError("logistic MAP did not converge")
    eta = x @ beta
    p = expit(eta)
    w = p * (1.0 - p)
    info = x.T @ (x * w[:, None])
    info[1, 1] += 1.0 / tau2
    cov = np.linalg.inv(info)
    return float(beta[1]), float(math.sqrt(cov[1, 1]))


def mixture_effect(effects: list[BranchEffect]) -> EffectPosterior:
    """Combine per-branch fits: weights proportional to BF_b * P(b); the point
    estimate is the weighted mean of the branch MAP estimates."""
    if not effects:
        raise FitError("all branches failed to fit")
    log_w = np.array([c.log_bf + math.log(c.prior_weight) for c in effects])
    log_w -= logsumexp(log_w)
    w = np.exp(log_w)
    beta_star = float(np.sum(w * np.array([c.beta_hat for c in effects])))
    return EffectPosterior(components=effects, weights=w, beta_star=beta_star)
