"""Exponential natural evolution strategy over block reweighting factors.

The search distribution is N(mu, Sigma) with Sigma = e^A (e^A)^T. ``A`` is
kept symmetric: after each natural-gradient step the new covariance
e^A exp(eta_sigma * G) e^A is re-factored as e^{2A'}. Because the standard
normal is rotation invariant this is the same distribution the canonical
multiplicative update e^A <- e^A exp(eta_sigma/2 * G) produces, while ``A``
stays a well-defined matrix logarithm.
"""

import math

import numpy as np

from .errors import ContractError, InitError, SingularityError
from .tensor import matrix_exp, sym_logm


def default_population(dim):
    return 4 + int(math.floor(3.0 * math.log(dim)))


def default_eta_sigma(dim):
    return (9.0 + 3.0 * math.log(dim)) / (5.0 * dim * math.sqrt(dim))


def utilities(fitness):
    """Rank-based fitness shaping, best candidate first.

    ``u_i = max(0, ln(lam/2 + 1) - ln(rank_i))`` normalised to sum 1, minus
    ``1/lam``. Tied fitness values share the mean utility of their ranks.
    """
    f = np.asarray(fitness, dtype=np.float64)
    lam = f.size
    raw = np.maximum(0.0, math.log(lam / 2.0 + 1.0) - np.log(np.arange(1, lam + 1)))
    by_rank = raw / raw.sum() - 1.0 / lam
    order = np.argsort(-f, kind="stable")
    sorted_f = f[order]
    u_sorted = by_rank.copy()
    start = 0
    while start < lam:
        stop = start + 1
        while stop < lam and sorted_f[stop] == sorted_f[start]:
            stop += 1
        if stop - start > 1:
            u_sorted[start:stop] = by_rank[start:stop].mean()
        start = stop
    u = np.empty(lam)
    u[order] = u_sorted
    return u


class XNES:
    """Ask/tell xNES with maximisation convention.

    Args:
        dim: search dimension B.
        sigma_init: None for the identity, or an SPD (B, B) matrix for Sigma.
        seed: seed for the candidate sampler.
        mean: optional initial mean (defaults to zeros).
    """

    def __init__(self, dim, sigma_init=None, seed=0, mean=None, popsize=None,
                 eta_mu=1.0, eta_sigma=None):
        if dim < 1:
            raise InitError("dimension must be at least 1")
        self.dim = dim
        self.mu = np.zeros(dim) if mean is None else np.asarray(mean, dtype=np.float64).copy()
        if sigma_init is None:
            self.A = np.zeros((dim, dim))
        else:
            s = np.asarray(sigma_init, dtype=np.float64)
            if s.shape != (dim, dim):
                raise InitError(f"sigma_init must be {dim}x{dim}")
            try:
                self.A = 0.5 * sym_logm(s)
            except (SingularityError, ValueError) as exc:
                raise InitError(f"sigma_init is not symmetric positive definite: {exc}") from None
        self.popsize = default_population(dim) if popsize is None else popsize
        self.eta_mu = eta_mu
        self.eta_sigma = default_eta_sigma(dim) if eta_sigma is None else eta_sigma
        self.iteration = 0
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._factor = matrix_exp(self.A)
        self._noise = None

    @property
    def factor(self):
        """e^A."""
        return self._factor

    @property
    def sigma(self):
        return self._factor @ self._factor.T

    def ask(self):
        """Draw ``popsize`` candidates c = mu + e^A n (rows of the result)."""
        self._noise = self.rng.standard_normal((self.popsize, self.dim))
        return self.mu + self._noise @ self._factor.T

    def tell(self, fitness):
        """Natural-gradient update from the fitness of the last ``ask``."""
        if self._noise is None:
            raise ContractError("tell() called without a preceding ask()")
        f = np.asarray(fitness, dtype=np.float64)
        if f.shape != (self.popsize,):
            raise ContractError(f"expected {self.popsize} fitness values, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ContractError("fitness values must be finite")
        u = utilities(f)
        n = self._noise
        grad_mu = u @ n
        grad_m = (n * u[:, None]).T @ n - u.sum() * np.eye(self.dim)
        self.mu = self.mu + self.eta_mu * (self._factor @ grad_mu)
        if self.eta_sigma != 0.0:
            inner = matrix_exp(self.eta_sigma * 0.5 * (grad_m + grad_m.T))
            sigma = self._factor @ inner @ self._factor.T
            self.A = 0.5 * sym_logm(0.5 * (sigma + sigma.T))
            self._factor = matrix_exp(self.A)
        self.iteration += 1
        self._noise = None

    def global_hessian_surrogate(self):
        """Sigma^{-1} with unit scale; equals e^{-2A} for symmetric A."""
        return matrix_exp(-2.0 * self.A)

    def snapshot(self):
        return {
            "mu": self.mu.copy(),
            "A": self.A.copy(),
            "iteration": self.iteration,
            "seed": self.seed,
            "popsize": self.popsize,
            "eta_mu": self.eta_mu,
            "eta_sigma": self.eta_sigma,
            "rng_state": self.rng.bit_generator.state,
        }
