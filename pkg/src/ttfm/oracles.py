"""Brute-force reference computations for testing.

Nothing here imports the choice model: utilities are spelled out term by
term in plain Python so agreement with the vectorised code is evidence
rather than tautology.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

MAX_ABS_UTILITY = 30.0


def _get(params, name):
    return params[name] if isinstance(params, dict) else getattr(params, name)


def _dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def oracle_utility(params, u, i, week, distance):
    lam, theta, alpha = _get(params, "lam"), _get(params, "theta"), _get(params, "alpha")
    gamma, beta = _get(params, "gamma"), _get(params, "beta")
    mu, delta = _get(params, "mu"), _get(params, "delta")
    time_term = _dot(mu[i], delta[week]) if 0 <= week < len(delta) else 0.0
    return (float(lam[i]) + _dot(theta[u], alpha[i]) + time_term
            - _dot(gamma[u], beta[i]) * math.log(distance))


def oracle_loglik(visits, params, choice_sets):
    """Naive log-likelihood of ``visits``: (user, week, chosen restaurant) triples.

    ``choice_sets`` maps a user index (or a visit index, when given as a
    list with one entry per visit) to its (restaurant, distance) pairs.
    Utilities must stay within +-30 so plain exponentials cannot overflow.
    """
    total = 0.0
    for n, (u, week, chosen) in enumerate(visits):
        alts = choice_sets[n] if isinstance(choice_sets, list) else choice_sets[u]
        num = None
        den = 0.0
        for i, d in alts:
            util = oracle_utility(params, u, i, week, d)
            if abs(util) > MAX_ABS_UTILITY:
                raise OverflowError(f"|utility| {abs(util):.1f} exceeds the oracle's range")
            e = math.exp(util)
            den += e
            if i == chosen:
                num = e
        if num is None:
            raise ValueError(f"visit {n}: chosen restaurant {chosen} not offered")
        total += math.log(num / den)
    return total


@dataclass
class LinearChoiceDesign:
    """Choices whose utilities are affine in a small latent vector ``z``.

    Utility of slot ``a`` on visit ``v`` is ``offset[v, a] + features[v, a] . z``
    with ``z ~ N(0, diag(prior_sd**2))``.
    """

    offset: np.ndarray     # (V, A)
    features: np.ndarray   # (V, A, k)
    mask: np.ndarray       # (V, A)
    chosen: np.ndarray     # (V,)
    prior_sd: np.ndarray   # (k,)

    @property
    def k(self):
        return self.features.shape[2]

    def loglik(self, Z):
        """Log-likelihood at each row of ``Z`` (G, k)."""
        Z = np.atleast_2d(Z)
        U = self.offset[None] + np.einsum("vak,gk->gva", self.features, Z)
        U = np.where(self.mask[None], U, -np.inf)
        rows = np.arange(len(self.chosen))
        return (U[:, rows, self.chosen] - logsumexp(U, axis=2)).sum(axis=1)


def oracle_evidence_quadrature(design, n_grid=401, width=6.0, chunk=20_000):
    """log p(y) by tensor-product trapezoid quadrature over the prior.

    The grid spans ``width`` prior standard deviations each side of zero.
    """
    k = design.k
    if k > 2:
        raise ValueError(f"quadrature supports at most 2 latent scalars, got {k}")
    if k == 0:
        return float(design.loglik(np.zeros((1, 0)))[0])
    sd = np.asarray(design.prior_sd, float)
    axes = [np.linspace(-width * s, width * s, n_grid) for s in sd]
    logw1 = []
    for ax in axes:
        w = np.full(n_grid, ax[1] - ax[0])
        w[[0, -1]] *= 0.5
        logw1.append(np.log(w))
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([m.ravel() for m in mesh], axis=1)
    logw = sum(np.meshgrid(*logw1, indexing="ij")).ravel()
    logprior = (-0.5 * (Z / sd) ** 2 - np.log(sd) - 0.5 * math.log(2 * math.pi)).sum(axis=1)
    parts = [design.loglik(Z[s:s + chunk]) for s in range(0, len(Z), chunk)]
    return float(logsumexp(np.concatenate(parts) + logprior + logw))


def gaussian_elbo_quadrature(design, means, sds, n_nodes=80):
    """ELBO of an independent Gaussian q over ``z`` via Gauss-Hermite nodes."""
    k = design.k
    means, sds = np.asarray(means, float), np.asarray(sds, float)
    prior_var = np.asarray(design.prior_sd, float) ** 2
    kl = 0.5 * np.sum((sds ** 2 + means ** 2) / prior_var - 1 - np.log(sds ** 2 / prior_var))
    if k == 0:
        return float(design.loglik(np.zeros((1, 0)))[0])
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / w.sum()
    mesh = np.meshgrid(*[x] * k, indexing="ij")
    Z = means + sds * np.stack([m.ravel() for m in mesh], axis=1)
    W = np.prod(np.stack(np.meshgrid(*[w] * k, indexing="ij")), axis=0).ravel()
    return float(W @ design.loglik(Z) - kl)
