"""Utility, choice probabilities and priors of the travel-time factorization model.

Utility of user ``u`` for restaurant ``i`` on a trip in week ``w``::

    lam_i + theta_u . alpha_i + mu_i . delta_w - (gamma_u . beta_i) * log(d_ui)

Choices are softmax over the available alternatives. ``alpha_i`` and
``beta_i`` have Gaussian priors centred on ``H_alpha x_i`` and ``H_beta x_i``
where ``x_i`` are restaurant covariates and the H matrices are block masked
so each quarter of latent rows sees one covariate group (or none).

Two layers live here. Small scalar helpers (``utility``,
``choice_probabilities``...) work on one ``LatentParams`` and are meant for
tests and ad-hoc queries. ``TTFM`` and ``MNL`` are the vectorised models the
fitter and the downstream analyses use; their ``batched_*`` methods accept
parameter dicts whose arrays carry a leading Monte Carlo sample axis.
"""

import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from .errors import DataError

LOG_2PI = math.log(2 * math.pi)
FAMILIES = ("lam", "theta", "alpha", "gamma", "beta", "mu", "delta", "H_alpha", "H_beta")


@dataclass(frozen=True)
class ModelDims:
    n_users: int
    n_restaurants: int
    n_weeks: int
    k_obs: int
    k1: int = 80
    k2: int = 16
    k3: int = 5

    def __post_init__(self):
        for name in ("n_users", "n_restaurants", "n_weeks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("k_obs", "k1", "k2", "k3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.k1 % 4 or self.k2 % 4:
            raise ValueError("k1 and k2 must be divisible by 4 for block masking")

    def shapes(self):
        return {
            "lam": (self.n_restaurants,),
            "theta": (self.n_users, self.k1),
            "alpha": (self.n_restaurants, self.k1),
            "gamma": (self.n_users, self.k2),
            "beta": (self.n_restaurants, self.k2),
            "mu": (self.n_restaurants, self.k3),
            "delta": (self.n_weeks, self.k3),
            "H_alpha": (self.k1, self.k_obs),
            "H_beta": (self.k2, self.k_obs),
        }


@dataclass(frozen=True)
class PriorSpec:
    """Prior variances. ``alpha`` and ``beta`` are centred on ``H x`` with
    residual variances ``sigma2_alpha``/``sigma2_beta``; every other latent
    is a zero-mean Gaussian with its family variance."""

    var_lambda: float = 1.0
    var_theta: float = 1.0
    var_gamma: float = 0.1
    var_mu: float = 0.01
    var_delta: float = 0.01
    var_H: float = 1.0
    sigma2_alpha: float = 1.0
    sigma2_beta: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")

    def family_variance(self, name):
        return {
            "lam": self.var_lambda, "theta": self.var_theta, "gamma": self.var_gamma,
            "mu": self.var_mu, "delta": self.var_delta,
            "H_alpha": self.var_H, "H_beta": self.var_H,
            "alpha": self.sigma2_alpha, "beta": self.sigma2_beta,
        }[name]


@dataclass
class LatentParams:
    lam: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    delta: np.ndarray
    H_alpha: np.ndarray
    H_beta: np.ndarray

    @classmethod
    def zeros(cls, dims):
        return cls(**{k: np.zeros(s) for k, s in dims.shapes().items()})

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.asarray(d[k], float) for k in FAMILIES})

    def as_dict(self):
        return {k: getattr(self, k) for k in FAMILIES}

    @property
    def dims(self):
        return ModelDims(n_users=self.theta.shape[0], n_restaurants=self.lam.shape[0],
                         n_weeks=self.delta.shape[0], k_obs=self.H_alpha.shape[1],
                         k1=self.theta.shape[1], k2=self.gamma.shape[1], k3=self.mu.shape[1])


class FamilySpec(NamedTuple):
    shape: tuple
    mask: Optional[np.ndarray] = None


def block_mask(k, layout):
    """Binary ``k x k_obs`` mask: quarters see price, category, rating, nothing."""
    if k % 4:
        raise ValueError(f"k must be divisible by 4, got {k}")
    q = k // 4
    mask = np.zeros((k, layout.k_obs))
    for block, (start, stop) in enumerate((layout.price, layout.category, layout.rating)):
        mask[block * q:(block + 1) * q, start:stop] = 1.0
    return mask


# ---------------------------------------------------------------- scalar API

def _week_vector(params, week):
    if 0 <= week < params.delta.shape[0]:
        return params.delta[week]
    return np.zeros(params.delta.shape[1])


def utility(params, user, restaurant, week, distance):
    """Deterministic utility of one (user, restaurant, trip week, distance)."""
    if not distance > 0:
        raise ValueError(f"distance must be positive, got {distance}")
    i, u = restaurant, user
    return float(params.lam[i] + params.theta[u] @ params.alpha[i]
                 + params.mu[i] @ _week_vector(params, week)
                 - (params.gamma[u] @ params.beta[i]) * math.log(distance))


def softmax(utilities):
    z = np.asarray(utilities, float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def choice_probabilities(params, user, week, restaurants, distances):
    if len(restaurants) == 0:
        raise ValueError("empty choice set")
    u = [utility(params, user, i, week, d) for i, d in zip(restaurants, distances)]
    return softmax(u)


def log_likelihood(params, panel, idx=None):
    """Sum of log choice probabilities over the panel's visits."""
    return TTFM.for_params(params).loglik(params.as_dict(), panel, idx)


def hierarchical_prior_logdensity(params, x, prior=None, masks=None):
    """Log prior density of a point ``LatentParams``.

    ``masks`` maps ``H_alpha``/``H_beta`` to their block masks; masked entries
    are structural zeros and contribute no density term.
    """
    prior = prior or PriorSpec()
    d = params.as_dict()
    zeros = {k: np.zeros_like(v) for k, v in d.items()}
    value, _, _ = _expected_log_prior(d, zeros, np.asarray(x, float), prior, masks or {})
    return value


def mnl_utility(coef, distance_coef, x_i, distance):
    """``coef . x_i - c log d``: the multinomial logit restriction."""
    if not distance > 0:
        raise ValueError(f"distance must be positive, got {distance}")
    return float(np.dot(coef, x_i) - distance_coef * math.log(distance))


# ------------------------------------------------------------- vector models

def _gauss_indep(m, s, var, mask=None):
    w = 1.0 if mask is None else mask
    val = np.sum(w * (-0.5 * (LOG_2PI + math.log(var)) - (m * m + s * s) / (2 * var)))
    return val, -w * m / var, -w * s / var


def _gauss_hier(m_lat, s_lat, m_H, s_H, x, sigma2, mask):
    """E_q log N(latent_i; H x_i, sigma2 I) under independent Gaussians."""
    mean = x @ m_H.T
    r = m_lat - mean
    spread = (x * x) @ (s_H * s_H * mask).T
    e2 = r * r + s_lat * s_lat + spread
    val = np.sum(-0.5 * (LOG_2PI + math.log(sigma2)) - e2 / (2 * sigma2))
    g_mH = (r.T @ x) / sigma2 * mask
    g_sH = -s_H * (x * x).sum(0)[None, :] / sigma2 * mask
    return val, -r / sigma2, -s_lat / sigma2, g_mH, g_sH


def _expected_log_prior(means, stds, x, prior, masks):
    gm, gs = {}, {}
    total = 0.0
    for name in ("lam", "theta", "gamma", "mu", "delta", "H_alpha", "H_beta"):
        v, gm[name], gs[name] = _gauss_indep(means[name], stds[name],
                                             prior.family_variance(name), masks.get(name))
        total += v
    for lat, H, sigma2 in (("alpha", "H_alpha", prior.sigma2_alpha),
                           ("beta", "H_beta", prior.sigma2_beta)):
        mask = masks.get(H)
        if mask is None:
            mask = np.ones_like(means[H])
        v, g_ml, g_sl, g_mH, g_sH = _gauss_hier(means[lat], stds[lat], means[H] * mask,
                                                stds[H], x, sigma2, mask)
        total += v
        gm[lat], gs[lat] = g_ml, g_sl
        gm[H] = gm[H] + g_mH
        gs[H] = gs[H] + g_sH
    return total, gm, gs


def softmax_rows(U, mask):
    """Row softmax over available entries; returns (probabilities, log-normaliser)."""
    Um = np.where(mask, U, -np.inf)
    top = Um.max(axis=-1, keepdims=True)
    e = np.exp(Um - top)
    tot = e.sum(axis=-1, keepdims=True)
    return e / tot, (top + np.log(tot))[..., 0]


def _scatter(index, weights, size):
    return np.bincount(index.ravel(), weights=weights.ravel(), minlength=size)


class ChoiceModel:
    """Shared softmax machinery; subclasses supply utilities and their adjoints."""

    chunk_elems = 4_000_000

    def families(self):
        raise NotImplementedError

    def batched_utilities(self, P, users, weeks, alts, logd):
        raise NotImplementedError

    def _backprop(self, params, users, weeks, alts, logd, G):
        raise NotImplementedError

    def expected_log_prior(self, means, stds):
        raise NotImplementedError

    def distance_sensitivity(self, params, users, alts):
        raise NotImplementedError

    def n_data(self, panel):
        return panel.n_visits

    def utilities(self, params, users, weeks, alts, logd):
        P = {k: v[None] for k, v in params.items()}
        return self.batched_utilities(P, users, weeks, alts, logd)[0]

    def log_prior(self, params):
        zeros = {k: np.zeros_like(v) for k, v in params.items()}
        return self.expected_log_prior(params, zeros)[0]

    def _batch(self, panel, idx):
        users = panel.users[idx]
        return (users, panel.weeks[idx], panel.alt_idx[users], panel.log_dist[users],
                panel.visit_mask(idx), panel.pos[idx])

    def _chunks(self, panel, idx, n_samples=1):
        idx = np.arange(panel.n_visits) if idx is None else np.asarray(idx)
        width = max(panel.alt_idx.shape[1], 1)
        step = max(1, self.chunk_elems // (width * n_samples))
        for start in range(0, len(idx), step):
            yield idx[start:start + step]

    def batched_loglik(self, P, panel, idx=None):
        """Log-likelihood of the visits for every sample in ``P``: shape (S,)."""
        S = next(iter(P.values())).shape[0] if P else 1
        total = np.zeros(S)
        for chunk in self._chunks(panel, idx, S):
            users, weeks, alts, logd, mask, pos = self._batch(panel, chunk)
            U = self.batched_utilities(P, users, weeks, alts, logd)
            _, lse = softmax_rows(U, mask[None])
            chosen = U[:, np.arange(len(chunk)), pos]
            total += (chosen - lse).sum(axis=1)
        return total

    def loglik(self, params, panel, idx=None):
        P = {k: v[None] for k, v in params.items()}
        return float(self.batched_loglik(P, panel, idx)[0])

    def loglik_grad(self, params, panel, idx, scale=1.0):
        """``scale`` times the minibatch log-likelihood, and its gradient."""
        users, weeks, alts, logd, mask, pos = self._batch(panel, np.asarray(idx))
        U = self.utilities(params, users, weeks, alts, logd)
        p, lse = softmax_rows(U, mask)
        rows = np.arange(len(users))
        value = scale * float((U[rows, pos] - lse).sum())
        G = -p
        G[rows, pos] += 1.0
        G *= scale
        return value, self._backprop(params, users, weeks, alts, logd, G)

    def probabilities(self, params, panel, idx=None, roster=None):
        """(B, A) choice probabilities over each visit's choice-set slots."""
        idx = np.arange(panel.n_visits) if idx is None else np.asarray(idx)
        users = panel.users[idx]
        if roster is None:
            mask = panel.visit_mask(idx)
        else:
            mask = panel.available(users, panel.days[idx], roster)
        U = self.utilities(params, users, panel.weeks[idx], panel.alt_idx[users],
                           panel.log_dist[users])
        p, _ = softmax_rows(U, mask)
        return p


class TTFM(ChoiceModel):
    """Hierarchical factorization model over a fixed covariate matrix."""

    def __init__(self, dims, x, layout=None, prior=None):
        self.dims = dims
        self.x = np.asarray(x, float).reshape(dims.n_restaurants, dims.k_obs)
        self.layout = layout
        self.prior = prior or PriorSpec()
        if layout is not None:
            self.masks = {"H_alpha": block_mask(dims.k1, layout),
                          "H_beta": block_mask(dims.k2, layout)}
        else:
            self.masks = {"H_alpha": np.ones((dims.k1, dims.k_obs)),
                          "H_beta": np.ones((dims.k2, dims.k_obs))}

    @classmethod
    def for_params(cls, params):
        d = params.dims
        return cls(d, np.zeros((d.n_restaurants, d.k_obs)))

    def families(self):
        return {k: FamilySpec(s, self.masks.get(k)) for k, s in self.dims.shapes().items()}

    def unpack(self, params):
        return LatentParams.from_dict(params)

    def _week_slots(self, weeks):
        weeks = np.asarray(weeks)
        valid = (weeks >= 0) & (weeks < self.dims.n_weeks)
        return np.where(valid, weeks, self.dims.n_weeks)

    def batched_utilities(self, P, users, weeks, alts, logd):
        S = P["lam"].shape[0]
        uu, uinv = np.unique(users, return_inverse=True)
        ww, winv = np.unique(self._week_slots(weeks), return_inverse=True)
        delta = np.concatenate([P["delta"], np.zeros((S, 1, self.dims.k3))], axis=1)
        TA = np.matmul(P["theta"][:, uu], P["alpha"].transpose(0, 2, 1))
        GB = np.matmul(P["gamma"][:, uu], P["beta"].transpose(0, 2, 1))
        MD = np.matmul(P["mu"], delta[:, ww].transpose(0, 2, 1))
        ui = uinv.reshape(-1, 1)
        wi = winv.reshape(-1, 1)
        return (P["lam"][:, alts] + TA[:, ui, alts] + MD[:, alts, wi]
                - GB[:, ui, alts] * logd)

    def _backprop(self, params, users, weeks, alts, logd, G):
        R = self.dims.n_restaurants
        uu, uinv = np.unique(users, return_inverse=True)
        ww, winv = np.unique(self._week_slots(weeks), return_inverse=True)
        nu, nw = len(uu), len(ww)
        ua = uinv.reshape(-1, 1) * R + alts
        Gs = _scatter(ua, G, nu * R).reshape(nu, R)
        GL = _scatter(ua, G * logd, nu * R).reshape(nu, R)
        GW = _scatter(alts * nw + winv.reshape(-1, 1), G, R * nw).reshape(R, nw)
        theta, gamma = params["theta"], params["gamma"]
        delta = np.vstack([params["delta"], np.zeros((1, self.dims.k3))])
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        grads["lam"] = Gs.sum(axis=0)
        grads["theta"][uu] = Gs @ params["alpha"]
        grads["alpha"] = Gs.T @ theta[uu]
        grads["gamma"][uu] = -GL @ params["beta"]
        grads["beta"] = -GL.T @ gamma[uu]
        grads["mu"] = GW @ delta[ww]
        keep = ww < self.dims.n_weeks
        grads["delta"][ww[keep]] = (GW.T @ params["mu"])[keep]
        return grads

    def expected_log_prior(self, means, stds):
        return _expected_log_prior(means, stds, self.x, self.prior, self.masks)

    def distance_sensitivity(self, params, users, alts):
        """gamma_u . beta_i for each (row user, alternative)."""
        return np.einsum("bk,bak->ba", params["gamma"][users], params["beta"][alts])

    def mean_utility(self, params):
        """lam_i + mean_u(theta_u) . alpha_i: the distance- and time-free part."""
        return params["lam"] + params["alpha"] @ params["theta"].mean(axis=0)

    def latent_vectors(self, params):
        return params["alpha"]


class MNL(ChoiceModel):
    """Multinomial logit: shared covariate coefficients and one distance slope."""

    def __init__(self, x, coef_var=1.0, dist_var=1.0, fixed_distance_coef=None):
        self.x = np.asarray(x, float)
        self.coef_var = coef_var
        self.dist_var = dist_var
        self.fixed_distance_coef = fixed_distance_coef

    def families(self):
        fam = {"coef": FamilySpec((self.x.shape[1],))}
        if self.fixed_distance_coef is None:
            fam["dist"] = FamilySpec((1,))
        return fam

    def unpack(self, params):
        return params

    def _dist(self, P, S):
        if self.fixed_distance_coef is not None:
            return np.full(S, float(self.fixed_distance_coef))
        return P["dist"][:, 0]

    def batched_utilities(self, P, users, weeks, alts, logd):
        S = P["coef"].shape[0] if "coef" in P else 1
        xc = P["coef"] @ self.x.T
        c = self._dist(P, S)
        return xc[:, alts] - c[:, None, None] * logd[None]

    def _backprop(self, params, users, weeks, alts, logd, G):
        grads = {"coef": self.x.T @ _scatter(alts, G, self.x.shape[0])}
        if self.fixed_distance_coef is None:
            grads["dist"] = np.array([-(G * logd).sum()])
        return grads

    def expected_log_prior(self, means, stds):
        v, gm_c, gs_c = _gauss_indep(means["coef"], stds["coef"], self.coef_var)
        gm, gs = {"coef": gm_c}, {"coef": gs_c}
        if self.fixed_distance_coef is None:
            v2, gm["dist"], gs["dist"] = _gauss_indep(means["dist"], stds["dist"], self.dist_var)
            v += v2
        return v, gm, gs

    def distance_sensitivity(self, params, users, alts):
        c = (self.fixed_distance_coef if self.fixed_distance_coef is not None
             else float(params["dist"][0]))
        return np.full(np.shape(alts), c, dtype=float)

    def mean_utility(self, params):
        return self.x @ params["coef"]

    def latent_vectors(self, params):
        return self.x


def check_visits_in_choice_sets(panel):
    """Raise ``DataError`` naming the first visit whose choice is unavailable."""
    chosen = panel.alt_idx[panel.users, panel.pos]
    bad = np.flatnonzero((chosen != panel.restaurants) | ~panel.alt_mask[panel.users, panel.pos])
    if len(bad):
        n = int(bad[0])
        raise DataError(f"visit {n}: restaurant {panel.restaurant_ids[panel.restaurants[n]]} "
                        f"absent from choice set of {panel.user_ids[panel.users[n]]}")


def embed_mnl(coef, distance_coef, dims, x):
    """TTFM latents reproducing an MNL fit (requires k1 >= k_obs, k2 >= 1)."""
    if dims.k1 < x.shape[1] or dims.k2 < 1:
        raise ValueError("embedding needs k1 >= k_obs and k2 >= 1")
    p = LatentParams.zeros(dims)
    p.theta[:, :x.shape[1]] = coef
    p.alpha[:, :x.shape[1]] = x
    p.gamma[:, 0] = distance_coef
    p.beta[:, 0] = 1.0
    return p

