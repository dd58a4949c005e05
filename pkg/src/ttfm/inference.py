"""Mean-field Gaussian stochastic variational inference.

Every latent scalar gets an independent Gaussian factor with mean ``m`` and
standard deviation ``softplus(s)``. The ELBO is

    E_q[log p(y | z)] + E_q[log p(z)] + H[q]

where the first term is a reparameterized Monte Carlo estimate over a
minibatch of visits (scaled to the full data size) and the prior and
entropy terms are closed form. Works with any model exposing the
``ChoiceModel`` interface: ``families``, ``batched_loglik``,
``loglik_grad``, ``expected_log_prior`` and ``n_data``.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NumericalError

logger = logging.getLogger(__name__)

INIT_MEAN_SD = 0.01
INIT_STD = 0.1
HALF_LOG_2PI_E = 0.5 * (1.0 + math.log(2 * math.pi))


def softplus(s):
    return np.logaddexp(0.0, s)


def softplus_inv(y):
    return y + np.log(-np.expm1(-y))


@dataclass
class VariationalPosterior:
    means: dict
    raw_scales: dict
    masks: dict = field(default_factory=dict)

    def stds(self):
        return {k: softplus(s) for k, s in self.raw_scales.items()}

    def weight(self, name):
        m = self.masks.get(name)
        return 1.0 if m is None else m

    def n_free(self):
        return int(sum(np.sum(np.broadcast_to(self.weight(k), v.shape))
                       for k, v in self.means.items()))

    def copy(self):
        return VariationalPosterior({k: v.copy() for k, v in self.means.items()},
                                    {k: v.copy() for k, v in self.raw_scales.items()},
                                    dict(self.masks))

    def entropy(self):
        total = 0.0
        for k, s in self.stds().items():
            w = np.broadcast_to(self.weight(k), s.shape)
            total += float(np.sum(w * (HALF_LOG_2PI_E + np.log(s))))
        return total


@dataclass
class FitConfig:
    minibatch_size: int = 512
    n_mc_samples: int = 1
    step_size: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int = 5000
    eval_every: int = 100
    window: int = 5
    tol: float = 1e-4
    elbo_smoothing: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.n_mc_samples < 1:
            raise ValueError("n_mc_samples must be >= 1")
        if self.eval_every < 1 or self.max_steps < 0:
            raise ValueError("eval_every must be >= 1 and max_steps >= 0")


@dataclass
class TraceRow:
    step: int
    elbo: float
    val_loglik: float
    seconds: float


@dataclass
class FitTrace:
    rows: list = field(default_factory=list)
    stopped_early: bool = False

    def values(self):
        """The reproducible part of the trace (wall clock excluded)."""
        return [(r.step, r.elbo, r.val_loglik) for r in self.rows]


def init_posterior(families, rng):
    """Means ~ N(0, 0.01^2), std 0.1; masked entries pinned at zero mean."""
    means, raw, masks = {}, {}, {}
    s0 = softplus_inv(INIT_STD)
    for name, spec in families.items():
        m = rng.normal(0.0, INIT_MEAN_SD, size=spec.shape)
        if spec.mask is not None:
            m = m * spec.mask
            masks[name] = spec.mask
        means[name] = m
        raw[name] = np.full(spec.shape, s0)
    return VariationalPosterior(means, raw, masks)


def draw_noise(q, rng, n_samples=None):
    """Standard normal noise per free scalar (zeros at masked entries)."""
    out = {}
    for k, m in q.means.items():
        shape = m.shape if n_samples is None else (n_samples,) + m.shape
        out[k] = rng.standard_normal(shape) * q.weight(k)
    return out


def sample_latents(q, rng, n_samples=None, noise=None):
    """Reparameterized draw ``m + std * eps``; returns (latents, eps).

    With ``n_samples`` the arrays carry a leading sample axis.
    """
    eps = noise if noise is not None else draw_noise(q, rng, n_samples)
    stds = q.stds()
    z = {k: (q.means[k] + stds[k] * eps[k]) * q.weight(k) for k in q.means}
    return z, eps


def posterior_mean_params(q):
    return {k: m * q.weight(k) for k, m in q.means.items()}


def posterior_draws(q, n, rng):
    """``n`` independent parameter dicts drawn from ``q``."""
    z, _ = sample_latents(q, rng, n)
    return [{k: v[s] for k, v in z.items()} for s in range(n)]


def elbo_estimate(model, data, q, n_samples, rng, noise=None, sample_chunk=None):
    """Monte Carlo ELBO over the full data (likelihood term only is sampled).

    ``noise`` (leading sample axis) fixes the draws for common-random-number
    comparisons; otherwise samples are drawn in chunks.
    """
    stds = q.stds()
    prior, _, _ = model.expected_log_prior(posterior_mean_params(q),
                                           {k: s * q.weight(k) for k, s in stds.items()})
    entropy = q.entropy()
    if noise is not None:
        z, _ = sample_latents(q, rng, noise=noise)
        ll = model.batched_loglik(z, data).mean()
        return float(ll + prior + entropy)
    if sample_chunk is None:
        size = max(1, sum(v.size for v in q.means.values()))
        sample_chunk = max(1, min(n_samples, 2_000_000 // size))
    total = 0.0
    done = 0
    while done < n_samples:
        n = min(sample_chunk, n_samples - done)
        z, _ = sample_latents(q, rng, n_samples=n)
        total += float(model.batched_loglik(z, data).sum())
        done += n
    return total / n_samples + prior + entropy


def elbo_gradient(model, data, q, rng, batch=None, data_size=None, n_samples=1, noise=None):
    """Reparameterization gradient of the (minibatch-scaled) ELBO.

    Returns ``(elbo_value, grad_means, grad_raw_scales)``. ``noise`` is a
    list of per-sample noise dicts for common random numbers.
    """
    n_total = model.n_data(data)
    data_size = n_total if data_size is None else data_size
    batch = np.arange(n_total) if batch is None else np.asarray(batch)
    if len(batch) == 0:
        raise ValueError("empty minibatch")
    scale = data_size / len(batch)
    stds = q.stds()
    dstd = {k: expit(s) for k, s in q.raw_scales.items()}
    gm = {k: np.zeros_like(v) for k, v in q.means.items()}
    gs = {k: np.zeros_like(v) for k, v in q.means.items()}
    if noise is None:
        noise = [draw_noise(q, rng) for _ in range(n_samples)]
    value = 0.0
    for eps in noise:
        z, _ = sample_latents(q, rng, noise=eps)
        ll, g = model.loglik_grad(z, data, batch, scale)
        value += ll / len(noise)
        for k in gm:
            gm[k] += g[k] / len(noise)
            gs[k] += g[k] * eps[k] / len(noise)
    masked_stds = {k: s * q.weight(k) for k, s in stds.items()}
    prior, pm, ps = model.expected_log_prior(posterior_mean_params(q), masked_stds)
    value += prior + q.entropy()
    for k in gm:
        w = q.weight(k)
        gm[k] = (gm[k] + pm[k]) * w
        gs[k] = (gs[k] + ps[k] + 1.0 / stds[k]) * dstd[k] * w
    return value, gm, gs


class Adam:
    """Per-parameter adaptive moments with bias correction."""

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def ascend(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] += self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _check_finite(q, gm, gs):
    """Raise naming the first family with non-finite parameters, else gradients."""
    for kind, store in (("mean", q.means), ("scale", q.raw_scales),
                        ("mean gradient", gm), ("scale gradient", gs)):
        for k, v in store.items():
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"non-finite {kind} in family {k!r}", family=k)


def fit(model, train, config=None, valid=None, q=None):
    """Maximize the ELBO on ``train`` with minibatch Adam.

    Minibatches sweep a fresh permutation of the visits each epoch. Every
    ``eval_every`` steps the trace records the exponentially smoothed
    minibatch ELBO and the validation log-likelihood at the posterior means.
    Training stops after ``max_steps`` or once the validation
    log-likelihood has failed to improve on its best value by a relative
    ``tol`` for ``window`` consecutive evaluations.
    """
    config = config or FitConfig()
    rng = np.random.default_rng(config.seed)
    if q is None:
        q = init_posterior(model.families(), rng)
    n = model.n_data(train)
    if n == 0:
        raise ValueError("no training data")
    opt_m = Adam(q.means, config.step_size, config.beta1, config.beta2, config.adam_eps)
    opt_s = Adam(q.raw_scales, config.step_size, config.beta1, config.beta2, config.adam_eps)
    trace = FitTrace()
    start = time.perf_counter()
    bs = min(config.minibatch_size, n)
    order = rng.permutation(n)
    cursor = 0
    smoothed = None
    best = -np.inf
    stale = 0
    for step in range(1, config.max_steps + 1):
        if cursor >= n:
            order = rng.permutation(n)
            cursor = 0
        batch = order[cursor:cursor + bs]
        cursor += bs
        value, gm, gs = elbo_gradient(model, train, q, rng, batch=batch, data_size=n,
                                      n_samples=config.n_mc_samples)
        if not all(np.all(np.isfinite(g)) for g in (*gm.values(), *gs.values())):
            _check_finite(q, gm, gs)
        opt_m.ascend(q.means, gm)
        opt_s.ascend(q.raw_scales, gs)
        a = config.elbo_smoothing
        smoothed = value if smoothed is None else a * smoothed + (1 - a) * value
        if step % config.eval_every == 0 or step == config.max_steps:
            val = np.nan
            if valid is not None and model.n_data(valid):
                val = model.loglik(posterior_mean_params(q), valid)
            trace.rows.append(TraceRow(step, float(smoothed), float(val),
                                       time.perf_counter() - start))
            logger.debug("step %d elbo %.3f val %.3f", step, smoothed, val)
            if np.isfinite(val):
                if not np.isfinite(best) or val > best + config.tol * abs(best):
                    best = val
                    stale = 0
                else:
                    stale += 1
                    if stale >= config.window:
                        trace.stopped_early = True
                        break
    return q, trace
