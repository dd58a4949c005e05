import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from ttfm.oracles import (LinearChoiceDesign, gaussian_elbo_quadrature, oracle_evidence_quadrature,
                          oracle_loglik, oracle_utility)
from ttfm.synthesis import lambda_only_instance


def _design(rng, k, V=12, A=3):
    return LinearChoiceDesign(rng.normal(size=(V, A)), rng.normal(size=(V, A, k)),
                              np.ones((V, A), bool), rng.integers(A, size=V),
                              np.full(k, 0.8))


@pytest.mark.parametrize("k", [1, 2])
def test_quadrature_converges_under_refinement(rng, k):
    d = _design(rng, k)
    coarse = oracle_evidence_quadrature(d, n_grid=101 if k == 2 else 201)
    fine = oracle_evidence_quadrature(d, n_grid=301 if k == 2 else 801)
    assert coarse == pytest.approx(fine, abs=1e-6)


def test_quadrature_matches_monte_carlo(rng):
    d = _design(rng, 2)
    Z = rng.normal(size=(400_000, 2)) * d.prior_sd
    mc = logsumexp(d.loglik(Z)) - math.log(len(Z))
    assert oracle_evidence_quadrature(d) == pytest.approx(mc, abs=2e-2)


def test_zero_latent_evidence_is_loglik(rng):
    d = _design(rng, 0)
    U = d.offset
    direct = sum(U[v, c] - logsumexp(U[v]) for v, c in enumerate(d.chosen))
    assert oracle_evidence_quadrature(d) == pytest.approx(direct, rel=1e-12)
    assert gaussian_elbo_quadrature(d, [], []) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ValueError):
        oracle_evidence_quadrature(_design(rng, 3))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=2),
       st.lists(st.floats(0.05, 2.0), min_size=2, max_size=2))
def test_any_gaussian_elbo_below_evidence(means, sds):
    d = _design(np.random.default_rng(0), 2)
    assert gaussian_elbo_quadrature(d, means, sds) <= oracle_evidence_quadrature(d) + 1e-9


def test_lambda_only_design_matches_model(rng):
    model, panel, design = lambda_only_instance(rng)
    z = np.array([0.3, -0.7])
    params = {k: np.zeros(s) for k, s in model.dims.shapes().items()}
    params["lam"] = z
    assert model.loglik(params, panel) == pytest.approx(float(design.loglik(z)[0]), rel=1e-12)


def test_oracle_loglik_guards():
    params = {"lam": np.array([0.0, 40.0]), "theta": np.zeros((1, 0)), "alpha": np.zeros((2, 0)),
              "gamma": np.zeros((1, 0)), "beta": np.zeros((2, 0)), "mu": np.zeros((2, 0)),
              "delta": np.zeros((1, 0))}
    with pytest.raises(OverflowError):
        oracle_loglik([(0, 0, 0)], params, {0: [(0, 1.0), (1, 1.0)]})
    params["lam"][1] = 0.0
    with pytest.raises(ValueError, match="not offered"):
        oracle_loglik([(0, 0, 5)], params, {0: [(0, 1.0), (1, 1.0)]})
    assert oracle_loglik([(0, 0, 0)], params, {0: [(0, 1.0), (1, 1.0)]}) == pytest.approx(
        -math.log(2))
    # a week outside the fitted range contributes no time effect
    assert oracle_utility(params, 0, 0, 7, 1.0) == 0.0
