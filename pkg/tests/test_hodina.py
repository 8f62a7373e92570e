import numpy as np
import pytest

from learndiag import dataio
from learndiag.errors import ChainDiverged
from learndiag.psych import MCMCConfig, fit_hodina_mcmc, hodina_cell_probability
from learndiag.psych.params import HoDINAParams


@pytest.fixture(scope="module")
def hodina_fit():
    r, q, gt = dataio.generate_synthetic_hodina(
        600, 30, 4, lambda0=0.0, lambda1=1.5, slip=0.15, guess=0.15, seed=11
    )
    params = fit_hodina_mcmc(r, q, MCMCConfig(sweeps=1500, burn_in=750, seed=1))
    return r, q, gt, params


def test_recovery(hodina_fit):
    _, _, gt, params = hodina_fit
    recovery = (params.alpha == gt.true_learner_params["alpha"]).mean()
    slip_mae = np.abs(params.slip - gt.true_item_params["slip"]).mean()
    guess_mae = np.abs(params.guess - gt.true_item_params["guess"]).mean()
    assert recovery >= 0.80
    assert slip_mae <= 0.07
    assert guess_mae <= 0.07


def test_lambda1_samples_positive(hodina_fit):
    _, _, _, params = hodina_fit
    assert (params.lambda1 > 0).all()


def test_alpha_is_thresholded_posterior_mean(hodina_fit):
    _, _, _, params = hodina_fit
    assert np.array_equal(params.alpha, (params.alpha_posterior_mean >= 0.5).astype(np.int8))


def test_identical_seed_identical_chains():
    r, q, _ = dataio.generate_synthetic_hodina(
        120, 15, 3, lambda0=0.0, lambda1=1.5, slip=0.2, guess=0.2, seed=2
    )
    config = MCMCConfig(sweeps=300, burn_in=150, seed=77)
    a = fit_hodina_mcmc(r, q, config)
    b = fit_hodina_mcmc(r, q, config)
    assert np.array_equal(a.theta, b.theta)
    assert np.array_equal(a.alpha, b.alpha)
    assert np.array_equal(a.slip, b.slip)
    assert np.array_equal(a.lambda0, b.lambda0)


def test_chain_divergence_detected():
    r, q, _ = dataio.generate_synthetic_hodina(
        100, 10, 3, lambda0=0.0, lambda1=1.5, slip=0.2, guess=0.2, seed=3
    )
    config = MCMCConfig(sweeps=300, burn_in=10, seed=5, theta_proposal_sd=1e6)
    with pytest.raises(ChainDiverged):
        fit_hodina_mcmc(r, q, config)


def test_mixture_scoring_degenerate_posterior_reduces_to_response_function():
    # point-mass mastery means make the mixture collapse to the plain law
    q = dataio.QMatrix(("e1", "e2"), ("k1", "k2"), np.array([[1, 1], [0, 1]], dtype=np.int8))
    params = HoDINAParams(
        theta=np.zeros(2),
        alpha=np.array([[1, 1], [0, 1]], dtype=np.int8),
        alpha_posterior_mean=np.array([[1.0, 1.0], [0.0, 1.0]]),
        slip=np.array([0.1, 0.2]),
        guess=np.array([0.25, 0.3]),
        lambda0=np.zeros(2),
        lambda1=np.ones(2),
    )
    rows = np.array([0, 0, 1, 1])
    cols = np.array([0, 1, 0, 1])
    scores = hodina_cell_probability(params, q, rows, cols)
    assert np.allclose(scores, [0.9, 0.8, 0.25, 0.8], atol=1e-12)


def test_slip_plus_guess_below_one(hodina_fit):
    _, _, _, params = hodina_fit
    assert ((params.slip + params.guess) < 1.0).all()
