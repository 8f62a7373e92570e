import numpy as np

from learndiag import dataio
from learndiag.psych import EMConfig, fit_irt_em
from learndiag.psych.irt import _initial_item_matrix


def test_recovery_on_synthetic(irt_synth):
    r, gt = irt_synth
    fit = fit_irt_em(r, EMConfig())
    b_corr = np.corrcoef(gt.true_item_params["difficulty"], fit.items.difficulty)[0, 1]
    theta_corr = np.corrcoef(gt.true_learner_params["theta"], fit.learners.theta)[0, 1]
    assert b_corr >= 0.85
    assert theta_corr >= 0.9


def test_loglik_nondecreasing(irt_synth):
    r, _ = irt_synth
    fit = fit_irt_em(r, EMConfig(max_iterations=40))
    diffs = np.diff(np.asarray(fit.loglik_trace))
    assert (diffs >= -1e-8).all()


def test_zero_iterations_returns_initialization(irt_synth):
    r, _ = irt_synth
    config = EMConfig(max_iterations=0)
    fit = fit_irt_em(r, config)
    init = _initial_item_matrix(r, config)
    assert np.array_equal(fit.items.discrimination, init[:, 0])
    assert np.array_equal(fit.items.difficulty, init[:, 1])
    assert np.array_equal(fit.items.guess, init[:, 2])
    assert np.array_equal(fit.learners.theta, np.zeros(r.n_learners))
    assert fit.loglik_trace == ()


def test_theta_stays_within_quadrature_bound(irt_synth):
    r, _ = irt_synth
    fit = fit_irt_em(r, EMConfig(max_iterations=30))
    assert np.abs(fit.learners.theta).max() <= 4.0


def test_degenerate_item_flagged_and_clamped():
    r, gt = dataio.generate_synthetic_irt(300, 12, seed=9)
    cells = r.cells.copy()
    cells[:, 4] = 1  # an item everyone answers correctly
    r = dataio.ResponseMatrix(r.learner_ids, r.exercise_ids, cells)
    fit = fit_irt_em(r, EMConfig(max_iterations=25))
    assert fit.items.degenerate[4]
    assert not fit.items.degenerate[[j for j in range(12) if j != 4]].any()
    assert fit.items.difficulty[4] == -4.0


def test_median_split_item_lands_near_median_ability():
    # one item answered correctly by exactly the top half of raw scorers
    r, _ = dataio.generate_synthetic_irt(1000, 25, seed=17)
    raw = np.where(r.observed_mask, r.cells, 0).sum(axis=1)
    cells = r.cells.copy()
    cells[:, 0] = (raw >= np.median(raw)).astype(np.int8)
    r = dataio.ResponseMatrix(r.learner_ids, r.exercise_ids, cells)
    fit = fit_irt_em(r, EMConfig())
    median_theta = float(np.median(fit.learners.theta))
    assert abs(fit.items.difficulty[0] - median_theta) < 0.5
    assert fit.items.discrimination[0] > 1.0


def test_deterministic_given_data(irt_synth):
    r, _ = irt_synth
    a = fit_irt_em(r, EMConfig(max_iterations=15))
    b = fit_irt_em(r, EMConfig(max_iterations=15))
    assert np.array_equal(a.items.difficulty, b.items.difficulty)
    assert np.array_equal(a.learners.theta, b.learners.theta)


def test_handles_missing_cells():
    r, gt = dataio.generate_synthetic_irt(800, 30, seed=4)
    plan = dataio.split_folds(r, 5, seed=0)
    masked = r.with_cells_masked(*plan.fold_cells(0))
    fit = fit_irt_em(masked, EMConfig(max_iterations=60))
    corr = np.corrcoef(gt.true_item_params["difficulty"], fit.items.difficulty)[0, 1]
    assert corr >= 0.85
