"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The cross-validation criteria share their expensive fixtures: channel fits
are computed once per fold and reused by the network ablations.
"""

import sys
import time
from dataclasses import replace

import mpmath
import numpy as np
import pytest

from learndiag import dataio, diagnosis, evaluation
from learndiag import ndgrad as ng
from learndiag.diagnosis import LDMConfig, load_model, predict_cells, save_model, train_ldm_from_fits
from learndiag.evaluation import EvaluateConfig, auc, baseline_predict, fit_channels, rmse
from learndiag.psych import (
    EMConfig,
    MCMCConfig,
    VARIANT_LDM_HMI,
    VARIANT_LDM_ID,
    dina_response,
    fit_dina_em,
    fit_hodina_mcmc,
    fit_irt_em,
    hodina_attr_prob,
    irt_response,
    mirt_response,
)

mpmath.mp.dps = 50

DATA_SEED = 101
CV_FOLDS = 5

# network settings tuned for single-core wall clock; widths stay faithful
# to the architecture, only the optimizer schedule is compressed
CV_LDM = dict(
    d4=16,
    attention_channels=8,
    conv_channels=8,
    batch_size=256,
    learning_rate=0.005,
    max_epochs=22,
    patience=4,
)
CV_EVAL = EvaluateConfig(
    em=EMConfig(max_iterations=60),
    mcmc=MCMCConfig(sweeps=1500, burn_in=750),
    sae_epochs=40,
    val_fraction=0.08,
)


def report(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] acceptance {criterion}: {detail}"
    print(line, file=sys.__stdout__, flush=True)
    assert passed, line


# --- criterion 1: response-function correctness --------------------------------


def test_criterion_01_response_functions():
    rng = np.random.default_rng(11)
    logistic = lambda z: 1 / (1 + mpmath.e ** (-z))
    worst = 0.0
    for _ in range(1000):
        theta, b = rng.uniform(-4, 4, 2)
        a = rng.uniform(0.1, 4)
        c = rng.uniform(0, 0.5)
        expected = float(c + (1 - mpmath.mpf(c)) * logistic(mpmath.mpf("1.702") * a * (mpmath.mpf(theta) - mpmath.mpf(b))))
        worst = max(worst, abs(irt_response(theta, b, a, c) - expected))
    for _ in range(1000):
        slip = rng.uniform(0.001, 0.5)
        guess = rng.uniform(0.001, 0.5)
        eta = int(rng.integers(0, 2))
        expected = float(mpmath.mpf(guess) ** (1 - eta) * (1 - mpmath.mpf(slip)) ** eta)
        worst = max(worst, abs(dina_response(eta, slip, guess) - expected))
    for _ in range(1000):
        m = int(rng.integers(1, 5))
        ability = rng.uniform(-3, 3, m)
        loadings = rng.uniform(0, 2.5, m)
        d = rng.uniform(-3, 3)
        c = rng.uniform(0, 0.5)
        linear = sum(mpmath.mpf(loadings[k]) * mpmath.mpf(ability[k]) for k in range(m)) + mpmath.mpf(d)
        expected = float(c + (1 - mpmath.mpf(c)) * logistic(mpmath.mpf("1.702") * linear))
        worst = max(worst, abs(mirt_response(ability, loadings, d, c) - expected))
    for _ in range(1000):
        theta = rng.uniform(-4, 4)
        l0 = rng.uniform(-3, 3)
        l1 = rng.uniform(0.1, 3)
        expected = float(logistic(mpmath.mpf(l0) + mpmath.mpf(l1) * mpmath.mpf(theta)))
        worst = max(worst, abs(hodina_attr_prob(theta, l0, l1) - expected))
    report(
        "criterion 1 (response functions)",
        worst < 1e-12,
        f"max |error| vs 50-digit evaluation = {worst:.3e} (< 1e-12) over 4x1000 draws",
    )


# --- criterion 2: DINA estimator recovery ---------------------------------------


def test_criterion_02_dina_recovery():
    start = time.perf_counter()
    maes, recoveries = [], []
    for seed in (1, 2, 3):
        r, q, gt = dataio.generate_synthetic_dina(2000, 50, 5, (0.1, 0.3), (0.1, 0.3), seed=seed)
        fit = fit_dina_em(r, q, EMConfig())
        maes.append(
            0.5 * np.abs(fit.items.slip - gt.true_item_params["slip"]).mean()
            + 0.5 * np.abs(fit.items.guess - gt.true_item_params["guess"]).mean()
        )
        recoveries.append((fit.learners.alpha == gt.true_learner_params["alpha"]).mean())
    mae = float(np.mean(maes))
    recovery = float(np.mean(recoveries))
    elapsed = time.perf_counter() - start
    report(
        "criterion 2 (DINA recovery)",
        mae <= 0.05 and recovery >= 0.85,
        f"slip/guess MAE={mae:.4f} (<=0.05), attribute recovery={recovery:.4f} (>=0.85), "
        f"3 seeds, {elapsed:.0f}s",
    )


# --- criterion 3: IRT estimator recovery ----------------------------------------


def test_criterion_03_irt_recovery():
    start = time.perf_counter()
    b_corrs, theta_corrs = [], []
    for seed in (1, 2, 3):
        r, gt = dataio.generate_synthetic_irt(2000, 50, seed=seed)
        fit = fit_irt_em(r, EMConfig())
        b_corrs.append(np.corrcoef(gt.true_item_params["difficulty"], fit.items.difficulty)[0, 1])
        theta_corrs.append(np.corrcoef(gt.true_learner_params["theta"], fit.learners.theta)[0, 1])
    b_corr = float(np.mean(b_corrs))
    theta_corr = float(np.mean(theta_corrs))
    elapsed = time.perf_counter() - start
    report(
        "criterion 3 (IRT recovery)",
        b_corr >= 0.85 and theta_corr >= 0.9,
        f"difficulty corr={b_corr:.4f} (>=0.85), theta corr={theta_corr:.4f} (>=0.9), "
        f"3 seeds, {elapsed:.0f}s",
    )


# --- criterion 4: Ho-DINA MCMC sanity -------------------------------------------


def test_criterion_04_hodina_mcmc():
    start = time.perf_counter()
    r, q, gt = dataio.generate_synthetic_hodina(
        2000, 50, 5, lambda0=0.0, lambda1=1.5, slip=0.15, guess=0.15, seed=5
    )
    params = fit_hodina_mcmc(r, q, MCMCConfig(sweeps=5000, burn_in=2500, seed=9))
    recovery = float((params.alpha == gt.true_learner_params["alpha"]).mean())
    mae = float(
        0.5 * np.abs(params.slip - gt.true_item_params["slip"]).mean()
        + 0.5 * np.abs(params.guess - gt.true_item_params["guess"]).mean()
    )
    r2, q2, _ = dataio.generate_synthetic_hodina(
        200, 20, 3, lambda0=0.0, lambda1=1.5, slip=0.2, guess=0.2, seed=6
    )
    chain_a = fit_hodina_mcmc(r2, q2, MCMCConfig(sweeps=400, burn_in=200, seed=33))
    chain_b = fit_hodina_mcmc(r2, q2, MCMCConfig(sweeps=400, burn_in=200, seed=33))
    identical = (
        np.array_equal(chain_a.theta, chain_b.theta)
        and np.array_equal(chain_a.alpha_posterior_mean, chain_b.alpha_posterior_mean)
        and np.array_equal(chain_a.slip, chain_b.slip)
        and np.array_equal(chain_a.lambda0, chain_b.lambda0)
    )
    elapsed = time.perf_counter() - start
    report(
        "criterion 4 (Ho-DINA MCMC)",
        recovery >= 0.80 and mae <= 0.07 and identical,
        f"attribute recovery={recovery:.4f} (>=0.80), slip/guess MAE={mae:.4f} (<=0.07), "
        f"identical-seed chains bit-identical={identical}, {elapsed:.0f}s",
    )


# --- criterion 5: autodiff correctness -------------------------------------------


def test_criterion_05_autodiff():
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng(500 + trial)
        n = int(rng.integers(2, 5))
        length = int(rng.integers(4, 9))
        channels = int(rng.integers(1, 4))
        w = ng.Tensor(rng.normal(size=(length, 3)))
        bias = ng.Tensor(rng.normal(size=3))
        kernel = ng.Tensor(rng.normal(size=(2, channels, 3)))
        mat = ng.Tensor(rng.normal(size=(n, length, 2)))
        y = (rng.random((n, length)) < 0.5).astype(float)
        target = rng.normal(size=(n, length))
        seed = int(rng.integers(0, 2**31))
        sm_v = ng.Tensor(rng.normal(size=(n, length)))
        cases = [
            (lambda t: ng.tensor_sum(ng.dense(t, w, bias)), rng.normal(size=(n, length))),
            (lambda t: ng.tensor_sum(ng.sigmoid(t)), rng.normal(size=(n, length))),
            (lambda t: ng.tensor_sum(ng.tanh(t)), rng.normal(size=length)),
            (lambda t: ng.tensor_sum(ng.mul(ng.softmax(t), sm_v)), rng.normal(size=(n, length))),
            (lambda t: ng.tensor_sum(ng.tanh(ng.conv1d(t, kernel))),
             rng.normal(size=(n, channels, length))),
            (lambda t: ng.tensor_sum(ng.matmul(t, mat)), rng.normal(size=(n, 3, length))),
            (lambda t: ng.tensor_sum(ng.concat([t, ng.mul(t, t)], axis=-1)),
             rng.normal(size=(n, length))),
            (lambda t: ng.bce_loss(ng.sigmoid(t), y), rng.normal(size=(n, length))),
            (lambda t: ng.mse_loss(t, target), rng.normal(size=(n, length))),
            (lambda t: ng.tensor_sum(ng.dropout(t, 0.4, training=True, rng=seed)),
             rng.normal(size=(n, length))),
            (lambda t: ng.tensor_sum(ng.mul(ng.relu(t), ng.relu(t))),
             _nudged(rng.normal(size=(n, length)))),
            (lambda t: ng.tensor_sum(ng.maxpool1d(t, 2)), _staggered(rng, (n, length))),
        ]
        for fn, point in cases:
            worst = max(worst, ng.grad_check(fn, ng.Tensor(point), h=1e-5))

    # end-to-end pipeline at toy width (d5 = 4 + 6 = 10, c = 2)
    config = LDMConfig(
        variant=VARIANT_LDM_ID, d2=4, d3=2, d4=4, attention_channels=2,
        conv_channels=2, batch_size=4, seed=0,
    )
    rng = np.random.default_rng(7)
    net = diagnosis.init_network(config, d_shallow=6, rng=rng)
    names = sorted(net)
    h_s = rng.normal(size=(2, 4))
    h_e = rng.normal(size=(2, 2))
    sc = rng.normal(size=(2, 4))
    ec = rng.normal(size=(2, 2))
    y = np.array([1.0, 0.0])

    def loss_at(t):
        offset = 0
        patched = {}
        for name in names:
            size = net[name].values.size
            weight = np.zeros((t.values.shape[0], size))
            weight[np.arange(offset, offset + size), np.arange(size)] = 1.0
            sliced = ng.dense(t, ng.Tensor(weight), ng.Tensor(np.zeros(size)))
            patched[name] = ng.reshape(sliced, net[name].values.shape)
            offset += size
        f_d = diagnosis.lrr_forward(ng.Tensor(h_s), ng.Tensor(h_e), patched["w3"], patched["b3"])
        fused = diagnosis.fuse(f_d, ng.Tensor(sc), ng.Tensor(ec))
        attended, _ = diagnosis.attention_forward(fused, patched)
        p = diagnosis.predict_forward(attended, patched, config.pool_window)
        return ng.bce_loss(p, y)

    point = np.concatenate([net[name].values.ravel() for name in names])
    pipeline_err = ng.grad_check(loss_at, ng.Tensor(point), h=1e-5)
    worst = max(worst, pipeline_err)
    report(
        "criterion 5 (autodiff)",
        worst < 1e-4,
        f"max relative error over 20 trials x 12 primitives + end-to-end pipeline = "
        f"{worst:.3e} (< 1e-4); pipeline alone {pipeline_err:.3e}",
    )


def _nudged(values, eps=0.1):
    out = values.copy()
    out[np.abs(out) < eps] += 2 * eps
    return out


def _staggered(rng, shape):
    return rng.normal(size=shape) + np.arange(shape[-1]) * 0.601


# --- criterion 6: metric oracles ---------------------------------------------------


def test_criterion_06_metric_oracles():
    rng = np.random.default_rng(21)
    exact = True
    for _ in range(500):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.random(n), 2)  # coarse grid forces ties
        got = auc(labels, scores)
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        if got != wins / (pos.size * neg.size):
            exact = False
            break
    labels = np.array([1.0, 0.0, 1.0, 1.0])
    scores = np.array([0.9, 0.4, 0.6, 0.1])
    rmse_ok = rmse(labels, scores) == pytest.approx(
        float(np.sqrt(((labels - scores) ** 2).mean())), abs=1e-15
    )
    comp_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 120))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.random(n), 1)
        if abs(auc(labels, scores) + auc(labels, 1.0 - scores) - 1.0) > 1e-12:
            comp_ok = False
            break
    report(
        "criterion 6 (metric oracles)",
        exact and rmse_ok and comp_ok,
        f"AUC==brute-force on 500 instances: {exact}; RMSE matches definition: {rmse_ok}; "
        f"complementation within 1e-12: {comp_ok}",
    )


# --- criteria 7-9: cross-validated network quality ---------------------------------


@pytest.fixture(scope="module")
def cv_data():
    return dataio.generate_synthetic_dina(2000, 50, 5, (0.05, 0.25), (0.05, 0.25), seed=DATA_SEED)


@pytest.fixture(scope="module")
def ldm_id_cv(cv_data):
    """Per-fold fits shared across the full model and its ablations."""
    r, q, gt = cv_data
    plan = dataio.split_folds(r, CV_FOLDS, seed=DATA_SEED)
    sums = {"full": [], "attn_off": [], "shallow": [], "dina": [], "irt": [], "oracle": []}
    start = time.perf_counter()
    ablation_time = 0.0
    for fold in range(CV_FOLDS):
        rows_te, cols_te = plan.fold_cells(fold)
        labels = r.cells[rows_te, cols_te].astype(np.float64)
        r_train = r.with_cells_masked(rows_te, cols_te)
        fits = fit_channels(VARIANT_LDM_ID, r_train, q, CV_EVAL.em)
        obs = np.nonzero(r_train.observed_mask)
        tr, va = evaluation._carve_validation(obs[0], obs[1], CV_EVAL.val_fraction, DATA_SEED + fold)
        variants = {
            "full": {},
            "attn_off": {"use_attention": False},
            "shallow": {"use_deep_feature": False},
        }
        for name, toggles in variants.items():
            t0 = time.perf_counter()
            config = LDMConfig(variant=VARIANT_LDM_ID, seed=DATA_SEED + fold, **CV_LDM, **toggles)
            model = train_ldm_from_fits(
                r_train, q, fits, config, tr, va, sae_epochs=CV_EVAL.sae_epochs
            )
            scores, _ = predict_cells(model, rows_te, cols_te)
            sums[name].append(auc(labels, scores))
            if name != "full":
                ablation_time += time.perf_counter() - t0
        sums["dina"].append(auc(labels, baseline_predict("DINA", fits, q, rows_te, cols_te)))
        sums["irt"].append(auc(labels, baseline_predict("IRT", fits, q, rows_te, cols_te)))
        sums["oracle"].append(auc(labels, gt.bayes_prob[rows_te, cols_te]))
    means = {name: float(np.mean(values)) for name, values in sums.items()}
    means["elapsed_core"] = time.perf_counter() - start - ablation_time
    means["elapsed_ablations"] = ablation_time
    return means


def test_criterion_07_oracle_gap(ldm_id_cv):
    m = ldm_id_cv
    detail = (
        f"mean LDM-ID AUC={m['full']:.4f}, Bayes-oracle AUC={m['oracle']:.4f}, "
        f"gap={100 * (m['oracle'] - m['full']):.2f} points (<= 5); "
        f"core harness {m['elapsed_core']:.0f}s"
    )
    report("criterion 7a (within 5 points of Bayes oracle)", m["full"] >= m["oracle"] - 0.05, detail)


def test_criterion_07_dina_gap(ldm_id_cv):
    # Faithful to the stated criterion. On correctly specified conjunctive
    # synthetic data the DINA posterior-mixture baseline is near the Bayes
    # bound, so no same-information predictor can clear it by 3 points;
    # see the decisions ledger for the full analysis. Kept red on purpose.
    m = ldm_id_cv
    detail = (
        f"mean LDM-ID AUC={m['full']:.4f} vs DINA baseline {m['dina']:.4f} + 3 points "
        f"(oracle {m['oracle']:.4f} leaves only {100 * (m['oracle'] - m['dina']):.2f} points "
        f"of headroom above the baseline)"
    )
    report("criterion 7b (LDM-ID >= DINA + 3 points)", m["full"] >= m["dina"] + 0.03, detail)


@pytest.fixture(scope="module")
def ldm_hmi_cv(cv_data):
    r, q, gt = cv_data
    plan = dataio.split_folds(r, CV_FOLDS, seed=DATA_SEED)
    aucs = []
    start = time.perf_counter()
    for fold in range(CV_FOLDS):
        rows_te, cols_te = plan.fold_cells(fold)
        labels = r.cells[rows_te, cols_te].astype(np.float64)
        r_train = r.with_cells_masked(rows_te, cols_te)
        fits = fit_channels(
            VARIANT_LDM_HMI, r_train, q, CV_EVAL.em,
            replace(CV_EVAL.mcmc, seed=DATA_SEED + fold), mirt_dims=3,
        )
        obs = np.nonzero(r_train.observed_mask)
        tr, va = evaluation._carve_validation(obs[0], obs[1], CV_EVAL.val_fraction, DATA_SEED + fold)
        config = LDMConfig(variant=VARIANT_LDM_HMI, seed=DATA_SEED + fold, **CV_LDM)
        model = train_ldm_from_fits(r_train, q, fits, config, tr, va, sae_epochs=CV_EVAL.sae_epochs)
        scores, _ = predict_cells(model, rows_te, cols_te)
        aucs.append(auc(labels, scores))
    return {"hmi": float(np.mean(aucs)), "elapsed": time.perf_counter() - start}


def test_criterion_08_hmi_parity(ldm_id_cv, ldm_hmi_cv):
    gap = ldm_id_cv["full"] - ldm_hmi_cv["hmi"]
    detail = (
        f"mean LDM-HMI AUC={ldm_hmi_cv['hmi']:.4f} vs LDM-ID {ldm_id_cv['full']:.4f}, "
        f"shortfall={100 * gap:.2f} points (<= 2); harness {ldm_hmi_cv['elapsed']:.0f}s"
    )
    report("criterion 8 (LDM-HMI parity)", ldm_hmi_cv["hmi"] >= ldm_id_cv["full"] - 0.02, detail)


def test_criterion_09_ablations(ldm_id_cv):
    m = ldm_id_cv
    fusion_gain = m["full"] - m["shallow"]
    attention_drop = m["attn_off"] - m["full"]
    detail = (
        f"fusion gain={100 * fusion_gain:.2f} points (>= 0.5); "
        f"attention-on {m['full']:.4f} vs attention-off {m['attn_off']:.4f} "
        f"(drop {100 * attention_drop:.2f} <= 0.5 points); "
        f"ablation harness {m['elapsed_ablations']:.0f}s"
    )
    report(
        "criterion 9 (ablation directions)",
        fusion_gain >= 0.005 and m["full"] >= m["attn_off"] - 0.005,
        detail,
    )


# --- criterion 10: reproducibility ---------------------------------------------------


def test_criterion_10_reproducibility(tmp_path):
    from learndiag.cli import run

    start = time.perf_counter()
    data_dir = tmp_path / "data"
    code = run([
        "synth", "--generator", "dina", "--learners", "200", "--exercises", "15",
        "--knowledge", "3", "--slip-range", "0.05,0.2", "--guess-range", "0.05,0.2",
        "--seed", "4", "--out", str(data_dir),
    ])
    assert code == 0
    args = [
        "evaluate", "--variant", "ldm-id", "--responses", str(data_dir / "responses.csv"),
        "--q", str(data_dir / "q.csv"), "--folds", "3", "--seed", "17",
        "--d4", "8", "--attn-channels", "4", "--epochs", "4", "--batch", "128",
        "--lr", "0.005", "--patience", "2", "--sae-epochs", "8", "--em-iterations", "25",
    ]
    out_a, out_b = tmp_path / "run_a", tmp_path / "run_b"
    assert run([*args, "--out", str(out_a)]) == 0
    assert run([*args, "--out", str(out_b)]) == 0
    byte_identical = (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()

    # model bundle round trip on a 1000-cell probe
    r = dataio.load_response_matrix(data_dir / "responses.csv")
    q = dataio.load_q_matrix(data_dir / "q.csv")
    fits = fit_channels(VARIANT_LDM_ID, r, q, EMConfig(max_iterations=25))
    obs = np.nonzero(r.observed_mask)
    tr, va = evaluation._carve_validation(obs[0], obs[1], 0.1, 0)
    config = LDMConfig(
        variant=VARIANT_LDM_ID, d4=8, attention_channels=4, conv_channels=4,
        batch_size=128, learning_rate=0.005, max_epochs=4, patience=2, seed=2,
    )
    model = train_ldm_from_fits(r, q, fits, config, tr, va, sae_epochs=8)
    rng = np.random.default_rng(3)
    probe_rows = rng.integers(0, r.n_learners, size=1000)
    probe_cols = rng.integers(0, r.n_exercises, size=1000)
    before_scores, before_weights = predict_cells(model, probe_rows, probe_cols)
    save_model(model, tmp_path / "bundle")
    loaded = load_model(tmp_path / "bundle")
    after_scores, after_weights = predict_cells(loaded, probe_rows, probe_cols)
    bundle_identical = np.array_equal(before_scores, after_scores) and np.array_equal(
        before_weights, after_weights
    )
    elapsed = time.perf_counter() - start
    report(
        "criterion 10 (reproducibility)",
        byte_identical and bundle_identical,
        f"evaluate reruns byte-identical={byte_identical}; bundle round-trip bit-identical "
        f"on 1000-cell probe={bundle_identical}; {elapsed:.0f}s",
    )
