"""Metrics, psychometric channel baselines, and the cross-validation harness."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataio
from .dataio import GroundTruth, QMatrix, ResponseMatrix, split_folds, training_fingerprint
from .errors import EmptyInput, MissingChannel, SingleClassLabels
from .psych import (
    EMConfig,
    MCMCConfig,
    DINAFit,
    HoDINAParams,
    IRTFit,
    MIRTFit,
    VARIANT_LDM_HMI,
    VARIANT_LDM_ID,
    dina_cell_probability,
    fit_dina_em,
    fit_hodina_mcmc,
    fit_irt_em,
    fit_mirt_em,
    hodina_cell_probability,
    irt_response,
    mirt_response,
)

# --- metrics ------------------------------------------------------------------


def _tied_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(labels, scores) -> float:
    """Mann-Whitney AUC; ties count one half.

    Equals the fraction of (positive, negative) pairs ranked correctly.
    """
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError(f"labels {labels.shape} vs scores {scores.shape}")
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabels("AUC needs both classes present")
    ranks = _tied_ranks(scores)
    rank_sum = ranks[positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def rmse(labels, scores) -> float:
    """Root mean squared deviation between outcomes and predicted scores."""
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.size == 0:
        raise EmptyInput("rmse needs at least one element")
    if labels.shape != scores.shape:
        raise ValueError(f"labels {labels.shape} vs scores {scores.shape}")
    return float(np.sqrt(((labels - scores) ** 2).mean()))


# --- channel fitting and baselines ---------------------------------------------


@dataclass(frozen=True)
class ChannelFits:
    """Fitted psychometric channels for one training split."""

    irt: Optional[IRTFit] = None
    dina: Optional[DINAFit] = None
    mirt: Optional[MIRTFit] = None
    hodina: Optional[HoDINAParams] = None
    fingerprint: str = ""


def fit_channels(
    variant: str,
    r_train: ResponseMatrix,
    q: Optional[QMatrix],
    em_config: EMConfig = EMConfig(),
    mcmc_config: MCMCConfig = MCMCConfig(),
    mirt_dims: int = 3,
) -> ChannelFits:
    """Fit every channel the variant requires on the training matrix."""
    fingerprint = training_fingerprint(r_train)
    if variant == VARIANT_LDM_ID:
        if q is None:
            raise MissingChannel("LDM_ID needs a Q-matrix for its DINA channel")
        return ChannelFits(
            irt=fit_irt_em(r_train, em_config),
            dina=fit_dina_em(r_train, q, em_config),
            fingerprint=fingerprint,
        )
    if variant == VARIANT_LDM_HMI:
        if q is None:
            raise MissingChannel("LDM_HMI needs a Q-matrix for its Ho-DINA channel")
        return ChannelFits(
            irt=fit_irt_em(r_train, em_config),
            mirt=fit_mirt_em(r_train, mirt_dims, em_config),
            hodina=fit_hodina_mcmc(r_train, q, mcmc_config),
            fingerprint=fingerprint,
        )
    raise ValueError(f"unknown variant {variant!r}")


BASELINE_CHANNELS = ("IRT", "DINA", "MIRT", "HoDINA")


def baseline_predict(
    channel: str,
    fits: ChannelFits,
    q: Optional[QMatrix],
    rows: np.ndarray,
    cols: np.ndarray,
    hard: bool = False,
) -> np.ndarray:
    """Score cells with one channel's own response function.

    DINA and Ho-DINA default to posterior-mixture scoring; ``hard`` switches
    to the MAP mastery profile.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if channel == "IRT":
        if fits.irt is None:
            raise MissingChannel("IRT channel not fitted")
        items, learners = fits.irt.items, fits.irt.learners
        return irt_response(
            learners.theta[rows],
            items.difficulty[cols],
            items.discrimination[cols],
            items.guess[cols],
            items.scale_constant,
        )
    if channel == "DINA":
        if fits.dina is None:
            raise MissingChannel("DINA channel not fitted")
        return dina_cell_probability(fits.dina.items, fits.dina.learners, q, rows, cols, hard=hard)
    if channel == "MIRT":
        if fits.mirt is None:
            raise MissingChannel("MIRT channel not fitted")
        items, learners = fits.mirt.items, fits.mirt.learners
        return mirt_response(
            learners.alpha_vector[rows],
            items.disc_vector[cols],
            items.difficulty[cols],
            items.guess[cols],
            items.scale_constant,
        )
    if channel == "HoDINA":
        if fits.hodina is None:
            raise MissingChannel("Ho-DINA channel not fitted")
        if hard:
            eta = dataio.ideal_response_grid(fits.hodina.alpha, q.cells)[rows, cols]
            g = fits.hodina.guess[cols]
            s = fits.hodina.slip[cols]
            return g + (1.0 - s - g) * eta
        return hodina_cell_probability(fits.hodina, q, rows, cols)
    raise ValueError(f"unknown channel {channel!r}")


# --- reports --------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    model: str
    fold: str
    auc: float
    rmse: float
    n_cells: int
    wall_clock_ms: float

    def row(self) -> list:
        return [self.fold, self.model, repr(self.auc), repr(self.rmse), self.n_cells,
                repr(self.wall_clock_ms)]


REPORT_HEADER = ["fold", "model", "auc", "rmse", "n_cells", "wall_clock_ms"]
METRICS_HEADER = ["fold", "model", "auc", "rmse", "n_cells"]


def write_reports_csv(reports: list[MetricReport], path: str | Path) -> None:
    """Full report including per-batch prediction timings."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for report in reports:
            writer.writerow(report.row())


def write_metrics_csv(reports: list[MetricReport], path: str | Path) -> None:
    """Timing-free report; byte-identical across reruns with the same seed."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for report in reports:
            writer.writerow(report.row()[:5])


def write_reports_json(reports: list[MetricReport], path: str | Path) -> None:
    payload = [
        {
            "fold": r.fold,
            "model": r.model,
            "auc": r.auc,
            "rmse": r.rmse,
            "n_cells": r.n_cells,
            "wall_clock_ms": r.wall_clock_ms,
        }
        for r in reports
    ]
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


# --- cross-validation harness ----------------------------------------------------


@dataclass(frozen=True)
class EvaluateConfig:
    """Everything the harness needs beyond the data itself."""

    em: EMConfig = EMConfig()
    mcmc: MCMCConfig = MCMCConfig()
    mirt_dims: int = 3
    bins_per_param: int = 10
    sae_epochs: int = 100
    val_fraction: float = 0.1
    include_irt_guess: bool = False
    baselines: bool = True
    hard_baselines: bool = False


def _carve_validation(
    rows: np.ndarray, cols: np.ndarray, fraction: float, seed: int
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    n = rows.size
    n_val = max(1, int(round(n * fraction)))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    return (rows[train_idx], cols[train_idx]), (rows[val_idx], cols[val_idx])


def evaluate_fold(
    variant: str,
    r: ResponseMatrix,
    q: Optional[QMatrix],
    test_rows: np.ndarray,
    test_cols: np.ndarray,
    seed: int,
    ldm_config,
    config: EvaluateConfig,
    ground_truth: Optional[GroundTruth] = None,
    fold_label: str = "0",
) -> list[MetricReport]:
    """Mask the fold, fit everything on the remainder, score the fold."""
    from . import diagnosis  # imported here to keep module loading acyclic

    r_train = r.with_cells_masked(test_rows, test_cols)
    fits = fit_channels(variant, r_train, q, config.em, config.mcmc, config.mirt_dims)
    labels = np.asarray(r.cells[test_rows, test_cols], dtype=np.float64)

    observed_rows, observed_cols = np.nonzero(r_train.observed_mask)
    (fit_rows, fit_cols), (val_rows, val_cols) = _carve_validation(
        observed_rows, observed_cols, config.val_fraction, seed
    )
    model = diagnosis.train_ldm_from_fits(
        r_train,
        q,
        fits,
        ldm_config,
        train_cells=(fit_rows, fit_cols),
        val_cells=(val_rows, val_cols),
        include_irt_guess=config.include_irt_guess,
        bins_per_param=config.bins_per_param,
        sae_epochs=config.sae_epochs,
    )

    reports = []
    start = time.perf_counter()
    scores, _ = diagnosis.predict_cells(model, test_rows, test_cols)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    name = "LDM-ID" if variant == VARIANT_LDM_ID else "LDM-HMI"
    reports.append(
        MetricReport(name, fold_label, auc(labels, scores), rmse(labels, scores),
                     labels.size, elapsed_ms)
    )
    if config.baselines:
        channels = ("IRT", "DINA") if variant == VARIANT_LDM_ID else ("IRT", "MIRT", "HoDINA")
        for channel in channels:
            start = time.perf_counter()
            base = baseline_predict(channel, fits, q, test_rows, test_cols,
                                    hard=config.hard_baselines)
            elapsed_ms = (time.perf_counter() - start) * 1000.0
            reports.append(
                MetricReport(channel, fold_label, auc(labels, base), rmse(labels, base),
                             labels.size, elapsed_ms)
            )
    if ground_truth is not None:
        oracle = ground_truth.bayes_prob[test_rows, test_cols]
        reports.append(
            MetricReport("oracle", fold_label, auc(labels, oracle), rmse(labels, oracle),
                         labels.size, 0.0)
        )
    return reports


def cross_validate(
    variant: str,
    r: ResponseMatrix,
    q: Optional[QMatrix],
    k: int,
    seed: int,
    ldm_config,
    config: EvaluateConfig = EvaluateConfig(),
    ground_truth: Optional[GroundTruth] = None,
) -> list[MetricReport]:
    """k-fold evaluation; per-fold reports plus per-model means.

    Each fold derives its own seed so folds are independent but the whole
    run is reproducible from the single seed.
    """
    plan = split_folds(r, k, seed)
    reports: list[MetricReport] = []
    for fold in range(k):
        rows, cols = plan.fold_cells(fold)
        fold_ldm = replace(ldm_config, seed=seed + fold)
        fold_config = replace(config, mcmc=replace(config.mcmc, seed=seed + fold))
        reports.extend(
            evaluate_fold(
                variant, r, q, rows, cols, seed + fold, fold_ldm, fold_config,
                ground_truth=ground_truth, fold_label=str(fold),
            )
        )
    for model_name in sorted({rep.model for rep in reports}):
        per_fold = [rep for rep in reports if rep.model == model_name]
        reports.append(
            MetricReport(
                model=model_name,
                fold="mean",
                auc=float(np.mean([rep.auc for rep in per_fold])),
                rmse=float(np.mean([rep.rmse for rep in per_fold])),
                n_cells=int(sum(rep.n_cells for rep in per_fold)),
                wall_clock_ms=float(np.sum([rep.wall_clock_ms for rep in per_fold])),
            )
        )
    return reports


def mean_report(reports: list[MetricReport], model: str) -> MetricReport:
    for rep in reports:
        if rep.model == model and rep.fold == "mean":
            return rep
    raise KeyError(f"no aggregate report for {model!r}")
