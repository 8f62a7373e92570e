"""Machine-readable interpretability exports.

Three artifact families: per-learner and per-exercise cognitive parameter
reports (lossless projections of SC/EC), Pearson correlation between
learner and resource latents over an interaction batch, and the
attention-weight vectors the predictor assigns to each fused feature.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnosis import LDMModel
from .errors import BatchTooSmall, UnknownExercise, UnknownLearner
from .psych import BINARY, CognitiveParameterSets


@dataclass(frozen=True)
class LearnerReport:
    learner_id: str
    variant: str
    mastery: dict[str, int]       # binary SC columns
    abilities: dict[str, float]   # continuous SC columns


@dataclass(frozen=True)
class ExerciseReport:
    exercise_id: str
    variant: str
    parameters: dict[str, float]  # every EC column, channel-qualified


def export_learner_report(
    sets: CognitiveParameterSets, ids: list[str] | None = None
) -> list[LearnerReport]:
    """One record per learner, mirroring SC exactly (no derived numbers)."""
    index = {s: i for i, s in enumerate(sets.learner_ids)}
    ids = list(sets.learner_ids) if ids is None else list(ids)
    reports = []
    for learner_id in ids:
        if learner_id not in index:
            raise UnknownLearner(f"learner {learner_id!r} not in the parameter sets")
        row = sets.SC[index[learner_id]]
        mastery = {}
        abilities = {}
        for j, (name, kind) in enumerate(sets.learner_columns):
            if kind == BINARY:
                mastery[name] = int(row[j])
            else:
                abilities[name] = float(row[j])
        reports.append(
            LearnerReport(learner_id=learner_id, variant=sets.variant,
                          mastery=mastery, abilities=abilities)
        )
    return reports


def export_exercise_report(
    sets: CognitiveParameterSets, ids: list[str] | None = None
) -> list[ExerciseReport]:
    """One record per exercise, mirroring EC exactly."""
    index = {e: j for j, e in enumerate(sets.exercise_ids)}
    ids = list(sets.exercise_ids) if ids is None else list(ids)
    reports = []
    for exercise_id in ids:
        if exercise_id not in index:
            raise UnknownExercise(f"exercise {exercise_id!r} not in the parameter sets")
        row = sets.EC[index[exercise_id]]
        reports.append(
            ExerciseReport(
                exercise_id=exercise_id,
                variant=sets.variant,
                parameters={
                    name: float(row[j]) for j, (name, _) in enumerate(sets.exercise_columns)
                },
            )
        )
    return reports


def write_learner_reports_csv(reports: list[LearnerReport], path: str | Path) -> None:
    if not reports:
        raise ValueError("no learner reports to write")
    columns = list(reports[0].abilities) + list(reports[0].mastery)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["learner_id", *columns])
        for report in reports:
            merged = {**report.abilities, **report.mastery}
            writer.writerow([report.learner_id, *(repr(merged[c]) for c in columns)])


def write_exercise_reports_csv(reports: list[ExerciseReport], path: str | Path) -> None:
    if not reports:
        raise ValueError("no exercise reports to write")
    columns = list(reports[0].parameters)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["exercise_id", *columns])
        for report in reports:
            writer.writerow([report.exercise_id, *(repr(report.parameters[c]) for c in columns)])


def learner_reports_json(reports: list[LearnerReport]) -> str:
    return json.dumps(
        [
            {
                "learner_id": r.learner_id,
                "variant": r.variant,
                "mastery": r.mastery,
                "abilities": r.abilities,
            }
            for r in reports
        ]
    )


def exercise_reports_json(reports: list[ExerciseReport]) -> str:
    return json.dumps(
        [
            {"exercise_id": r.exercise_id, "variant": r.variant, "parameters": r.parameters}
            for r in reports
        ]
    )


def latent_correlation(
    h_s_batch: np.ndarray, h_e_batch: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of each learner-latent dim with each resource-latent dim.

    Rows of the two batches must describe the same interaction cells.
    Zero-variance dimensions yield correlation 0 and are flagged in the
    returned (learner_degenerate, exercise_degenerate)-combined mask.
    """
    h_s = np.atleast_2d(np.asarray(h_s_batch, dtype=np.float64))
    h_e = np.atleast_2d(np.asarray(h_e_batch, dtype=np.float64))
    if h_s.shape[0] != h_e.shape[0]:
        raise BatchTooSmall(f"batch lengths differ: {h_s.shape[0]} vs {h_e.shape[0]}")
    if h_s.shape[0] < 3:
        raise BatchTooSmall(f"need at least 3 paired rows, got {h_s.shape[0]}")
    s_center = h_s - h_s.mean(axis=0)
    e_center = h_e - h_e.mean(axis=0)
    s_norm = np.sqrt((s_center**2).sum(axis=0))
    e_norm = np.sqrt((e_center**2).sum(axis=0))
    s_degenerate = s_norm < 1e-12
    e_degenerate = e_norm < 1e-12
    denom = np.outer(np.where(s_degenerate, 1.0, s_norm), np.where(e_degenerate, 1.0, e_norm))
    corr = (s_center.T @ e_center) / denom
    corr[s_degenerate, :] = 0.0
    corr[:, e_degenerate] = 0.0
    degenerate = np.zeros_like(corr, dtype=bool)
    degenerate[s_degenerate, :] = True
    degenerate[:, e_degenerate] = True
    return np.clip(corr, -1.0, 1.0), degenerate


def write_latent_correlation_csv(
    corr: np.ndarray, path: str | Path, degenerate: np.ndarray | None = None
) -> None:
    """d2 rows x d3 columns, header-labeled; degenerate cells annotated."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["learner_dim", *(f"resource_dim_{j}" for j in range(corr.shape[1]))])
        for i, row in enumerate(corr):
            cells = [
                "degenerate" if degenerate is not None and degenerate[i, j] else repr(float(row[j]))
                for j in range(corr.shape[1])
            ]
            writer.writerow([f"learner_dim_{i}", *cells])


def export_attention_weights(
    model: LDMModel, cells: list[tuple[str, str]]
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Attention-weight matrix (cells x fused width) plus the feature header.

    Rows are the exact vectors a PredictionRecord carries (same single-cell
    inference path), so the export cannot drift from predictions.
    """
    from .diagnosis import predict

    weights = np.stack(
        [predict(model, learner_id, exercise_id).attention_weights
         for learner_id, exercise_id in cells]
    )
    return weights, model.feature_names()


def write_attention_csv(
    weights: np.ndarray, header: tuple[str, ...], path: str | Path
) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in weights:
            writer.writerow([repr(float(v)) for v in row])
