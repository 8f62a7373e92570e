"""Response-matrix and Q-matrix loading, validation, splitting, and synthesis.

File formats
------------
long_csv   UTF-8 CSV, header ``learner_id,exercise_id,score``, score in {0,1}.
           Absent pairs are missing cells.
dense_tsv  whitespace-separated grid, no header; rows = learners in file
           order, columns = exercises; tokens in {0, 1, NA}.
q_csv      CSV, header ``exercise_id,k_1,...,k_K``, cells in {0,1}.

Ids are kept in lexicographic order so that a write/reload round-trip is
positionally stable; synthesized ids are zero-padded for the same reason.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.typing import NDArray

from .errors import (
    AllZeroExerciseRow,
    DuplicateRecord,
    EmptyLearnerOrExercise,
    InvalidRange,
    MalformedRow,
    NonBinaryCell,
    NonBinaryScore,
    TooFewObservations,
)

MISSING = -1

IRT_SCALE_CONSTANT = 1.702


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ResponseMatrix:
    """Learners x exercises outcome grid; MISSING marks unobserved cells."""

    learner_ids: tuple[str, ...]
    exercise_ids: tuple[str, ...]
    cells: NDArray[np.int8]

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.shape != (len(self.learner_ids), len(self.exercise_ids)):
            raise ValueError(
                f"cells shape {cells.shape} does not match "
                f"{len(self.learner_ids)} learners x {len(self.exercise_ids)} exercises"
            )
        if len(set(self.learner_ids)) != len(self.learner_ids):
            raise DuplicateRecord("duplicate learner ids")
        if len(set(self.exercise_ids)) != len(self.exercise_ids):
            raise DuplicateRecord("duplicate exercise ids")
        valid = np.isin(cells, (0, 1, MISSING))
        if not valid.all():
            raise NonBinaryScore(f"cell value {cells[~valid].flat[0]} is not 0/1/missing")
        observed = cells != MISSING
        if not observed.any(axis=1).all():
            i = int(np.flatnonzero(~observed.any(axis=1))[0])
            raise EmptyLearnerOrExercise(f"learner {self.learner_ids[i]} has no observed cells")
        if not observed.any(axis=0).all():
            j = int(np.flatnonzero(~observed.any(axis=0))[0])
            raise EmptyLearnerOrExercise(f"exercise {self.exercise_ids[j]} has no observed cells")
        object.__setattr__(self, "cells", _frozen(cells))

    @property
    def n_learners(self) -> int:
        return len(self.learner_ids)

    @property
    def n_exercises(self) -> int:
        return len(self.exercise_ids)

    @property
    def observed_mask(self) -> NDArray[np.bool_]:
        return self.cells != MISSING

    @property
    def n_observed(self) -> int:
        return int(self.observed_mask.sum())

    def observed_cells(self) -> Iterator[tuple[int, int, int]]:
        """Yield (learner_index, exercise_index, score) in row-major order."""
        rows, cols = np.nonzero(self.observed_mask)
        for i, j in zip(rows.tolist(), cols.tolist()):
            yield i, j, int(self.cells[i, j])

    def with_cells_masked(self, rows: np.ndarray, cols: np.ndarray) -> "ResponseMatrix":
        """Copy with the given cells set to missing (for held-out folds)."""
        cells = self.cells.copy()
        cells[rows, cols] = MISSING
        return ResponseMatrix(self.learner_ids, self.exercise_ids, cells)


@dataclass(frozen=True)
class QMatrix:
    """Exercises x knowledge-points binary incidence grid."""

    exercise_ids: tuple[str, ...]
    knowledge_ids: tuple[str, ...]
    cells: NDArray[np.int8]

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.shape != (len(self.exercise_ids), len(self.knowledge_ids)):
            raise ValueError(
                f"cells shape {cells.shape} does not match "
                f"{len(self.exercise_ids)} exercises x {len(self.knowledge_ids)} knowledge points"
            )
        if not np.isin(cells, (0, 1)).all():
            raise NonBinaryCell("Q-matrix cells must be 0 or 1")
        if not cells.any(axis=1).all():
            i = int(np.flatnonzero(~cells.any(axis=1))[0])
            raise AllZeroExerciseRow(f"exercise {self.exercise_ids[i]} tests no knowledge point")
        object.__setattr__(self, "cells", _frozen(cells))

    @property
    def n_exercises(self) -> int:
        return len(self.exercise_ids)

    @property
    def n_knowledge(self) -> int:
        return len(self.knowledge_ids)


@dataclass(frozen=True)
class FoldPlan:
    """Partition of the observed cells of one ResponseMatrix into k folds.

    ``rows``/``cols`` list the observed cells in row-major order and
    ``fold_of`` carries each cell's fold index.
    """

    k: int
    rows: NDArray[np.int64]
    cols: NDArray[np.int64]
    fold_of: NDArray[np.int64]

    def __post_init__(self):
        for name in ("rows", "cols", "fold_of"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.int64)))
        if not (self.rows.shape == self.cols.shape == self.fold_of.shape):
            raise ValueError("rows, cols, fold_of must align")
        counts = np.bincount(self.fold_of, minlength=self.k)
        if counts.max() - counts.min() > 1:
            raise ValueError(f"fold sizes {counts.tolist()} differ by more than 1")

    def fold_cells(self, fold: int) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
        sel = self.fold_of == fold
        return self.rows[sel], self.cols[sel]

    def assignments(self, r: ResponseMatrix) -> dict[tuple[str, str], int]:
        """Fold index keyed by (learner_id, exercise_id)."""
        return {
            (r.learner_ids[i], r.exercise_ids[j]): int(f)
            for i, j, f in zip(self.rows.tolist(), self.cols.tolist(), self.fold_of.tolist())
        }


@dataclass(frozen=True)
class GroundTruth:
    """Generating parameters and per-cell true success probabilities."""

    generator: str
    true_learner_params: dict[str, np.ndarray]
    true_item_params: dict[str, np.ndarray]
    bayes_prob: NDArray[np.float64]

    def __post_init__(self):
        p = np.asarray(self.bayes_prob, dtype=np.float64)
        if ((p < 0.0) | (p > 1.0)).any():
            raise ValueError("bayes_prob must lie in [0, 1]")
        if self.generator == "DINA":
            s = self.true_item_params["slip"]
            g = self.true_item_params["guess"]
            if ((s + g) >= 1.0).any():
                raise ValueError("DINA ground truth requires slip + guess < 1 per item")
        object.__setattr__(self, "bayes_prob", _frozen(p))

    def to_json(self) -> str:
        payload: dict = {"generator": self.generator}
        for params in (self.true_learner_params, self.true_item_params):
            for key, value in params.items():
                payload[key] = np.asarray(value).tolist()
        payload["bayes_prob"] = self.bayes_prob.tolist()
        return json.dumps(payload)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    LEARNER_KEYS = ("alpha", "theta")
    ITEM_KEYS = ("slip", "guess", "difficulty", "discrimination", "lambda0", "lambda1")

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        payload = json.loads(text)
        learner = {
            k: np.asarray(payload[k], dtype=np.float64)
            for k in cls.LEARNER_KEYS
            if k in payload
        }
        item = {
            k: np.asarray(payload[k], dtype=np.float64) for k in cls.ITEM_KEYS if k in payload
        }
        return cls(
            generator=payload["generator"],
            true_learner_params=learner,
            true_item_params=item,
            bayes_prob=np.asarray(payload["bayes_prob"], dtype=np.float64),
        )

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# --- loaders -----------------------------------------------------------------


def load_response_matrix(path: str | Path, format: str = "long_csv") -> ResponseMatrix:
    """Load a validated ResponseMatrix from ``long_csv`` or ``dense_tsv``."""
    if format == "long_csv":
        return _load_long_csv(Path(path))
    if format == "dense_tsv":
        return _load_dense_tsv(Path(path))
    raise ValueError(f"unknown response format {format!r}")


def _load_long_csv(path: Path) -> ResponseMatrix:
    records: dict[tuple[str, str], int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(1, "empty file") from None
        if [h.strip() for h in header] != ["learner_id", "exercise_id", "score"]:
            raise MalformedRow(1, f"expected header learner_id,exercise_id,score, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise MalformedRow(line_no, f"expected 3 fields, got {len(row)}")
            learner, exercise, score_text = (f.strip() for f in row)
            if not learner or not exercise:
                raise MalformedRow(line_no, "empty learner or exercise id")
            if score_text not in ("0", "1"):
                raise NonBinaryScore(f"line {line_no}: score {score_text!r} is not 0 or 1")
            key = (learner, exercise)
            if key in records:
                raise DuplicateRecord(f"line {line_no}: duplicate record for {key}")
            records[key] = int(score_text)
    if not records:
        raise EmptyLearnerOrExercise("file contains no records")
    learner_ids = tuple(sorted({k[0] for k in records}))
    exercise_ids = tuple(sorted({k[1] for k in records}))
    l_index = {s: i for i, s in enumerate(learner_ids)}
    e_index = {e: j for j, e in enumerate(exercise_ids)}
    cells = np.full((len(learner_ids), len(exercise_ids)), MISSING, dtype=np.int8)
    for (learner, exercise), score in records.items():
        cells[l_index[learner], e_index[exercise]] = score
    return ResponseMatrix(learner_ids, exercise_ids, cells)


def _load_dense_tsv(path: Path) -> ResponseMatrix:
    rows: list[list[int]] = []
    width = None
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if width is None:
                width = len(tokens)
            elif len(tokens) != width:
                raise MalformedRow(line_no, f"expected {width} columns, got {len(tokens)}")
            parsed = []
            for tok in tokens:
                if tok == "NA":
                    parsed.append(MISSING)
                elif tok in ("0", "1"):
                    parsed.append(int(tok))
                else:
                    raise NonBinaryScore(f"line {line_no}: token {tok!r} is not 0/1/NA")
            rows.append(parsed)
    if not rows:
        raise EmptyLearnerOrExercise("file contains no rows")
    n, m = len(rows), len(rows[0])
    learner_ids = tuple(f"s{i + 1:0{len(str(n))}d}" for i in range(n))
    exercise_ids = tuple(f"e{j + 1:0{len(str(m))}d}" for j in range(m))
    return ResponseMatrix(learner_ids, exercise_ids, np.array(rows, dtype=np.int8))


def load_q_matrix(path: str | Path) -> QMatrix:
    """Load a validated QMatrix from q_csv."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(1, "empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "exercise_id":
            raise MalformedRow(1, f"expected header exercise_id,k_1,...,k_K, got {header}")
        knowledge_ids = tuple(header[1:])
        exercise_ids: list[str] = []
        grid: list[list[int]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise MalformedRow(line_no, f"expected {len(header)} fields, got {len(row)}")
            exercise_ids.append(row[0].strip())
            cells = []
            for tok in row[1:]:
                tok = tok.strip()
                if tok not in ("0", "1"):
                    raise NonBinaryCell(f"line {line_no}: cell {tok!r} is not 0 or 1")
                cells.append(int(tok))
            grid.append(cells)
    if not grid:
        raise MalformedRow(2, "no exercise rows")
    return QMatrix(tuple(exercise_ids), knowledge_ids, np.array(grid, dtype=np.int8))


# --- writers -----------------------------------------------------------------


def write_response_matrix(r: ResponseMatrix, path: str | Path) -> None:
    """Write observed cells as long_csv (learner-major order)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["learner_id", "exercise_id", "score"])
        for i, j, score in r.observed_cells():
            writer.writerow([r.learner_ids[i], r.exercise_ids[j], score])


def write_dense_tsv(r: ResponseMatrix, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in r.cells:
            fh.write("\t".join("NA" if v == MISSING else str(int(v)) for v in row) + "\n")


def write_q_matrix(q: QMatrix, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["exercise_id", *q.knowledge_ids])
        for eid, row in zip(q.exercise_ids, q.cells):
            writer.writerow([eid, *row.tolist()])


def training_fingerprint(r: ResponseMatrix) -> str:
    """Digest of the (possibly masked) training matrix.

    Every artifact fitted on a training split carries this value; matching
    fingerprints prove that no quantity used to score a held-out cell saw
    that cell's value.
    """
    digest = hashlib.sha256()
    digest.update("\x1f".join(r.learner_ids).encode())
    digest.update("\x1f".join(r.exercise_ids).encode())
    digest.update(np.ascontiguousarray(r.cells).tobytes())
    return digest.hexdigest()


# --- fold splitting ----------------------------------------------------------


def split_folds(r: ResponseMatrix, k: int, seed: int) -> FoldPlan:
    """Partition observed cells into k near-equal folds, deterministic in seed.

    Assignment is per observed cell (learner-exercise interaction), not per
    learner, so every learner keeps training cells in every fold.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    rows, cols = np.nonzero(r.observed_mask)
    n = rows.size
    if n < k:
        raise TooFewObservations(f"{n} observed cells cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % k
    return FoldPlan(k=k, rows=rows, cols=cols, fold_of=fold_of)


# --- synthetic generators ----------------------------------------------------


def _check_range(name: str, rng_pair: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(rng_pair[0]), float(rng_pair[1])
    # the closed noiseless limit [0, 0] is allowed; anything >= 0.5 is not
    if not (0.0 <= lo <= hi < 0.5):
        raise InvalidRange(f"{name} must satisfy 0 <= lo <= hi < 0.5, got [{lo}, {hi}]")
    return lo, hi


def _padded_ids(prefix: str, n: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{i + 1:0{len(str(n))}d}" for i in range(n))


def _random_q(rng: np.random.Generator, n_exercises: int, n_knowledge: int) -> np.ndarray:
    """Each exercise requires 1-3 skills chosen uniformly."""
    q = np.zeros((n_exercises, n_knowledge), dtype=np.int8)
    max_skills = min(3, n_knowledge)
    for j in range(n_exercises):
        count = int(rng.integers(1, max_skills + 1))
        q[j, rng.choice(n_knowledge, size=count, replace=False)] = 1
    return q


def ideal_response_grid(alpha: np.ndarray, q_cells: np.ndarray) -> np.ndarray:
    """eta[i, j] = 1 iff learner i masters every skill exercise j requires."""
    deficits = (q_cells[None, :, :] > alpha[:, None, :]).any(axis=2)
    return (~deficits).astype(np.int8)


def generate_synthetic_dina(
    n_learners: int,
    n_exercises: int,
    n_knowledge: int,
    slip_range: tuple[float, float],
    guess_range: tuple[float, float],
    seed: int,
) -> tuple[ResponseMatrix, QMatrix, GroundTruth]:
    """Fully observed responses from a conjunctive slip/guess process."""
    if n_knowledge > 20:
        raise InvalidRange(f"n_knowledge {n_knowledge} > 20: latent classes not enumerable")
    slip_lo, slip_hi = _check_range("slip_range", slip_range)
    guess_lo, guess_hi = _check_range("guess_range", guess_range)
    rng = np.random.default_rng(seed)
    alpha = rng.integers(0, 2, size=(n_learners, n_knowledge)).astype(np.int8)
    q_cells = _random_q(rng, n_exercises, n_knowledge)
    slip = rng.uniform(slip_lo, slip_hi, size=n_exercises)
    guess = rng.uniform(guess_lo, guess_hi, size=n_exercises)
    eta = ideal_response_grid(alpha, q_cells)
    prob = np.where(eta == 1, 1.0 - slip[None, :], guess[None, :])
    cells = (rng.random((n_learners, n_exercises)) < prob).astype(np.int8)
    learner_ids = _padded_ids("s", n_learners)
    exercise_ids = _padded_ids("e", n_exercises)
    knowledge_ids = _padded_ids("k", n_knowledge)
    r = ResponseMatrix(learner_ids, exercise_ids, cells)
    q = QMatrix(exercise_ids, knowledge_ids, q_cells)
    gt = GroundTruth(
        generator="DINA",
        true_learner_params={"alpha": alpha},
        true_item_params={"slip": slip, "guess": guess},
        bayes_prob=prob,
    )
    return r, q, gt


def generate_synthetic_irt(
    n_learners: int, n_exercises: int, seed: int
) -> tuple[ResponseMatrix, GroundTruth]:
    """Fully observed responses from a three-parameter logistic process."""
    if n_learners < 1 or n_exercises < 1:
        raise ValueError("counts must be >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n_learners)
    difficulty = rng.standard_normal(n_exercises)
    discrimination = rng.uniform(0.5, 2.5, size=n_exercises)
    guess = rng.uniform(0.0, 0.25, size=n_exercises)
    logit = IRT_SCALE_CONSTANT * discrimination[None, :] * (theta[:, None] - difficulty[None, :])
    prob = guess[None, :] + (1.0 - guess[None, :]) / (1.0 + np.exp(-logit))
    cells = (rng.random((n_learners, n_exercises)) < prob).astype(np.int8)
    r = ResponseMatrix(_padded_ids("s", n_learners), _padded_ids("e", n_exercises), cells)
    gt = GroundTruth(
        generator="IRT",
        true_learner_params={"theta": theta},
        true_item_params={
            "difficulty": difficulty,
            "discrimination": discrimination,
            "guess": guess,
        },
        bayes_prob=prob,
    )
    return r, gt


def generate_synthetic_hodina(
    n_learners: int,
    n_exercises: int,
    n_knowledge: int,
    lambda0: float,
    lambda1: float,
    slip: float,
    guess: float,
    seed: int,
) -> tuple[ResponseMatrix, QMatrix, GroundTruth]:
    """Responses where mastery itself is driven by a higher-order ability.

    Attribute k of learner i is Bernoulli with logistic probability
    sigma(lambda0 + lambda1 * theta_i); responses then follow the
    conjunctive slip/guess law.
    """
    if n_knowledge > 20:
        raise InvalidRange(f"n_knowledge {n_knowledge} > 20: latent classes not enumerable")
    if lambda1 <= 0:
        raise InvalidRange("lambda1 must be positive")
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n_learners)
    mastery_prob = 1.0 / (1.0 + np.exp(-(lambda0 + lambda1 * theta)))
    alpha = (rng.random((n_learners, n_knowledge)) < mastery_prob[:, None]).astype(np.int8)
    q_cells = _random_q(rng, n_exercises, n_knowledge)
    slip_vec = np.full(n_exercises, float(slip))
    guess_vec = np.full(n_exercises, float(guess))
    eta = ideal_response_grid(alpha, q_cells)
    prob = np.where(eta == 1, 1.0 - slip_vec[None, :], guess_vec[None, :])
    cells = (rng.random((n_learners, n_exercises)) < prob).astype(np.int8)
    learner_ids = _padded_ids("s", n_learners)
    exercise_ids = _padded_ids("e", n_exercises)
    r = ResponseMatrix(learner_ids, exercise_ids, cells)
    q = QMatrix(exercise_ids, _padded_ids("k", n_knowledge), q_cells)
    gt = GroundTruth(
        generator="HODINA",
        true_learner_params={"theta": theta, "alpha": alpha},
        true_item_params={
            "slip": slip_vec,
            "guess": guess_vec,
            "lambda0": np.full(n_knowledge, float(lambda0)),
            "lambda1": np.full(n_knowledge, float(lambda1)),
        },
        bayes_prob=prob,
    )
    return r, q, gt
