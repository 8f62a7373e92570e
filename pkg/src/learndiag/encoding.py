"""One-hot encoding of cognitive parameter rows and the representation autoencoders.

Continuous columns are discretized into equal-width bins computed from
training rows only; binary columns pass through. Learners and exercises
get separate plans and separate autoencoders.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndgrad as ng
from .errors import ArityMismatch, EmptyInput
from .psych.params import BINARY, CONTINUOUS, CognitiveParameterSets

DEFAULT_BINS = 10


@dataclass(frozen=True)
class ColumnCodec:
    """How one parameter column becomes bits: bin edges or pass-through."""

    name: str
    kind: str  # CONTINUOUS or BINARY
    edges: tuple[float, ...] = ()   # interior edges; empty for binary columns
    degenerate: bool = False        # constant training column -> single bin

    @property
    def width(self) -> int:
        return 1 if self.kind == BINARY else len(self.edges) + 1


@dataclass(frozen=True)
class SidePlan:
    columns: tuple[ColumnCodec, ...]

    @property
    def width(self) -> int:
        return sum(c.width for c in self.columns)

    @property
    def feature_names(self) -> tuple[str, ...]:
        names = []
        for codec in self.columns:
            if codec.kind == BINARY:
                names.append(codec.name)
            else:
                names.extend(f"{codec.name}.bin{i}" for i in range(codec.width))
        return tuple(names)


@dataclass(frozen=True)
class EncodingPlan:
    learner: SidePlan
    exercise: SidePlan
    bins_per_param: int
    meta: dict = field(default_factory=dict)

    @property
    def d0(self) -> int:
        return self.learner.width

    @property
    def d1(self) -> int:
        return self.exercise.width

    def to_json(self) -> str:
        def side(plan: SidePlan):
            return [
                {
                    "name": c.name,
                    "kind": c.kind,
                    "edges": list(c.edges),
                    "degenerate": c.degenerate,
                }
                for c in plan.columns
            ]

        return json.dumps(
            {
                "bins_per_param": self.bins_per_param,
                "learner": side(self.learner),
                "exercise": side(self.exercise),
                "meta": self.meta,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "EncodingPlan":
        payload = json.loads(text)

        def side(entries):
            return SidePlan(
                tuple(
                    ColumnCodec(
                        name=e["name"],
                        kind=e["kind"],
                        edges=tuple(e["edges"]),
                        degenerate=e["degenerate"],
                    )
                    for e in entries
                )
            )

        return cls(
            learner=side(payload["learner"]),
            exercise=side(payload["exercise"]),
            bins_per_param=payload["bins_per_param"],
            meta=payload.get("meta", {}),
        )


def _plan_side(
    matrix: np.ndarray,
    columns: tuple[tuple[str, str], ...],
    bins: int,
    rows: np.ndarray,
) -> SidePlan:
    codecs = []
    for j, (name, kind) in enumerate(columns):
        if kind == BINARY:
            codecs.append(ColumnCodec(name=name, kind=BINARY))
            continue
        values = matrix[rows, j]
        lo, hi = float(values.min()), float(values.max())
        if hi - lo < 1e-12:
            codecs.append(ColumnCodec(name=name, kind=CONTINUOUS, edges=(), degenerate=True))
            continue
        edges = np.linspace(lo, hi, bins + 1)[1:-1]
        codecs.append(ColumnCodec(name=name, kind=CONTINUOUS, edges=tuple(edges.tolist())))
    return SidePlan(tuple(codecs))


def build_encoding_plan(
    sets: CognitiveParameterSets,
    bins_per_param: int = DEFAULT_BINS,
    learner_rows: np.ndarray | None = None,
    exercise_rows: np.ndarray | None = None,
) -> EncodingPlan:
    """Equal-width bin edges per continuous column, from training rows only."""
    if bins_per_param < 2:
        raise ValueError(f"bins_per_param must be >= 2, got {bins_per_param}")
    learner_rows = (
        np.arange(sets.SC.shape[0]) if learner_rows is None else np.asarray(learner_rows)
    )
    exercise_rows = (
        np.arange(sets.EC.shape[0]) if exercise_rows is None else np.asarray(exercise_rows)
    )
    if learner_rows.size == 0 or exercise_rows.size == 0:
        raise EmptyInput("plan construction needs at least one training row per side")
    return EncodingPlan(
        learner=_plan_side(sets.SC, sets.learner_columns, bins_per_param, learner_rows),
        exercise=_plan_side(sets.EC, sets.exercise_columns, bins_per_param, exercise_rows),
        bins_per_param=bins_per_param,
        meta={"fingerprint": sets.meta.get("fingerprint")},
    )


def encode_matrix(rows: np.ndarray, plan_side: SidePlan) -> np.ndarray:
    """One-hot encode many parameter rows at once."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != len(plan_side.columns):
        raise ArityMismatch(
            f"row has {rows.shape[1]} values, plan expects {len(plan_side.columns)}"
        )
    out = np.zeros((rows.shape[0], plan_side.width))
    offset = 0
    for j, codec in enumerate(plan_side.columns):
        if codec.kind == BINARY:
            out[:, offset] = rows[:, j]
        else:
            # out-of-range values clip into the first/last bin
            idx = np.searchsorted(np.asarray(codec.edges), rows[:, j], side="right")
            out[np.arange(rows.shape[0]), offset + idx] = 1.0
        offset += codec.width
    return out


def one_hot_encode(row: np.ndarray, plan_side: SidePlan) -> np.ndarray:
    """One-hot encode a single parameter row."""
    return encode_matrix(row, plan_side)[0]


@dataclass(frozen=True)
class SAETrainConfig:
    epochs: int = 100
    learning_rate: float = 0.001
    batch_size: int = 64
    seed: int = 0


@dataclass
class SAEModel:
    """Single encoder/decoder pair with tanh activations."""

    w_enc: ng.Tensor
    b_enc: ng.Tensor
    w_dec: ng.Tensor
    b_dec: ng.Tensor
    latent_dim: int
    loss_trace: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.w_enc.values.shape[0]

    def params(self) -> dict[str, ng.Tensor]:
        return {"w_enc": self.w_enc, "b_enc": self.b_enc, "w_dec": self.w_dec, "b_dec": self.b_dec}

    def freeze(self) -> None:
        for t in self.params().values():
            t.requires_grad = False

    def encode_values(self, x: np.ndarray) -> np.ndarray:
        """tanh(x @ W1 + b1) without touching the autodiff graph."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise ArityMismatch(f"input width {x.shape[1]}, model expects {self.input_dim}")
        return np.tanh(x @ self.w_enc.values + self.b_enc.values)

    def reconstruct_values(self, x: np.ndarray) -> np.ndarray:
        h = self.encode_values(x)
        return np.tanh(h @ self.w_dec.values + self.b_dec.values)

    def save(self, path: str | Path) -> None:
        ng.save_checkpoint(self.params(), path)

    @classmethod
    def load(cls, path: str | Path) -> "SAEModel":
        arrays = ng.load_checkpoint(path)
        model = cls(
            w_enc=ng.Tensor(arrays["w_enc"]),
            b_enc=ng.Tensor(arrays["b_enc"]),
            w_dec=ng.Tensor(arrays["w_dec"]),
            b_dec=ng.Tensor(arrays["b_dec"]),
            latent_dim=arrays["w_enc"].shape[1],
        )
        return model


def encode(model: SAEModel, x: np.ndarray) -> np.ndarray:
    """Latent representation of one encoded vector; components in (-1, 1)."""
    return model.encode_values(x)[0] if np.asarray(x).ndim == 1 else model.encode_values(x)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def train_sae(
    vectors: np.ndarray, latent_dim: int, config: SAETrainConfig = SAETrainConfig()
) -> SAEModel:
    """Minimize mean squared reconstruction error with Adam.

    Deterministic given the seed; with 0 epochs the initialized model is
    returned untouched.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise EmptyInput("train_sae needs a nonempty (rows, width) matrix")
    n, width = vectors.shape
    rng = np.random.default_rng(config.seed)
    model = SAEModel(
        w_enc=ng.Tensor(_xavier(rng, width, latent_dim), requires_grad=True),
        b_enc=ng.Tensor(np.zeros(latent_dim), requires_grad=True),
        w_dec=ng.Tensor(_xavier(rng, latent_dim, width), requires_grad=True),
        b_dec=ng.Tensor(np.zeros(width), requires_grad=True),
        latent_dim=latent_dim,
        meta={"seed": config.seed, "epochs": config.epochs},
    )
    params = list(model.params().values())
    state = ng.AdamState.for_params(params, learning_rate=config.learning_rate)
    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = vectors[order[start : start + config.batch_size]]
            x = ng.Tensor(batch)
            h = ng.tanh(ng.dense(x, model.w_enc, model.b_enc))
            y = ng.tanh(ng.dense(h, model.w_dec, model.b_dec))
            loss = ng.mse_loss(y, batch)
            ng.backward(loss)
            ng.adam_step(params, state)
            losses.append(loss.values.item())
        trace.append(float(np.mean(losses)))
    model.loss_trace = tuple(trace)
    return model


def column_mean_baseline_mse(vectors: np.ndarray) -> float:
    """MSE of predicting each column by its mean (the variance bound)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    return float(((vectors - vectors.mean(axis=0)) ** 2).mean())
