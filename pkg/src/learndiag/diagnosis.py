"""Fusion and prediction pipeline.

Learner/resource latents feed a response network; its deep feature is
concatenated with the raw cognitive parameter rows, reweighted by
per-position self-attention over the fused vector, and scored by a small
convolutional head. Trained end-to-end on binary cross-entropy with
early stopping on validation AUC.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ndgrad as ng
from .dataio import QMatrix, ResponseMatrix
from .encoding import (
    EncodingPlan,
    SAEModel,
    SAETrainConfig,
    build_encoding_plan,
    encode_matrix,
    train_sae,
)
from .errors import (
    EmptyTrainingSet,
    NoValidationCells,
    ShapeMismatch,
    UnknownExercise,
    UnknownLearner,
)
from .evaluation import ChannelFits, auc
from .psych import VARIANT_LDM_HMI, VARIANT_LDM_ID, CognitiveParameterSets, build_parameter_sets


@dataclass(frozen=True)
class LDMConfig:
    """Network widths and training schedule for one diagnosis mechanism."""

    variant: str = VARIANT_LDM_ID
    d2: int = 128                 # learner latent width
    d3: int = 64                  # exercise latent width
    d4: int = 64                  # response-network output width
    attention_channels: int = 16
    conv_kernel: int = 3
    conv_channels: int = 8
    pool_window: int = 2
    dropout_rate: float = 0.2
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    use_deep_feature: bool = True
    use_shallow_feature: bool = True
    use_attention: bool = True

    def __post_init__(self):
        if self.d4 <= 0:
            raise ValueError("d4 must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        for name in ("d2", "d3", "attention_channels", "conv_channels", "pool_window",
                     "batch_size", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")
        if not (self.use_deep_feature or self.use_shallow_feature):
            raise ValueError("at least one of deep/shallow features must be enabled")


@dataclass(frozen=True)
class PredictionRecord:
    learner_id: str
    exercise_id: str
    p: float
    attention_weights: np.ndarray  # length d5, sums to 1


@dataclass
class LDMModel:
    sae_learner: SAEModel
    sae_exercise: SAEModel
    plan: EncodingPlan
    sets: CognitiveParameterSets
    config: LDMConfig
    net: dict[str, ng.Tensor]
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._learner_index = {s: i for i, s in enumerate(self.sets.learner_ids)}
        self._exercise_index = {e: j for j, e in enumerate(self.sets.exercise_ids)}
        self._h_learner = self.sae_learner.encode_values(
            encode_matrix(self.sets.SC, self.plan.learner)
        )
        self._h_exercise = self.sae_exercise.encode_values(
            encode_matrix(self.sets.EC, self.plan.exercise)
        )

    @property
    def fused_width(self) -> int:
        width = self.config.d4 if self.config.use_deep_feature else 0
        if self.config.use_shallow_feature:
            width += self.sets.learner_width + self.sets.exercise_width
        return width

    @property
    def learner_latents(self) -> np.ndarray:
        """Cached autoencoder latents, one row per learner."""
        return self._h_learner

    @property
    def exercise_latents(self) -> np.ndarray:
        return self._h_exercise

    def learner_index(self, learner_id: str) -> int:
        if learner_id not in self._learner_index:
            raise UnknownLearner(f"learner {learner_id!r} was not present at fit time")
        return self._learner_index[learner_id]

    def exercise_index(self, exercise_id: str) -> int:
        if exercise_id not in self._exercise_index:
            raise UnknownExercise(f"exercise {exercise_id!r} was not present at fit time")
        return self._exercise_index[exercise_id]

    def feature_names(self) -> tuple[str, ...]:
        names: list[str] = []
        if self.config.use_deep_feature:
            names.extend(f"deep.f{i}" for i in range(self.config.d4))
        if self.config.use_shallow_feature:
            names.extend(name for name, _ in self.sets.learner_columns)
            names.extend(name for name, _ in self.sets.exercise_columns)
        return tuple(names)


# --- network parameter construction ---------------------------------------------


def _xavier(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_network(config: LDMConfig, d_shallow: int, rng: np.random.Generator) -> dict[str, ng.Tensor]:
    """Fresh trainable tensors for every stage the config enables."""
    d5 = (config.d4 if config.use_deep_feature else 0) + (
        d_shallow if config.use_shallow_feature else 0
    )
    if d5 < max(config.conv_kernel, config.pool_window):
        raise ShapeMismatch(f"fused width {d5} too small for the prediction head")
    net: dict[str, ng.Tensor] = {}
    if config.use_deep_feature:
        lrr_in = config.d2 + config.d3
        net["w3"] = ng.Tensor(_xavier(rng, lrr_in, config.d4, (lrr_in, config.d4)),
                              requires_grad=True)
        net["b3"] = ng.Tensor(np.zeros(config.d4), requires_grad=True)
    cin = 1
    c = config.attention_channels
    if config.use_attention:
        for name in ("query", "key", "value"):
            net[f"{name}_kernel"] = ng.Tensor(
                _xavier(rng, cin, c, (c, cin, 1)), requires_grad=True
            )
            net[f"{name}_bias"] = ng.Tensor(np.zeros(c), requires_grad=True)
        head_in = c
    else:
        head_in = 1
    k = config.conv_kernel
    oc = config.conv_channels
    net["conv_kernel"] = ng.Tensor(
        _xavier(rng, head_in * k, oc * k, (oc, head_in, k)), requires_grad=True
    )
    net["conv_bias"] = ng.Tensor(np.zeros(oc), requires_grad=True)
    flat = oc * (d5 // config.pool_window)
    net["w4"] = ng.Tensor(_xavier(rng, flat, 1, (flat, 1)), requires_grad=True)
    net["b4"] = ng.Tensor(np.zeros(1), requires_grad=True)
    return net


# --- pipeline stages --------------------------------------------------------------


def _lift_rows(x: ng.Tensor) -> tuple[ng.Tensor, bool]:
    if x.values.ndim == 1:
        return ng.reshape(x, (1, x.values.shape[0])), True
    return x, False


def lrr_forward(
    h_s: ng.Tensor,
    h_e: ng.Tensor,
    w3: ng.Tensor,
    b3: ng.Tensor,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng=None,
) -> ng.Tensor:
    """Deep interaction feature: tanh(W3 . concat(h_s, h_e) + b3)."""
    h_s, single = _lift_rows(h_s)
    h_e, _ = _lift_rows(h_e)
    if h_s.values.shape[0] != h_e.values.shape[0]:
        raise ShapeMismatch(f"batch sizes differ: {h_s.shape} vs {h_e.shape}")
    joint = ng.concat([h_s, h_e], axis=1)
    deep = ng.tanh(ng.dense(joint, w3, b3))
    deep = ng.dropout(deep, dropout_rate, training, rng)
    return ng.reshape(deep, (deep.values.shape[1],)) if single else deep


def fuse(f_d: Optional[ng.Tensor], sc_row: Optional[ng.Tensor], ec_row: Optional[ng.Tensor]) -> ng.Tensor:
    """Concatenate deep feature and raw parameter rows, in that fixed order."""
    parts = [p for p in (f_d, sc_row, ec_row) if p is not None]
    if not parts:
        raise ShapeMismatch("fuse needs at least one feature block")
    lifted = [_lift_rows(p) for p in parts]
    single = lifted[0][1]
    fused = ng.concat([t for t, _ in lifted], axis=1)
    return ng.reshape(fused, (fused.values.shape[1],)) if single else fused


def attention_forward(f: ng.Tensor, net: dict[str, ng.Tensor]) -> tuple[ng.Tensor, ng.Tensor]:
    """Per-position dot-product self-attention over the fused vector.

    The fused vector is a one-channel sequence; kernel-1 convolutions
    produce Query/Key/Value channels, every position attends to every
    other with unscaled dot-product similarities, and the output keeps one
    column per position. Also returns the full weight matrix (query rows
    sum to 1).
    """
    f, single = _lift_rows(f)
    n, d5 = f.values.shape
    seq = ng.reshape(f, (n, 1, d5))
    query = ng.conv1d(seq, net["query_kernel"], net["query_bias"])
    key = ng.conv1d(seq, net["key_kernel"], net["key_bias"])
    value = ng.conv1d(seq, net["value_kernel"], net["value_bias"])
    sim = ng.matmul(ng.transpose_last2(query), key)  # (n, d5, d5)
    weights = ng.softmax(sim)
    attended = ng.transpose_last2(ng.matmul(weights, ng.transpose_last2(value)))  # (n, c, d5)
    if single:
        attended = ng.reshape(attended, attended.values.shape[1:])
        weights = ng.reshape(weights, (d5, d5))
    return attended, weights


def predict_forward(
    f_a: ng.Tensor,
    net: dict[str, ng.Tensor],
    pool_window: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng=None,
) -> ng.Tensor:
    """conv(k=3, stride 1) -> relu -> maxpool -> flatten -> dense -> sigmoid."""
    values = f_a.values
    single = values.ndim == 2
    if single:
        f_a = ng.reshape(f_a, (1, *values.shape))
    n = f_a.values.shape[0]
    conv = ng.relu(ng.conv1d(f_a, net["conv_kernel"], net["conv_bias"]))
    pooled = ng.maxpool1d(conv, pool_window)
    flat_dim = pooled.values.shape[1] * pooled.values.shape[2]
    flat = ng.reshape(pooled, (n, flat_dim))
    flat = ng.dropout(flat, dropout_rate, training, rng)
    p = ng.sigmoid(ng.dense(flat, net["w4"], net["b4"]))
    p = ng.reshape(p, (n,))
    return ng.reshape(p, ()) if single else p


def _forward_batch(
    model_net: dict[str, ng.Tensor],
    config: LDMConfig,
    h_s: np.ndarray,
    h_e: np.ndarray,
    sc: np.ndarray,
    ec: np.ndarray,
    training: bool,
    rng=None,
) -> tuple[ng.Tensor, np.ndarray]:
    """Probabilities plus position-averaged attention weights for a cell batch."""
    f_d = None
    if config.use_deep_feature:
        f_d = lrr_forward(
            ng.Tensor(h_s), ng.Tensor(h_e), model_net["w3"], model_net["b3"],
            config.dropout_rate, training, rng,
        )
    sc_t = ng.Tensor(sc) if config.use_shallow_feature else None
    ec_t = ng.Tensor(ec) if config.use_shallow_feature else None
    fused = fuse(f_d, sc_t, ec_t)
    n, d5 = fused.values.shape
    if config.use_attention:
        attended, weights = attention_forward(fused, model_net)
        mean_weights = weights.values.mean(axis=1)
    else:
        attended = ng.reshape(fused, (n, 1, d5))
        mean_weights = np.full((n, d5), 1.0 / d5)
    p = predict_forward(
        attended, model_net, config.pool_window, config.dropout_rate, training, rng
    )
    return p, mean_weights


# --- training ----------------------------------------------------------------------


def train_ldm(
    r: ResponseMatrix,
    q: Optional[QMatrix],
    sets: CognitiveParameterSets,
    saes: tuple[SAEModel, SAEModel],
    plan: EncodingPlan,
    config: LDMConfig,
    train_cells: tuple[np.ndarray, np.ndarray],
    val_cells: tuple[np.ndarray, np.ndarray],
) -> LDMModel:
    """Minimize mean BCE over the training cells with Adam.

    Early-stops on validation AUC and returns the weights of the best
    validation epoch. Deterministic given the seed.
    """
    train_rows, train_cols = (np.asarray(a) for a in train_cells)
    val_rows, val_cols = (np.asarray(a) for a in val_cells)
    if train_rows.size == 0:
        raise EmptyTrainingSet("no training cells supplied")
    if val_rows.size == 0:
        raise NoValidationCells("early stopping needs validation cells")
    if q is not None and tuple(q.exercise_ids) != tuple(sets.exercise_ids):
        raise ShapeMismatch("Q-matrix exercises do not align with the parameter sets")

    sae_learner, sae_exercise = saes
    sae_learner.freeze()
    sae_exercise.freeze()
    model = LDMModel(
        sae_learner=sae_learner,
        sae_exercise=sae_exercise,
        plan=plan,
        sets=sets,
        config=config,
        net={},
        fingerprint=str(sets.meta.get("fingerprint", "")),
    )
    rng = np.random.default_rng(config.seed)
    d_shallow = sets.learner_width + sets.exercise_width
    model.net = init_network(config, d_shallow, rng)
    params = list(model.net.values())
    state = ng.AdamState.for_params(params, learning_rate=config.learning_rate)

    h_l, h_e = model._h_learner, model._h_exercise
    sc, ec = sets.SC, sets.EC
    y_train = np.asarray(r.cells[train_rows, train_cols], dtype=np.float64)
    y_val = np.asarray(r.cells[val_rows, val_cols], dtype=np.float64)

    def val_auc() -> float:
        scores, _ = predict_cells(model, val_rows, val_cols)
        return auc(y_val, scores)

    best_auc = -np.inf
    best_values = {name: t.values.copy() for name, t in model.net.items()}
    best_epoch = -1
    wait = 0
    bce_trace = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(train_rows.size)
        epoch_losses = []
        for start in range(0, order.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            rows_b, cols_b = train_rows[idx], train_cols[idx]
            p, _ = _forward_batch(
                model.net, config, h_l[rows_b], h_e[cols_b], sc[rows_b], ec[cols_b],
                training=True, rng=rng,
            )
            loss = ng.bce_loss(p, y_train[idx])
            ng.backward(loss)
            ng.adam_step(params, state)
            epoch_losses.append(loss.values.item())
        bce_trace.append(float(np.mean(epoch_losses)))
        score = val_auc()
        if score > best_auc + 1e-12:
            best_auc = score
            best_values = {name: t.values.copy() for name, t in model.net.items()}
            best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    for name, tensor in model.net.items():
        tensor.values = best_values[name]
    model.meta.update(
        {
            "best_epoch": best_epoch,
            "best_val_auc": best_auc,
            "epochs_run": len(bce_trace),
            "bce_trace": bce_trace,
            "seed": config.seed,
        }
    )
    return model


def train_ldm_from_fits(
    r_train: ResponseMatrix,
    q: Optional[QMatrix],
    fits: ChannelFits,
    config: LDMConfig,
    train_cells: tuple[np.ndarray, np.ndarray],
    val_cells: tuple[np.ndarray, np.ndarray],
    include_irt_guess: bool = False,
    bins_per_param: int = 10,
    sae_epochs: int = 100,
) -> LDMModel:
    """Assemble sets/plan/autoencoders from fitted channels, then train."""
    meta = {"fingerprint": fits.fingerprint, "seed": config.seed}
    if config.variant == VARIANT_LDM_ID:
        sets = build_parameter_sets(
            VARIANT_LDM_ID,
            learner_ids=r_train.learner_ids,
            exercise_ids=r_train.exercise_ids,
            irt_items=fits.irt.items,
            irt_learners=fits.irt.learners,
            dina_items=fits.dina.items,
            dina_learners=fits.dina.learners,
            include_irt_guess=include_irt_guess,
            meta=meta,
        )
    else:
        sets = build_parameter_sets(
            VARIANT_LDM_HMI,
            learner_ids=r_train.learner_ids,
            exercise_ids=r_train.exercise_ids,
            irt_items=fits.irt.items,
            irt_learners=fits.irt.learners,
            mirt_items=fits.mirt.items,
            mirt_learners=fits.mirt.learners,
            hodina=fits.hodina,
            include_irt_guess=include_irt_guess,
            meta=meta,
        )
    plan = build_encoding_plan(sets, bins_per_param)
    x_learner = encode_matrix(sets.SC, plan.learner)
    x_exercise = encode_matrix(sets.EC, plan.exercise)
    sae_l = train_sae(x_learner, config.d2, SAETrainConfig(epochs=sae_epochs, seed=config.seed))
    sae_e = train_sae(x_exercise, config.d3, SAETrainConfig(epochs=sae_epochs, seed=config.seed + 1))
    return train_ldm(r_train, q, sets, (sae_l, sae_e), plan, config, train_cells, val_cells)


# --- inference ----------------------------------------------------------------------


def predict_cells(
    model: LDMModel, rows: np.ndarray, cols: np.ndarray, batch_size: int = 4096
) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and attention-weight vectors for index-addressed cells."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    scores = np.empty(rows.size)
    weights = np.empty((rows.size, model.fused_width))
    for start in range(0, rows.size, batch_size):
        sl = slice(start, start + batch_size)
        p, w = _forward_batch(
            model.net,
            model.config,
            model._h_learner[rows[sl]],
            model._h_exercise[cols[sl]],
            model.sets.SC[rows[sl]],
            model.sets.EC[cols[sl]],
            training=False,
        )
        scores[sl] = p.values
        weights[sl] = w
    return scores, weights


def predict(model: LDMModel, learner_id: str, exercise_id: str) -> PredictionRecord:
    """Score one (learner, exercise) pair in inference mode."""
    row = np.array([model.learner_index(learner_id)])
    col = np.array([model.exercise_index(exercise_id)])
    scores, weights = predict_cells(model, row, col)
    return PredictionRecord(
        learner_id=learner_id,
        exercise_id=exercise_id,
        p=float(scores[0]),
        attention_weights=weights[0],
    )


def write_predictions_csv(records: list[PredictionRecord], path: str | Path) -> None:
    import csv

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["learner_id", "exercise_id", "p"])
        for record in records:
            writer.writerow([record.learner_id, record.exercise_id, repr(record.p)])


# --- model bundle ---------------------------------------------------------------------


def save_model(model: LDMModel, directory: str | Path) -> None:
    """plan.json + psychometrics.json + SAE/network checkpoints + config.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "plan.json").write_text(model.plan.to_json(), encoding="utf-8")
    sets = model.sets
    (directory / "psychometrics.json").write_text(
        json.dumps(
            {
                "variant": sets.variant,
                "learner_ids": list(sets.learner_ids),
                "exercise_ids": list(sets.exercise_ids),
                "learner_columns": [list(c) for c in sets.learner_columns],
                "exercise_columns": [list(c) for c in sets.exercise_columns],
                "SC": sets.SC.tolist(),
                "EC": sets.EC.tolist(),
                "meta": sets.meta,
            }
        ),
        encoding="utf-8",
    )
    model.sae_learner.save(directory / "sae_learner.ckpt")
    model.sae_exercise.save(directory / "sae_exercise.ckpt")
    ng.save_checkpoint(model.net, directory / "network.ckpt")
    config_payload = {name: getattr(model.config, name) for name in model.config.__dataclass_fields__}
    (directory / "config.json").write_text(
        json.dumps({"config": config_payload, "fingerprint": model.fingerprint, "meta": model.meta}),
        encoding="utf-8",
    )


def load_model(directory: str | Path) -> LDMModel:
    directory = Path(directory)
    plan = EncodingPlan.from_json((directory / "plan.json").read_text(encoding="utf-8"))
    psych = json.loads((directory / "psychometrics.json").read_text(encoding="utf-8"))
    sets = CognitiveParameterSets(
        variant=psych["variant"],
        EC=np.asarray(psych["EC"], dtype=np.float64),
        SC=np.asarray(psych["SC"], dtype=np.float64),
        learner_ids=tuple(psych["learner_ids"]),
        exercise_ids=tuple(psych["exercise_ids"]),
        learner_columns=tuple((n, k) for n, k in psych["learner_columns"]),
        exercise_columns=tuple((n, k) for n, k in psych["exercise_columns"]),
        meta=psych["meta"],
    )
    bundle = json.loads((directory / "config.json").read_text(encoding="utf-8"))
    config = LDMConfig(**bundle["config"])
    net = {name: ng.Tensor(values) for name, values in
           ng.load_checkpoint(directory / "network.ckpt").items()}
    model = LDMModel(
        sae_learner=SAEModel.load(directory / "sae_learner.ckpt"),
        sae_exercise=SAEModel.load(directory / "sae_exercise.ckpt"),
        plan=plan,
        sets=sets,
        config=config,
        net=net,
        fingerprint=bundle.get("fingerprint", ""),
        meta=bundle.get("meta", {}),
    )
    return model
