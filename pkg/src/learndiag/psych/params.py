"""Fitted parameter containers and the per-variant EC/SC assembly.

Column descriptors (name, kind) travel with the assembled sets so the
encoder knows which columns to bin and the interpretability exports can
label everything by channel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from ..dataio import IRT_SCALE_CONSTANT
from ..errors import MissingChannel, ShapeMismatch

VARIANT_LDM_ID = "LDM_ID"
VARIANT_LDM_HMI = "LDM_HMI"

CONTINUOUS = "continuous"
BINARY = "binary"


def latent_profiles(n_knowledge: int) -> np.ndarray:
    """All 2^K mastery profiles; row l has bit k = (l >> k) & 1."""
    count = 1 << n_knowledge
    rows = np.arange(count, dtype=np.int64)
    return ((rows[:, None] >> np.arange(n_knowledge)[None, :]) & 1).astype(np.int8)


@dataclass(frozen=True)
class IRTItemParams:
    difficulty: NDArray[np.float64]
    discrimination: NDArray[np.float64]
    guess: NDArray[np.float64]
    scale_constant: float = IRT_SCALE_CONSTANT
    degenerate: NDArray[np.bool_] = None

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(self.difficulty.shape, dtype=bool))
        if not ((self.discrimination > 0) & (self.discrimination <= 4.0)).all():
            raise ValueError("discrimination must lie in (0, 4]")
        if not ((self.difficulty >= -4.0) & (self.difficulty <= 4.0)).all():
            raise ValueError("difficulty must lie in [-4, 4]")
        if not ((self.guess >= 0.0) & (self.guess <= 0.5)).all():
            raise ValueError("guess must lie in [0, 0.5]")

    @property
    def n_items(self) -> int:
        return self.difficulty.shape[0]


@dataclass(frozen=True)
class IRTLearnerParams:
    theta: NDArray[np.float64]

    def __post_init__(self):
        if not np.isfinite(self.theta).all():
            raise ValueError("theta must be finite")


@dataclass(frozen=True)
class DINAItemParams:
    slip: NDArray[np.float64]
    guess: NDArray[np.float64]
    degenerate: NDArray[np.bool_] = None

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(self.slip.shape, dtype=bool))
        if not ((self.slip > 0) & (self.slip < 1) & (self.guess > 0) & (self.guess < 1)).all():
            raise ValueError("slip and guess must lie in (0, 1)")
        if not (self.slip + self.guess < 1.0).all():
            raise ValueError("slip + guess must stay below 1 (mastery must help)")


@dataclass(frozen=True)
class DINALearnerParams:
    alpha: NDArray[np.int8]
    posterior: NDArray[np.float64]

    def __post_init__(self):
        sums = self.posterior.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ValueError("each posterior row must sum to 1 within 1e-9")
        profiles = latent_profiles(self.alpha.shape[1])
        mode = (self.posterior @ profiles >= 0.5).astype(np.int8)
        if not np.array_equal(mode, self.alpha):
            raise ValueError("alpha must be the attribute-wise mode of the posterior")

    @property
    def mastery_probability(self) -> np.ndarray:
        """Per-attribute posterior mastery probabilities."""
        return self.posterior @ latent_profiles(self.alpha.shape[1])


@dataclass(frozen=True)
class MIRTItemParams:
    disc_vector: NDArray[np.float64]  # (items, dims)
    difficulty: NDArray[np.float64]
    guess: NDArray[np.float64]
    scale_constant: float = IRT_SCALE_CONSTANT
    degenerate: NDArray[np.bool_] = None

    def __post_init__(self):
        if self.degenerate is None:
            object.__setattr__(self, "degenerate", np.zeros(self.difficulty.shape, dtype=bool))
        if self.disc_vector.ndim != 2:
            raise ShapeMismatch(f"disc_vector must be (items, dims), got {self.disc_vector.shape}")
        if (self.disc_vector < 0).any():
            raise ValueError("disc_vector components must be >= 0")
        if not ((self.guess >= 0.0) & (self.guess <= 0.5)).all():
            raise ValueError("guess must lie in [0, 0.5]")

    @property
    def dims(self) -> int:
        return self.disc_vector.shape[1]


@dataclass(frozen=True)
class MIRTLearnerParams:
    alpha_vector: NDArray[np.float64]  # (learners, dims)

    def __post_init__(self):
        if not np.isfinite(self.alpha_vector).all():
            raise ValueError("ability vectors must be finite")


@dataclass(frozen=True)
class HoDINAParams:
    theta: NDArray[np.float64]
    alpha: NDArray[np.int8]
    alpha_posterior_mean: NDArray[np.float64]
    slip: NDArray[np.float64]
    guess: NDArray[np.float64]
    lambda0: NDArray[np.float64]
    lambda1: NDArray[np.float64]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.slip + self.guess < 1.0).all():
            raise ValueError("slip + guess must stay below 1")
        if not (self.lambda1 > 0).all():
            raise ValueError("lambda1 must be positive")


@dataclass(frozen=True)
class CognitiveParameterSets:
    """Per-variant EC (exercise) and SC (learner) parameter matrices."""

    variant: str
    EC: NDArray[np.float64]
    SC: NDArray[np.float64]
    learner_ids: tuple[str, ...]
    exercise_ids: tuple[str, ...]
    learner_columns: tuple[tuple[str, str], ...]  # (name, kind)
    exercise_columns: tuple[tuple[str, str], ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.EC.shape != (len(self.exercise_ids), len(self.exercise_columns)):
            raise ShapeMismatch(
                f"EC shape {self.EC.shape} vs {len(self.exercise_ids)} exercises "
                f"x {len(self.exercise_columns)} columns"
            )
        if self.SC.shape != (len(self.learner_ids), len(self.learner_columns)):
            raise ShapeMismatch(
                f"SC shape {self.SC.shape} vs {len(self.learner_ids)} learners "
                f"x {len(self.learner_columns)} columns"
            )

    @property
    def learner_width(self) -> int:
        return self.SC.shape[1]

    @property
    def exercise_width(self) -> int:
        return self.EC.shape[1]

    def learner_row(self, index: int) -> np.ndarray:
        return self.SC[index]

    def exercise_row(self, index: int) -> np.ndarray:
        return self.EC[index]


def build_parameter_sets(
    variant: str,
    *,
    learner_ids: tuple[str, ...],
    exercise_ids: tuple[str, ...],
    irt_items: Optional[IRTItemParams] = None,
    irt_learners: Optional[IRTLearnerParams] = None,
    dina_items: Optional[DINAItemParams] = None,
    dina_learners: Optional[DINALearnerParams] = None,
    mirt_items: Optional[MIRTItemParams] = None,
    mirt_learners: Optional[MIRTLearnerParams] = None,
    hodina: Optional[HoDINAParams] = None,
    include_irt_guess: bool = False,
    meta: Optional[dict] = None,
) -> CognitiveParameterSets:
    """Assemble EC/SC rows in the fixed per-variant column order.

    LDM_ID:   EC = [irt difficulty, irt discrimination, dina guess, dina slip],
              SC = [irt theta] ++ dina alpha bits.
    LDM_HMI:  EC = [irt difficulty, irt discrimination, hodina slip, hodina
              guess] ++ mirt loadings ++ [mirt guess, mirt difficulty],
              SC = [irt theta, hodina theta] ++ mirt ability ++ hodina alpha.
    """
    n_learners = len(learner_ids)
    n_exercises = len(exercise_ids)

    def _need(value, channel):
        if value is None:
            raise MissingChannel(f"variant {variant} requires the {channel} channel")
        return value

    if variant == VARIANT_LDM_ID:
        irt_items = _need(irt_items, "IRT")
        irt_learners = _need(irt_learners, "IRT")
        dina_items = _need(dina_items, "DINA")
        dina_learners = _need(dina_learners, "DINA")
        ec_cols = [
            ("irt.difficulty", CONTINUOUS),
            ("irt.discrimination", CONTINUOUS),
            ("dina.guess", CONTINUOUS),
            ("dina.slip", CONTINUOUS),
        ]
        ec_parts = [
            irt_items.difficulty,
            irt_items.discrimination,
            dina_items.guess,
            dina_items.slip,
        ]
        if include_irt_guess:
            ec_cols.append(("irt.guess", CONTINUOUS))
            ec_parts.append(irt_items.guess)
        ec = np.column_stack(ec_parts)
        k = dina_learners.alpha.shape[1]
        sc_cols = [("irt.theta", CONTINUOUS)] + [
            (f"dina.alpha.k{i + 1}", BINARY) for i in range(k)
        ]
        sc = np.column_stack([irt_learners.theta, dina_learners.alpha.astype(np.float64)])
    elif variant == VARIANT_LDM_HMI:
        irt_items = _need(irt_items, "IRT")
        irt_learners = _need(irt_learners, "IRT")
        mirt_items = _need(mirt_items, "MIRT")
        mirt_learners = _need(mirt_learners, "MIRT")
        hodina = _need(hodina, "Ho-DINA")
        m = mirt_items.dims
        ec_cols = [
            ("irt.difficulty", CONTINUOUS),
            ("irt.discrimination", CONTINUOUS),
            ("hodina.slip", CONTINUOUS),
            ("hodina.guess", CONTINUOUS),
        ]
        ec_parts = [
            irt_items.difficulty,
            irt_items.discrimination,
            hodina.slip,
            hodina.guess,
        ]
        for i in range(m):
            ec_cols.append((f"mirt.disc.m{i + 1}", CONTINUOUS))
            ec_parts.append(mirt_items.disc_vector[:, i])
        ec_cols += [("mirt.guess", CONTINUOUS), ("mirt.difficulty", CONTINUOUS)]
        ec_parts += [mirt_items.guess, mirt_items.difficulty]
        if include_irt_guess:
            ec_cols.append(("irt.guess", CONTINUOUS))
            ec_parts.append(irt_items.guess)
        ec = np.column_stack(ec_parts)
        k = hodina.alpha.shape[1]
        sc_cols = [("irt.theta", CONTINUOUS), ("hodina.theta", CONTINUOUS)]
        sc_parts = [irt_learners.theta, hodina.theta]
        for i in range(m):
            sc_cols.append((f"mirt.alpha.m{i + 1}", CONTINUOUS))
            sc_parts.append(mirt_learners.alpha_vector[:, i])
        sc_cols += [(f"hodina.alpha.k{i + 1}", BINARY) for i in range(k)]
        sc = np.column_stack(sc_parts + [hodina.alpha.astype(np.float64)])
    else:
        raise ValueError(f"unknown variant {variant!r}")

    if ec.shape[0] != n_exercises:
        raise ShapeMismatch(f"EC has {ec.shape[0]} rows, expected {n_exercises}")
    if sc.shape[0] != n_learners:
        raise ShapeMismatch(f"SC has {sc.shape[0]} rows, expected {n_learners}")
    return CognitiveParameterSets(
        variant=variant,
        EC=ec,
        SC=sc,
        learner_ids=tuple(learner_ids),
        exercise_ids=tuple(exercise_ids),
        learner_columns=tuple(sc_cols),
        exercise_columns=tuple(ec_cols),
        meta=dict(meta or {}),
    )


def channels_to_json(
    *,
    irt_items: Optional[IRTItemParams] = None,
    irt_learners: Optional[IRTLearnerParams] = None,
    dina_items: Optional[DINAItemParams] = None,
    dina_learners: Optional[DINALearnerParams] = None,
    mirt_items: Optional[MIRTItemParams] = None,
    mirt_learners: Optional[MIRTLearnerParams] = None,
    hodina: Optional[HoDINAParams] = None,
    meta: Optional[dict] = None,
) -> str:
    """Flat JSON export of every fitted channel, keyed channel.parameter."""
    payload: dict = {}
    if irt_items is not None:
        payload["irt.difficulty"] = irt_items.difficulty.tolist()
        payload["irt.discrimination"] = irt_items.discrimination.tolist()
        payload["irt.guess"] = irt_items.guess.tolist()
    if irt_learners is not None:
        payload["irt.theta"] = irt_learners.theta.tolist()
    if dina_items is not None:
        payload["dina.slip"] = dina_items.slip.tolist()
        payload["dina.guess"] = dina_items.guess.tolist()
    if dina_learners is not None:
        payload["dina.alpha"] = dina_learners.alpha.tolist()
        payload["dina.mastery_probability"] = dina_learners.mastery_probability.tolist()
    if mirt_items is not None:
        payload["mirt.disc"] = mirt_items.disc_vector.tolist()
        payload["mirt.difficulty"] = mirt_items.difficulty.tolist()
        payload["mirt.guess"] = mirt_items.guess.tolist()
    if mirt_learners is not None:
        payload["mirt.alpha"] = mirt_learners.alpha_vector.tolist()
    if hodina is not None:
        payload["hodina.theta"] = hodina.theta.tolist()
        payload["hodina.alpha"] = hodina.alpha.tolist()
        payload["hodina.alpha_mean"] = hodina.alpha_posterior_mean.tolist()
        payload["hodina.slip"] = hodina.slip.tolist()
        payload["hodina.guess"] = hodina.guess.tolist()
        payload["hodina.lambda0"] = hodina.lambda0.tolist()
        payload["hodina.lambda1"] = hodina.lambda1.tolist()
    payload["meta"] = dict(meta or {})
    return json.dumps(payload)
