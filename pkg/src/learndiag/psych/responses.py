"""Response functions of the four channel models.

All functions are elementwise over numpy arrays and accept plain floats.
"""

from __future__ import annotations

import numpy as np

from ..dataio import IRT_SCALE_CONSTANT
from ..errors import DimensionMismatch, LengthMismatch


def irt_response(theta, difficulty, discrimination, guess, scale_constant: float = IRT_SCALE_CONSTANT):
    """Three-parameter logistic success probability.

    guess + (1 - guess) / (1 + exp(-scale * discrimination * (theta - difficulty)));
    strictly increasing in theta with range (guess, 1).
    """
    theta = np.asarray(theta, dtype=np.float64)
    logit = scale_constant * np.asarray(discrimination) * (theta - np.asarray(difficulty))
    g = np.asarray(guess, dtype=np.float64)
    return g + (1.0 - g) / (1.0 + np.exp(-logit))


def dina_ideal_response(alpha, q_row) -> np.ndarray:
    """1 iff every required skill is mastered (conjunctive gate)."""
    alpha = np.asarray(alpha)
    q_row = np.asarray(q_row)
    if alpha.shape != q_row.shape:
        raise LengthMismatch(f"alpha {alpha.shape} vs q_row {q_row.shape}")
    return np.asarray((alpha >= q_row).all(axis=-1), dtype=np.int8)


def dina_response(eta, slip, guess):
    """guess when the ideal response is 0, 1 - slip when it is 1."""
    eta = np.asarray(eta, dtype=np.float64)
    return np.asarray(guess) ** (1.0 - eta) * (1.0 - np.asarray(slip)) ** eta


def mirt_response(alpha_vector, disc_vector, difficulty, guess,
                  scale_constant: float = IRT_SCALE_CONSTANT):
    """Compensatory multidimensional success probability.

    guess + (1 - guess) / (1 + exp(-scale * (disc . alpha + difficulty)));
    nondecreasing in every ability component because loadings are >= 0.
    """
    alpha_vector = np.asarray(alpha_vector, dtype=np.float64)
    disc_vector = np.asarray(disc_vector, dtype=np.float64)
    if alpha_vector.shape[-1] != disc_vector.shape[-1]:
        raise DimensionMismatch(
            f"ability dim {alpha_vector.shape[-1]} vs loading dim {disc_vector.shape[-1]}"
        )
    linear = (alpha_vector * disc_vector).sum(axis=-1) + np.asarray(difficulty)
    g = np.asarray(guess, dtype=np.float64)
    return g + (1.0 - g) / (1.0 + np.exp(-scale_constant * linear))


def hodina_attr_prob(theta, lambda0, lambda1):
    """Mastery probability of one knowledge point under the higher-order link."""
    logit = np.asarray(lambda0) + np.asarray(lambda1) * np.asarray(theta, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-logit))
