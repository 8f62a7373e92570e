"""Latent-class EM for the conjunctive slip/guess model.

All 2^K mastery profiles are enumerated; class priors and per-item
slip/guess have closed-form M-steps, so every iteration increases the
marginal log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataio import QMatrix, ResponseMatrix, ideal_response_grid
from ..errors import TooManyKnowledgePoints
from .emcore import EMConfig, degenerate_items, observed_arrays, posterior_over_grid
from .params import DINAItemParams, DINALearnerParams, latent_profiles

SLIP_GUESS_FLOOR = 1e-4
SLIP_GUESS_CEIL = 0.5

INIT_SLIP = 0.2
INIT_GUESS = 0.2


@dataclass(frozen=True)
class DINAFit:
    items: DINAItemParams
    learners: DINALearnerParams
    class_prior: np.ndarray
    loglik_trace: tuple[float, ...]

    def __iter__(self):
        return iter((self.items, self.learners))


def fit_dina_em(r: ResponseMatrix, q: QMatrix, config: EMConfig = EMConfig()) -> DINAFit:
    if q.n_knowledge > 20:
        raise TooManyKnowledgePoints(f"K={q.n_knowledge} gives too many latent classes")
    if q.n_exercises != r.n_exercises:
        raise ValueError("Q-matrix and response matrix disagree on exercise count")
    observed, correct, incorrect = observed_arrays(r)
    degenerate = degenerate_items(r)
    profiles = latent_profiles(q.n_knowledge)
    eta = ideal_response_grid(profiles, q.cells).astype(np.float64)  # (classes, items)

    n_classes = profiles.shape[0]
    prior = np.full(n_classes, 1.0 / n_classes)
    slip = np.full(r.n_exercises, INIT_SLIP)
    guess = np.full(r.n_exercises, INIT_GUESS)

    def e_step(slip, guess, prior):
        log_p = eta * np.log(1.0 - slip)[None, :] + (1.0 - eta) * np.log(guess)[None, :]
        log_1mp = eta * np.log(slip)[None, :] + (1.0 - eta) * np.log(1.0 - guess)[None, :]
        return posterior_over_grid(correct, incorrect, log_p, log_1mp, np.log(prior))

    trace: list[float] = []
    post, loglik = e_step(slip, guess, prior)
    trace.append(loglik)
    for _ in range(config.max_iterations):
        prior = post.mean(axis=0)
        # expected mastery probability per observed cell
        p_eta1 = post @ eta
        n1 = (observed * p_eta1).sum(axis=0)
        r1 = (correct * p_eta1).sum(axis=0)
        n0 = observed.sum(axis=0) - n1
        r0 = correct.sum(axis=0) - r1
        slip = np.clip((n1 - r1) / np.maximum(n1, 1e-12), SLIP_GUESS_FLOOR, SLIP_GUESS_CEIL)
        guess = np.clip(r0 / np.maximum(n0, 1e-12), SLIP_GUESS_FLOOR, SLIP_GUESS_CEIL)
        post, loglik = e_step(slip, guess, prior)
        trace.append(loglik)
        if abs(trace[-1] - trace[-2]) < config.tol:
            break

    alpha = (post @ profiles >= 0.5).astype(np.int8)
    return DINAFit(
        items=DINAItemParams(slip=slip, guess=guess, degenerate=degenerate),
        learners=DINALearnerParams(alpha=alpha, posterior=post),
        class_prior=prior,
        loglik_trace=tuple(trace),
    )


def dina_cell_probability(
    items: DINAItemParams,
    learners: DINALearnerParams,
    q: QMatrix,
    rows: np.ndarray,
    cols: np.ndarray,
    hard: bool = False,
) -> np.ndarray:
    """Success probability for (learner, exercise) cells.

    Default is the posterior-weighted mixture over latent classes; ``hard``
    scores with the MAP profile instead.
    """
    profiles = latent_profiles(q.n_knowledge)
    eta = ideal_response_grid(profiles, q.cells).astype(np.float64)
    if hard:
        profile_code = (learners.alpha.astype(np.int64) @ (1 << np.arange(q.n_knowledge))).astype(
            np.int64
        )
        eta_cells = eta[profile_code[rows], cols]
        return guess_slip_mix(items, cols, eta_cells)
    p_eta1 = learners.posterior @ eta  # (learners, items)
    return guess_slip_mix(items, cols, p_eta1[rows, cols])


def guess_slip_mix(items: DINAItemParams, cols: np.ndarray, p_eta1) -> np.ndarray:
    g = items.guess[cols]
    s = items.slip[cols]
    return g + (1.0 - s - g) * np.asarray(p_eta1, dtype=np.float64)
