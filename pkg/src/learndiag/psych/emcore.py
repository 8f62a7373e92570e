"""Shared machinery for the marginal-likelihood EM fitters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataio import IRT_SCALE_CONSTANT, ResponseMatrix

PROB_FLOOR = 1e-10


@dataclass(frozen=True)
class EMConfig:
    """Stopping rule, quadrature layout, and M-step budget for the EM fitters."""

    max_iterations: int = 200
    tol: float = 1e-4
    grid_points: int = 41
    grid_bound: float = 4.0
    inner_steps: int = 25
    scale_constant: float = IRT_SCALE_CONSTANT
    seed: int = 0


def observed_arrays(r: ResponseMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(observed mask, observed-correct, observed-incorrect) as float grids."""
    observed = r.observed_mask.astype(np.float64)
    correct = np.where(r.observed_mask, r.cells, 0).astype(np.float64)
    return observed, correct, observed - correct


def posterior_over_grid(
    correct: np.ndarray,
    incorrect: np.ndarray,
    log_p: np.ndarray,
    log_1mp: np.ndarray,
    log_weights: np.ndarray,
) -> tuple[np.ndarray, float]:
    """Posterior over grid nodes per learner plus the marginal log-likelihood.

    log_p/log_1mp are (nodes, items); responses enter via the (learners,
    items) observed-correct / observed-incorrect grids.
    """
    ll = correct @ log_p.T + incorrect @ log_1mp.T + log_weights[None, :]
    peak = ll.max(axis=1, keepdims=True)
    post = np.exp(ll - peak)
    norm = post.sum(axis=1, keepdims=True)
    loglik = float((peak[:, 0] + np.log(norm[:, 0])).sum())
    return post / norm, loglik


def degenerate_items(r: ResponseMatrix) -> np.ndarray:
    """Items whose observed responses are all identical."""
    observed = r.observed_mask
    any_correct = ((r.cells == 1) & observed).any(axis=0)
    any_wrong = ((r.cells == 0) & observed).any(axis=0)
    return ~(any_correct & any_wrong)


def ascend_boxed(
    params: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    value_fn,
    grad_fn,
    n_steps: int,
    scale: np.ndarray,
    update_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Projected gradient ascent with per-row backtracking.

    Rows are items; a candidate is only accepted when it does not decrease
    the row's objective, which keeps the enclosing EM monotone.
    """
    p = params.copy()
    f = value_fn(p)
    step = np.full(p.shape[0], 0.5)
    movable = np.ones(p.shape[0], bool) if update_mask is None else update_mask.copy()
    for _ in range(n_steps):
        g = grad_fn(p) / scale[:, None]
        g[~movable] = 0.0
        active = movable.copy()
        for _ in range(16):
            cand = np.clip(p + (step * active)[:, None] * g, lower, upper)
            f_cand = value_fn(cand)
            improved = active & (f_cand >= f)
            p[improved] = cand[improved]
            f[improved] = f_cand[improved]
            step[improved] = np.minimum(step[improved] * 1.2, 10.0)
            active &= ~improved
            if not active.any():
                break
            step[active] = np.maximum(step[active] * 0.5, 1e-10)
    return p
