"""Marginal-likelihood EM for the three-parameter logistic model.

Ability is integrated over a fixed grid with standard-normal weights; the
item M-step is projected gradient ascent inside the admissible box, so the
marginal log-likelihood never decreases (generalized EM).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataio import ResponseMatrix
from .emcore import (
    PROB_FLOOR,
    EMConfig,
    ascend_boxed,
    degenerate_items,
    observed_arrays,
    posterior_over_grid,
)
from .params import IRTItemParams, IRTLearnerParams

BOX_LOWER = np.array([0.01, -4.0, 0.0])   # discrimination, difficulty, guess
BOX_UPPER = np.array([4.0, 4.0, 0.5])

INIT_DISCRIMINATION = 1.0
INIT_GUESS = 0.1


@dataclass(frozen=True)
class IRTFit:
    items: IRTItemParams
    learners: IRTLearnerParams
    loglik_trace: tuple[float, ...]

    def __iter__(self):
        return iter((self.items, self.learners))


def _initial_item_matrix(r: ResponseMatrix, config: EMConfig) -> np.ndarray:
    """Columns [discrimination, difficulty, guess]; difficulty from pass rate."""
    observed, correct, _ = observed_arrays(r)
    rate = np.clip(correct.sum(axis=0) / observed.sum(axis=0), 1e-3, 1.0 - 1e-3)
    difficulty = np.clip(-np.log(rate / (1.0 - rate)) / config.scale_constant, -4.0, 4.0)
    params = np.column_stack(
        [
            np.full(r.n_exercises, INIT_DISCRIMINATION),
            difficulty,
            np.full(r.n_exercises, INIT_GUESS),
        ]
    )
    # items with one-sided responses sit at a difficulty boundary and stay there
    degenerate = degenerate_items(r)
    all_correct = degenerate & (rate > 0.5)
    params[degenerate, 0] = INIT_DISCRIMINATION
    params[degenerate, 2] = 0.0
    params[all_correct, 1] = -4.0
    params[degenerate & ~all_correct, 1] = 4.0
    return params


def _grid(config: EMConfig) -> tuple[np.ndarray, np.ndarray]:
    nodes = np.linspace(-config.grid_bound, config.grid_bound, config.grid_points)
    weights = np.exp(-0.5 * nodes**2)
    return nodes, weights / weights.sum()


def _item_probs(params: np.ndarray, nodes: np.ndarray, scale: float) -> np.ndarray:
    """(items, nodes) success probabilities."""
    a, b, c = params[:, 0:1], params[:, 1:2], params[:, 2:3]
    s = 1.0 / (1.0 + np.exp(-scale * a * (nodes[None, :] - b)))
    return np.clip(c + (1.0 - c) * s, PROB_FLOOR, 1.0 - PROB_FLOOR)


def fit_irt_em(r: ResponseMatrix, config: EMConfig = EMConfig()) -> IRTFit:
    """Fit item parameters and EAP abilities; deterministic given the data.

    With ``max_iterations=0`` the initialization is returned unchanged
    (abilities all zero).
    """
    observed, correct, incorrect = observed_arrays(r)
    degenerate = degenerate_items(r)
    params = _initial_item_matrix(r, config)
    nodes, weights = _grid(config)
    log_w = np.log(weights)
    scale = config.scale_constant

    if config.max_iterations == 0:
        return IRTFit(
            items=IRTItemParams(
                difficulty=params[:, 1].copy(),
                discrimination=params[:, 0].copy(),
                guess=params[:, 2].copy(),
                scale_constant=scale,
                degenerate=degenerate,
            ),
            learners=IRTLearnerParams(theta=np.zeros(r.n_learners)),
            loglik_trace=(),
        )

    def e_step(p: np.ndarray):
        probs = _item_probs(p, nodes, scale)
        return posterior_over_grid(correct, incorrect, np.log(probs).T, np.log1p(-probs).T, log_w)

    trace: list[float] = []
    post, loglik = e_step(params)
    trace.append(loglik)
    for _ in range(config.max_iterations):
        # expected correct/total counts per (item, node)
        n_jq = observed.T @ post
        r_jq = correct.T @ post

        def value_fn(p):
            probs = _item_probs(p, nodes, scale)
            return (r_jq * np.log(probs) + (n_jq - r_jq) * np.log1p(-probs)).sum(axis=1)

        def grad_fn(p):
            a, b, c = p[:, 0:1], p[:, 1:2], p[:, 2:3]
            s = 1.0 / (1.0 + np.exp(-scale * a * (nodes[None, :] - b)))
            probs = np.clip(c + (1.0 - c) * s, PROB_FLOOR, 1.0 - PROB_FLOOR)
            common = r_jq / probs - (n_jq - r_jq) / (1.0 - probs)
            ds = (1.0 - c) * s * (1.0 - s) * scale
            da = (common * ds * (nodes[None, :] - b)).sum(axis=1)
            db = (common * ds * -a).sum(axis=1)
            dc = (common * (1.0 - s)).sum(axis=1)
            return np.column_stack([da, db, dc])

        params = ascend_boxed(
            params,
            BOX_LOWER,
            BOX_UPPER,
            value_fn,
            grad_fn,
            config.inner_steps,
            scale=np.maximum(n_jq.sum(axis=1), 1.0),
            update_mask=~degenerate,
        )
        post, loglik = e_step(params)
        trace.append(loglik)
        if abs(trace[-1] - trace[-2]) < config.tol:
            break

    theta = post @ nodes
    return IRTFit(
        items=IRTItemParams(
            difficulty=params[:, 1].copy(),
            discrimination=params[:, 0].copy(),
            guess=params[:, 2].copy(),
            scale_constant=scale,
            degenerate=degenerate,
        ),
        learners=IRTLearnerParams(theta=theta),
        loglik_trace=tuple(trace),
    )
