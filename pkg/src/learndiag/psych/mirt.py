"""EM for the compensatory multidimensional model over a product quadrature grid.

Gauss-Hermite nodes per dimension approximate the multivariate standard
normal; loadings stay nonnegative by projection in the M-step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..dataio import ResponseMatrix
from ..errors import DimensionTooLarge
from .emcore import (
    PROB_FLOOR,
    EMConfig,
    ascend_boxed,
    degenerate_items,
    observed_arrays,
    posterior_over_grid,
)
from .params import MIRTItemParams, MIRTLearnerParams

QUAD_POINTS_PER_DIM = 7
MAX_DIMS = 4

LOADING_CEIL = 4.0
INTERCEPT_BOUND = 6.0


@dataclass(frozen=True)
class MIRTFit:
    items: MIRTItemParams
    learners: MIRTLearnerParams
    loglik_trace: tuple[float, ...]

    def __iter__(self):
        return iter((self.items, self.learners))


def _product_grid(dims: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.hermite_e.hermegauss(QUAD_POINTS_PER_DIM)
    weights = weights / weights.sum()
    grid = np.array(list(itertools.product(nodes, repeat=dims)))
    w = np.ones(grid.shape[0])
    for axis in range(dims):
        idx = np.searchsorted(nodes, grid[:, axis])
        w *= weights[idx]
    return grid, w / w.sum()


def _item_probs(params: np.ndarray, grid: np.ndarray, dims: int, scale: float) -> np.ndarray:
    """(items, nodes): params columns are [loadings..., intercept, guess]."""
    a = params[:, :dims]
    d = params[:, dims : dims + 1]
    c = params[:, dims + 1 :]
    s = 1.0 / (1.0 + np.exp(-scale * (a @ grid.T + d)))
    return np.clip(c + (1.0 - c) * s, PROB_FLOOR, 1.0 - PROB_FLOOR)


def fit_mirt_em(r: ResponseMatrix, dims: int, config: EMConfig = EMConfig()) -> MIRTFit:
    if not 1 <= dims <= MAX_DIMS:
        raise DimensionTooLarge(f"dims must lie in [1, {MAX_DIMS}], got {dims}")
    observed, correct, incorrect = observed_arrays(r)
    degenerate = degenerate_items(r)
    grid, weights = _product_grid(dims)
    log_w = np.log(weights)
    scale = config.scale_constant

    rate = np.clip(correct.sum(axis=0) / observed.sum(axis=0), 1e-3, 1.0 - 1e-3)
    rng = np.random.default_rng(config.seed)
    # jittered loadings break the permutation symmetry of the dimensions
    params = np.column_stack(
        [
            rng.uniform(0.3, 1.0, size=(r.n_exercises, dims)),
            np.log(rate / (1.0 - rate)) / scale,
            np.full(r.n_exercises, 0.1),
        ]
    )
    lower = np.array([0.0] * dims + [-INTERCEPT_BOUND, 0.0])
    upper = np.array([LOADING_CEIL] * dims + [INTERCEPT_BOUND, 0.5])
    params = np.clip(params, lower, upper)

    def e_step(p: np.ndarray):
        probs = _item_probs(p, grid, dims, scale)
        return posterior_over_grid(correct, incorrect, np.log(probs).T, np.log1p(-probs).T, log_w)

    trace: list[float] = []
    post, loglik = e_step(params)
    trace.append(loglik)
    for _ in range(config.max_iterations):
        n_jq = observed.T @ post
        r_jq = correct.T @ post

        def value_fn(p):
            probs = _item_probs(p, grid, dims, scale)
            return (r_jq * np.log(probs) + (n_jq - r_jq) * np.log1p(-probs)).sum(axis=1)

        def grad_fn(p):
            a = p[:, :dims]
            d = p[:, dims : dims + 1]
            c = p[:, dims + 1 :]
            s = 1.0 / (1.0 + np.exp(-scale * (a @ grid.T + d)))
            probs = np.clip(c + (1.0 - c) * s, PROB_FLOOR, 1.0 - PROB_FLOOR)
            common = r_jq / probs - (n_jq - r_jq) / (1.0 - probs)
            ds = (1.0 - c) * s * (1.0 - s) * scale
            base = common * ds
            da = base @ grid
            dd = base.sum(axis=1, keepdims=True)
            dc = (common * (1.0 - s)).sum(axis=1, keepdims=True)
            return np.hstack([da, dd, dc])

        params = ascend_boxed(
            params,
            lower,
            upper,
            value_fn,
            grad_fn,
            config.inner_steps,
            scale=np.maximum(n_jq.sum(axis=1), 1.0),
        )
        post, loglik = e_step(params)
        trace.append(loglik)
        if abs(trace[-1] - trace[-2]) < config.tol:
            break

    ability = post @ grid
    return MIRTFit(
        items=MIRTItemParams(
            disc_vector=params[:, :dims].copy(),
            difficulty=params[:, dims].copy(),
            guess=params[:, dims + 1].copy(),
            scale_constant=scale,
            degenerate=degenerate,
        ),
        learners=MIRTLearnerParams(alpha_vector=ability),
        loglik_trace=tuple(trace),
    )
