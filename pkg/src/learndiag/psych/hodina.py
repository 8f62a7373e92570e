"""Metropolis-within-Gibbs sampler for the higher-order conjunctive model.

Per sweep: random-walk proposals for each learner's ability, exact Gibbs
draws for every mastery bit, joint random-walk proposals for each item's
(slip, guess), and for each knowledge point's link coefficients. Point
estimates are post-burn-in posterior means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dataio import QMatrix, ResponseMatrix
from ..errors import ChainDiverged, TooManyKnowledgePoints
from .params import HoDINAParams

LAMBDA_PRIOR_VAR = 4.0
SG_CEIL = 0.5


@dataclass(frozen=True)
class MCMCConfig:
    sweeps: int = 5000
    burn_in: int = 2500
    seed: int = 0
    theta_proposal_sd: float = 0.3
    sg_proposal_sd: float = 0.05
    lambda_proposal_sd: float = 0.3
    divergence_window: int = 100
    min_acceptance: float = 0.01


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def fit_hodina_mcmc(r: ResponseMatrix, q: QMatrix, config: MCMCConfig = MCMCConfig()) -> HoDINAParams:
    if q.n_knowledge > 20:
        raise TooManyKnowledgePoints(f"K={q.n_knowledge} gives too many latent classes")
    if q.n_exercises != r.n_exercises:
        raise ValueError("Q-matrix and response matrix disagree on exercise count")
    if config.sweeps <= config.burn_in:
        raise ValueError("sweeps must exceed burn_in")

    n, e = r.n_learners, r.n_exercises
    k_count = q.n_knowledge
    obs = r.observed_mask
    correct = ((r.cells == 1) & obs).astype(np.float64)
    wrong = ((r.cells == 0) & obs).astype(np.float64)
    q_cells = q.cells.astype(np.int64)
    required_cols = [np.flatnonzero(q_cells[:, k]) for k in range(k_count)]

    rng = np.random.default_rng(config.seed)
    theta = rng.standard_normal(n)
    alpha = rng.integers(0, 2, size=(n, k_count)).astype(np.float64)
    slip = np.full(e, 0.2)
    guess = np.full(e, 0.2)
    lam0 = np.zeros(k_count)
    lam1 = np.ones(k_count)

    # deficits[i, j] = number of required-but-unmastered attributes
    deficits = (1.0 - alpha) @ q_cells.T.astype(np.float64)

    def attr_logprob(th: np.ndarray) -> np.ndarray:
        """Sum over attributes of log p(alpha_ik | theta_i, lambda)."""
        z = lam0[None, :] + lam1[None, :] * th[:, None]
        return (alpha * _log_sigmoid(z) + (1.0 - alpha) * _log_sigmoid(-z)).sum(axis=1)

    sums = {
        "theta": np.zeros(n),
        "alpha": np.zeros((n, k_count)),
        "slip": np.zeros(e),
        "guess": np.zeros(e),
        "lam0": np.zeros(k_count),
        "lam1": np.zeros(k_count),
    }
    kept = 0
    accepted = {"theta": 0, "sg": 0, "lambda": 0}
    proposed = {"theta": 0, "sg": 0, "lambda": 0}
    window_accepted = dict(accepted)
    window_proposed = dict(proposed)

    for sweep in range(config.sweeps):
        # --- learner abilities (random walk; likelihood is the mastery prior)
        proposal = theta + rng.normal(0.0, config.theta_proposal_sd, size=n)
        log_ratio = (
            attr_logprob(proposal)
            - attr_logprob(theta)
            + 0.5 * (theta**2 - proposal**2)
        )
        accept = np.log(rng.random(n)) < log_ratio
        theta = np.where(accept, proposal, theta)
        accepted["theta"] += int(accept.sum())
        proposed["theta"] += n
        window_accepted["theta"] += int(accept.sum())
        window_proposed["theta"] += n

        # --- mastery bits (exact Gibbs, one attribute at a time)
        delta_plus = np.log(1.0 - slip) - np.log(guess)
        delta_minus = np.log(slip) - np.log(1.0 - guess)
        for k in range(k_count):
            cols = required_cols[k]
            if cols.size:
                eta_if_mastered = (deficits[:, cols] - (1.0 - alpha[:, k])[:, None]) == 0
                llr = (
                    eta_if_mastered
                    * (
                        correct[:, cols] * delta_plus[cols][None, :]
                        + wrong[:, cols] * delta_minus[cols][None, :]
                    )
                ).sum(axis=1)
            else:
                llr = np.zeros(n)
            logit = lam0[k] + lam1[k] * theta + llr
            new_bits = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.float64)
            if cols.size:
                deficits[:, cols] += (alpha[:, k] - new_bits)[:, None]
            alpha[:, k] = new_bits

        # --- item slip/guess (joint random walk, rejected outside the support)
        eta = deficits == 0
        n1 = (eta & obs).sum(axis=0).astype(np.float64)
        r1 = (correct * eta).sum(axis=0)
        n0 = obs.sum(axis=0) - n1
        r0 = correct.sum(axis=0) - r1

        def sg_loglik(s, g):
            return (
                r1 * np.log(1.0 - s)
                + (n1 - r1) * np.log(s)
                + r0 * np.log(g)
                + (n0 - r0) * np.log(1.0 - g)
            )

        s_prop = slip + rng.normal(0.0, config.sg_proposal_sd, size=e)
        g_prop = guess + rng.normal(0.0, config.sg_proposal_sd, size=e)
        valid = (
            (s_prop > 0.0)
            & (s_prop < SG_CEIL)
            & (g_prop > 0.0)
            & (g_prop < SG_CEIL)
            & (s_prop + g_prop < 1.0)
        )
        s_safe = np.where(valid, s_prop, slip)
        g_safe = np.where(valid, g_prop, guess)
        log_ratio = sg_loglik(s_safe, g_safe) - sg_loglik(slip, guess)
        accept = valid & (np.log(rng.random(e)) < log_ratio)
        slip = np.where(accept, s_prop, slip)
        guess = np.where(accept, g_prop, guess)
        accepted["sg"] += int(accept.sum())
        proposed["sg"] += e
        window_accepted["sg"] += int(accept.sum())
        window_proposed["sg"] += e

        # --- link coefficients (joint random walk, truncated to lambda1 > 0)
        l0_prop = lam0 + rng.normal(0.0, config.lambda_proposal_sd, size=k_count)
        l1_prop = lam1 + rng.normal(0.0, config.lambda_proposal_sd, size=k_count)
        valid = l1_prop > 0.0
        z_new = l0_prop[None, :] + l1_prop[None, :] * theta[:, None]
        z_old = lam0[None, :] + lam1[None, :] * theta[:, None]
        loglik_new = (alpha * _log_sigmoid(z_new) + (1.0 - alpha) * _log_sigmoid(-z_new)).sum(axis=0)
        loglik_old = (alpha * _log_sigmoid(z_old) + (1.0 - alpha) * _log_sigmoid(-z_old)).sum(axis=0)
        log_prior_new = -(l0_prop**2 + l1_prop**2) / (2.0 * LAMBDA_PRIOR_VAR)
        log_prior_old = -(lam0**2 + lam1**2) / (2.0 * LAMBDA_PRIOR_VAR)
        log_ratio = loglik_new - loglik_old + log_prior_new - log_prior_old
        accept = valid & (np.log(rng.random(k_count)) < log_ratio)
        lam0 = np.where(accept, l0_prop, lam0)
        lam1 = np.where(accept, l1_prop, lam1)
        accepted["lambda"] += int(accept.sum())
        proposed["lambda"] += k_count
        window_accepted["lambda"] += int(accept.sum())
        window_proposed["lambda"] += k_count

        if (sweep + 1) % config.divergence_window == 0:
            for family in ("theta", "sg", "lambda"):
                rate = window_accepted[family] / max(window_proposed[family], 1)
                if rate < config.min_acceptance:
                    raise ChainDiverged(
                        f"{family} acceptance rate {rate:.4f} over sweeps "
                        f"{sweep + 1 - config.divergence_window}..{sweep + 1} "
                        f"is below {config.min_acceptance}"
                    )
            window_accepted = {f: 0 for f in window_accepted}
            window_proposed = {f: 0 for f in window_proposed}

        if sweep >= config.burn_in:
            sums["theta"] += theta
            sums["alpha"] += alpha
            sums["slip"] += slip
            sums["guess"] += guess
            sums["lam0"] += lam0
            sums["lam1"] += lam1
            kept += 1

    alpha_mean = sums["alpha"] / kept
    return HoDINAParams(
        theta=sums["theta"] / kept,
        alpha=(alpha_mean >= 0.5).astype(np.int8),
        alpha_posterior_mean=alpha_mean,
        slip=sums["slip"] / kept,
        guess=sums["guess"] / kept,
        lambda0=sums["lam0"] / kept,
        lambda1=sums["lam1"] / kept,
        meta={
            "sweeps": config.sweeps,
            "burn_in": config.burn_in,
            "seed": config.seed,
            "acceptance": {f: accepted[f] / max(proposed[f], 1) for f in accepted},
        },
    )


def hodina_cell_probability(
    params: HoDINAParams,
    q: QMatrix,
    rows: np.ndarray,
    cols: np.ndarray,
) -> np.ndarray:
    """Mixture score: attributes treated as independent at their posterior means."""
    means = np.clip(params.alpha_posterior_mean, 0.0, 1.0)
    log_means = np.log(np.maximum(means, 1e-300))
    # P(eta=1) = product of mastery means over the required attributes
    log_p_eta1 = log_means @ q.cells.T.astype(np.float64)
    p_eta1 = np.exp(log_p_eta1[rows, cols])
    g = params.guess[cols]
    s = params.slip[cols]
    return g + (1.0 - s - g) * p_eta1
