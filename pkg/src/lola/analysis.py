"""Diagnostic studies: spectral floors for kernel approximation, memory
collision matrices, and the alternative window scoring rules.

The spectral study builds exponential-kernel Gram matrices over sampled
inputs and reports how much squared Frobenius error ANY rank-D factorization
must leave behind (the tail of squared singular values). Collision matrices
replay a stream under a chosen policy and record, at every step, the
self-recall error of every pair in the hidden state; window- and
sparse-resident pairs are recorded as exact zeros since they are retrievable
in full rank, and pairs not yet seen stay blank.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .attention import (
    DEFAULT_MAX_LOGIT,
    AttentionConfig,
    FeatureMapParams,
    feature_map_batch,
)
from .cache import LolaCache, ScoringStrategy, StaticScoring, _self_recall_scores
from .numerics import SeededRng, as_matrix, gaussian_sample, singular_values

__all__ = [
    "POLICIES",
    "SCORING_STRATEGIES",
    "AttentionErrorAbsScoring",
    "AttentionErrorSquaredScoring",
    "CollisionMatrix",
    "GramStudyResult",
    "OverestimateRatioScoring",
    "attention_error_abs",
    "attention_error_squared",
    "collision_matrix",
    "engine_for_policy",
    "gram_matrix",
    "mean_absorbed_error",
    "overestimate_ratio",
    "rank_study",
    "relative_collision_matrix",
    "truncated_errors",
    "write_collision_csv",
    "write_gram_csv",
]


# -- exponential-kernel spectra ------------------------------------------


def gram_matrix(xs, max_logit: float = DEFAULT_MAX_LOGIT) -> np.ndarray:
    """Pairwise ``exp(x_i . x_j)`` for the rows of ``xs``.

    Symmetric positive semidefinite, with ``exp(|x_i|^2)`` on the diagonal.
    Inputs whose pairwise products exceed ``max_logit`` are rejected before
    exponentiation.
    """
    xs = as_matrix(xs)
    if xs.shape[0] < 1:
        raise ValueError("need at least one input vector")
    z = xs @ xs.T
    peak = float(np.max(np.abs(z)))
    if peak > max_logit:
        raise ValueError(
            f"kernel exponent {peak:.4g} exceeds the bound {max_logit:g}; rescale the inputs"
        )
    return np.exp(z)


def truncated_errors(sv: np.ndarray) -> np.ndarray:
    """Tail sums of squared singular values: entry r is the squared Frobenius
    error left by the best rank-r approximation (entry 0 is the full energy)."""
    sq = np.asarray(sv, dtype=np.float64) ** 2
    return np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])


@dataclass(frozen=True)
class GramStudyResult:
    n: int
    d: int
    singular_values: np.ndarray
    truncated_errors: np.ndarray  # length n + 1, indexed by retained rank


def rank_study(n_list, d_list, seed: int, scale_rule=None) -> list[GramStudyResult]:
    """Gram spectra over a grid of sample counts and input dimensions.

    Inputs for a given dimension are drawn once at the largest n and reused
    as prefixes, so the error curve for a larger n dominates a smaller one at
    every rank by eigenvalue interlacing, not just on average. The default
    sampling scale is ``d ** -0.25`` per entry, which keeps pairwise dot
    products of comparable size across dimensions.
    """
    n_list = [int(n) for n in n_list]
    d_list = [int(d) for d in d_list]
    if not n_list or min(n_list) < 1 or not d_list or min(d_list) < 1:
        raise ValueError("n_list and d_list must contain positive integers")
    rule = scale_rule if scale_rule is not None else (lambda d: d ** -0.25)
    rng = SeededRng(seed)
    results = []
    for d in d_list:
        xs = gaussian_sample(rng.child(d), max(n_list), d, rule(d))
        for n in n_list:
            g = gram_matrix(xs[:n])
            sv = singular_values(g)
            results.append(GramStudyResult(n, d, sv, truncated_errors(sv)))
    return results


# -- collision matrices ----------------------------------------------------


POLICIES = ("linear-only", "window-only", "lola")


def engine_for_policy(
    policy: str,
    attn: AttentionConfig,
    params: FeatureMapParams,
    window_capacity: int,
    sparse_capacity: int,
    max_logit: float = DEFAULT_MAX_LOGIT,
) -> LolaCache:
    """Build the decode engine a policy name denotes.

    ``linear-only`` drops both full-rank tiers, ``window-only`` drops the
    sparse cache, ``lola`` keeps all three, and ``lola-altscore:<name>``
    swaps the self-recall rule for one of the alternative window scores.
    """
    if policy == "linear-only":
        return LolaCache(attn, params, 0, 0, max_logit=max_logit)
    if policy == "window-only":
        return LolaCache(attn, params, window_capacity, 0, max_logit=max_logit)
    if policy == "lola":
        return LolaCache(attn, params, window_capacity, sparse_capacity, max_logit=max_logit)
    if policy.startswith("lola-altscore:"):
        name = policy.split(":", 1)[1]
        if name not in SCORING_STRATEGIES:
            raise ValueError(
                f"unknown scoring strategy {name!r}; have {sorted(SCORING_STRATEGIES)}"
            )
        return LolaCache(
            attn,
            params,
            window_capacity,
            sparse_capacity,
            scoring=SCORING_STRATEGIES[name](),
            max_logit=max_logit,
        )
    raise ValueError(f"unknown policy {policy!r}")


@dataclass(frozen=True)
class CollisionMatrix:
    """Lower-triangular self-recall error history for one policy run.

    ``errors[i, j]`` is pair j+1's score at time i+1: NaN before the pair
    arrives, exactly 0.0 while it is window- or sparse-resident, and the
    hidden-state prediction error once absorbed. ``absorbed_at[j]`` is the
    step pair j+1 entered the hidden state (0 if it never did).
    """

    policy: str
    errors: np.ndarray
    absorbed_at: np.ndarray


def collision_matrix(
    keys,
    values,
    policy: str,
    window_capacity: int,
    sparse_capacity: int,
    attn: AttentionConfig,
    params: FeatureMapParams,
    max_logit: float = DEFAULT_MAX_LOGIT,
) -> CollisionMatrix:
    """Replay a stream under ``policy`` and score every stored pair at every step."""
    keys = as_matrix(keys, cols=attn.head_dim)
    values = as_matrix(values, rows=keys.shape[0], cols=attn.head_dim)
    t_total = keys.shape[0]
    if t_total < 1:
        raise ValueError("need at least one pair")
    engine = engine_for_policy(policy, attn, params, window_capacity, sparse_capacity, max_logit)
    phi = feature_map_batch(params, keys, max_logit)
    errors = np.full((t_total, t_total), np.nan)
    absorbed_at = np.zeros(t_total, dtype=np.int64)
    for t in range(1, t_total + 1):
        engine.update(keys[t - 1], values[t - 1])
        event = engine.last_event
        if event is not None and event.absorbed_indices.size:
            absorbed_at[event.absorbed_indices - 1] = t
        scores = _self_recall_scores(phi[:t], values[:t], engine.linear)
        resident = np.concatenate([engine.window_indices, engine.sparse_indices])
        scores[resident.astype(np.int64) - 1] = 0.0
        errors[t - 1, :t] = scores
    return CollisionMatrix(policy, errors, absorbed_at)


def relative_collision_matrix(
    keys,
    values,
    policy: str,
    window_capacity: int,
    sparse_capacity: int,
    attn: AttentionConfig,
    params: FeatureMapParams,
    max_logit: float = DEFAULT_MAX_LOGIT,
) -> CollisionMatrix:
    """Collision matrix with each absorbed pair's error measured relative to
    its error at absorption time; entries can go negative when a pair becomes
    easier to recall after later updates."""
    cm = collision_matrix(
        keys, values, policy, window_capacity, sparse_capacity, attn, params, max_logit
    )
    rel = cm.errors.copy()
    for j in range(rel.shape[1]):
        ta = int(cm.absorbed_at[j])
        if ta > 0:
            rel[ta - 1 :, j] -= cm.errors[ta - 1, j]
    return CollisionMatrix(cm.policy, rel, cm.absorbed_at)


def mean_absorbed_error(cm: CollisionMatrix) -> float:
    """Mean entry over (time, pair) cells where the pair sat in the hidden state."""
    t_total = cm.errors.shape[0]
    rows = np.arange(1, t_total + 1)[:, None]
    mask = (cm.absorbed_at[None, :] > 0) & (rows >= cm.absorbed_at[None, :])
    if not mask.any():
        return 0.0
    return float(cm.errors[mask].mean())


# -- alternative window scores ----------------------------------------------


def attention_error_squared(exp_vals, lin_vals) -> float:
    """Summed squared gap between exponential logit weights and their linear stand-ins."""
    e = np.asarray(exp_vals, dtype=np.float64)
    p = np.asarray(lin_vals, dtype=np.float64)
    return float(((e - p) ** 2).sum())


def attention_error_abs(exp_vals, lin_vals) -> float:
    e = np.asarray(exp_vals, dtype=np.float64)
    p = np.asarray(lin_vals, dtype=np.float64)
    return float(np.abs(e - p).sum())


def overestimate_ratio(exp_vals, lin_vals) -> float:
    """Summed ratio of linear kernel mass to exponential mass; large when the
    linear path over-represents a key."""
    e = np.asarray(exp_vals, dtype=np.float64)
    p = np.asarray(lin_vals, dtype=np.float64)
    return float((p / e).sum())


class AttentionErrorSquaredScoring(StaticScoring):
    """Cache the keys whose exponential weights the feature map misses worst."""

    name = "attnerr-sq"

    def term(self, exp_vals, lin_vals):
        return (exp_vals - lin_vals) ** 2


class AttentionErrorAbsScoring(StaticScoring):
    name = "attnerr-abs"

    def term(self, exp_vals, lin_vals):
        return np.abs(exp_vals - lin_vals)


class OverestimateRatioScoring(StaticScoring):
    """Cache the keys the linear kernel over-weights relative to the exact one."""

    name = "overestimate"

    def term(self, exp_vals, lin_vals):
        return lin_vals / exp_vals


SCORING_STRATEGIES: dict[str, type[ScoringStrategy]] = {
    cls.name: cls
    for cls in (
        AttentionErrorSquaredScoring,
        AttentionErrorAbsScoring,
        OverestimateRatioScoring,
    )
}


# -- emission ----------------------------------------------------------------


def write_collision_csv(cm: CollisionMatrix, path) -> None:
    """Row per time step, column per pair; blank cells mean the pair had not
    arrived yet. Float formatting is repr-exact, so re-runs are byte-identical."""
    t_total = cm.errors.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"pair_{j}" for j in range(1, t_total + 1)])
        for i in range(t_total):
            row = [str(i + 1)]
            for j in range(t_total):
                x = cm.errors[i, j]
                row.append("" if np.isnan(x) else repr(float(x)))
            writer.writerow(row)


def write_gram_csv(results: list[GramStudyResult], path) -> None:
    """Long-format curves: one row per (n, d, rank); the singular value column
    is blank at rank 0."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "d", "rank", "singular_value", "truncated_error"])
        for res in results:
            for r in range(res.truncated_errors.shape[0]):
                sv = repr(float(res.singular_values[r - 1])) if r >= 1 else ""
                writer.writerow([res.n, res.d, r, sv, repr(float(res.truncated_errors[r]))])
