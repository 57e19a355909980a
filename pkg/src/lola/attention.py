"""Exact softmax attention, the paired exponential feature map, and the
linear-attention hidden state.

The oracle evaluates causal attention exactly, with per-query max subtraction
for stability, so each output is a convex combination of the values seen so
far. The feature map sends ``x`` to ``[exp(w_i.x)] ++ [exp(-w_i.x)]``: every
output entry is strictly positive and paired entries multiply to exactly one.
A bound on the pre-exponential magnitude rejects inputs that would wash out
downstream normalizers. ``distill_feature_map`` fits the map so the linear
recall path tracks the oracle on a corpus, by gradient descent on the squared
error with backtracking (the loss never increases between accepted steps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import SeededRng, as_matrix, as_vector

__all__ = [
    "DEFAULT_MAX_LOGIT",
    "AttentionConfig",
    "DistillationDiverged",
    "FeatureMapParams",
    "LinearState",
    "OverflowGuardError",
    "distill_feature_map",
    "distillation_gradient",
    "distillation_loss",
    "feature_map_apply",
    "feature_map_batch",
    "init_feature_map",
    "linear_attention_forward",
    "load_feature_map",
    "save_feature_map",
    "softmax_attention_oracle",
]

DEFAULT_MAX_LOGIT = 30.0


class OverflowGuardError(ValueError):
    """A pre-exponential magnitude exceeded the configured bound."""


class DistillationDiverged(RuntimeError):
    """The distillation loss became non-finite."""


@dataclass(frozen=True)
class AttentionConfig:
    """Head shape and logit scaling.

    ``feature_dim`` defaults to twice ``head_dim``; ``scale`` defaults to
    ``1/sqrt(head_dim)`` and multiplies every exponential dot product in the
    engine, softmax terms and scores alike.
    """

    head_dim: int
    feature_dim: int | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.head_dim < 1:
            raise ValueError(f"head_dim must be >= 1, got {self.head_dim}")
        if self.feature_dim is None:
            object.__setattr__(self, "feature_dim", 2 * self.head_dim)
        if self.feature_dim < 2 or self.feature_dim % 2 != 0:
            raise ValueError(f"feature_dim must be a positive even integer, got {self.feature_dim}")
        if self.scale is None:
            object.__setattr__(self, "scale", self.head_dim ** -0.5)
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class FeatureMapParams:
    """Weights of the paired exponential map, one row per exponential pair."""

    weights: np.ndarray  # (feature_dim // 2, head_dim)

    def __post_init__(self):
        object.__setattr__(self, "weights", as_matrix(self.weights))

    @property
    def head_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def feature_dim(self) -> int:
        return 2 * self.weights.shape[0]


def init_feature_map(rng: SeededRng, config: AttentionConfig) -> FeatureMapParams:
    """Gaussian init with per-entry variance 1/head_dim, so w.x is order one."""
    gen = rng.generator()
    w = gen.normal(0.0, config.head_dim ** -0.5, size=(config.feature_dim // 2, config.head_dim))
    return FeatureMapParams(w)


def _guard(z: np.ndarray, max_logit: float) -> None:
    peak = float(np.max(np.abs(z))) if z.size else 0.0
    if peak > max_logit:
        raise OverflowGuardError(
            f"pre-exponential magnitude {peak:.4g} exceeds the bound {max_logit:g}; "
            "rescale the inputs or raise the bound"
        )


def feature_map_apply(params: FeatureMapParams, x, max_logit: float = DEFAULT_MAX_LOGIT) -> np.ndarray:
    """Map one vector to its strictly positive feature vector."""
    x = as_vector(x, dim=params.head_dim)
    z = params.weights @ x
    _guard(z, max_logit)
    return np.concatenate([np.exp(z), np.exp(-z)])


def feature_map_batch(params: FeatureMapParams, xs, max_logit: float = DEFAULT_MAX_LOGIT) -> np.ndarray:
    """Map rows of ``xs`` to feature vectors, one per row."""
    xs = as_matrix(xs, cols=params.head_dim)
    z = xs @ params.weights.T
    _guard(z, max_logit)
    return np.concatenate([np.exp(z), np.exp(-z)], axis=1)


def softmax_attention_oracle(qs, ks, vs, scale: float) -> np.ndarray:
    """Exact causal attention outputs for a whole sequence.

    Output ``t`` is the softmax-weighted mean of values ``1..t`` with logits
    ``scale * q_t.k_i``, stabilized by max subtraction.
    """
    qs = as_matrix(qs)
    ks = as_matrix(ks, rows=qs.shape[0], cols=qs.shape[1])
    vs = as_matrix(vs, rows=qs.shape[0])
    n = qs.shape[0]
    if n < 1:
        raise ValueError("need at least one token")
    out = np.empty_like(vs)
    for t in range(n):
        logits = (ks[: t + 1] @ qs[t]) * scale
        w = np.exp(logits - logits.max())
        out[t] = (w @ vs[: t + 1]) / w.sum()
    return out


@dataclass
class LinearState:
    """Running associative memory: ``hidden += phi(k) v^T``, ``normalizer += phi(k)``."""

    hidden: np.ndarray      # (feature_dim, head_dim)
    normalizer: np.ndarray  # (feature_dim,)
    count: int = 0

    @classmethod
    def zeros(cls, feature_dim: int, head_dim: int) -> "LinearState":
        return cls(np.zeros((feature_dim, head_dim)), np.zeros(feature_dim), 0)

    def update(self, phi_k: np.ndarray, v: np.ndarray) -> None:
        if phi_k.shape != (self.hidden.shape[0],) or v.shape != (self.hidden.shape[1],):
            raise ValueError(
                f"dimension mismatch: state is {self.hidden.shape}, "
                f"got phi_k {phi_k.shape} and v {v.shape}"
            )
        self.hidden += np.outer(phi_k, v)
        self.normalizer += phi_k
        self.count += 1

    def absorb(self, phi_rows: np.ndarray, v_rows: np.ndarray) -> None:
        """Bulk update; rows should already be in the intended order."""
        if phi_rows.shape[0] != v_rows.shape[0]:
            raise ValueError("row count mismatch")
        if phi_rows.shape[0] == 0:
            return
        self.hidden += phi_rows.T @ v_rows
        self.normalizer += phi_rows.sum(axis=0)
        self.count += phi_rows.shape[0]

    def copy(self) -> "LinearState":
        return LinearState(self.hidden.copy(), self.normalizer.copy(), self.count)


def linear_attention_forward(state: LinearState, phi_q: np.ndarray) -> np.ndarray:
    """Recall ``(phi_q . hidden) / (phi_q . normalizer)`` from a populated state."""
    if state.count < 1:
        raise ValueError("cannot recall from an empty state")
    den = float(phi_q @ state.normalizer)
    if den <= 0.0:
        raise ValueError(
            f"non-positive normalizer {den:g}: recall requires a strictly positive feature map"
        )
    return (phi_q @ state.hidden) / den


def save_feature_map(params: FeatureMapParams, path) -> None:
    """Write the map as JSON: dims header plus row-major weights."""
    payload = {
        "format": "paired-exp-feature-map-v1",
        "head_dim": params.head_dim,
        "feature_dim": params.feature_dim,
        "weights": params.weights.reshape(-1).tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_feature_map(path) -> FeatureMapParams:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "paired-exp-feature-map-v1":
        raise ValueError(f"unrecognized feature map file format in {path}")
    d, dim = payload["head_dim"], payload["feature_dim"]
    w = np.asarray(payload["weights"], dtype=np.float64).reshape(dim // 2, d)
    return FeatureMapParams(w)


def _sequence_loss_grad(params, config, qs, ks, vs, max_logit, need_grad):
    """Squared tracking error of the linear path against the oracle, and its
    gradient in the map weights if requested."""
    qs = as_matrix(qs)
    ks = as_matrix(ks, rows=qs.shape[0], cols=qs.shape[1])
    vs = as_matrix(vs, rows=qs.shape[0])
    n = qs.shape[0]
    phi_q = feature_map_batch(params, qs, max_logit)
    phi_k = feature_map_batch(params, ks, max_logit)
    mask = np.tril(np.ones((n, n)))
    pm = (phi_q @ phi_k.T) * mask
    denom = pm.sum(axis=1)  # strictly positive: the map is positive
    yhat = (pm @ vs) / denom[:, None]
    teacher = softmax_attention_oracle(qs, ks, vs, config.scale)
    r = yhat - teacher
    loss = float((r * r).sum())
    if not need_grad:
        return loss, None
    # d loss / d kernel value (t, j): 2 r_t.(v_j - yhat_t) / denom_t, causal only
    g = (2.0 / denom)[:, None] * (r @ vs.T - (r * yhat).sum(axis=1, keepdims=True)) * mask
    m = params.weights.shape[0]
    # d kernel(t, j) / d w_i = (phiq[t,i] phik[j,i] - phiq[t,i+m] phik[j,i+m]) (q_t + k_j)
    diff = (
        phi_q.T[:m, :, None] * phi_k.T[:m, None, :]
        - phi_q.T[m:, :, None] * phi_k.T[m:, None, :]
    )  # (m, n, n)
    c = g[None, :, :] * diff
    grad = np.einsum("itj,td->id", c, qs) + np.einsum("itj,jd->id", c, ks)
    return loss, grad


def distillation_loss(params, config, sequences, max_logit: float = DEFAULT_MAX_LOGIT) -> float:
    total = 0.0
    for qs, ks, vs in sequences:
        loss, _ = _sequence_loss_grad(params, config, qs, ks, vs, max_logit, need_grad=False)
        total += loss
    return total


def distillation_gradient(params, config, sequences, max_logit: float = DEFAULT_MAX_LOGIT):
    """Total loss and its gradient in the map weights, summed over sequences."""
    total = 0.0
    grad = np.zeros_like(params.weights)
    for qs, ks, vs in sequences:
        loss, g = _sequence_loss_grad(params, config, qs, ks, vs, max_logit, need_grad=True)
        total += loss
        grad += g
    return total, grad


def distill_feature_map(
    rng: SeededRng,
    config: AttentionConfig,
    sequences,
    steps: int,
    learning_rate: float,
    *,
    max_logit: float = DEFAULT_MAX_LOGIT,
    init: FeatureMapParams | None = None,
    loss_history: list | None = None,
) -> FeatureMapParams:
    """Fit the feature map to the oracle's outputs by gradient descent.

    Each step backtracks (halves the step size) until the loss does not
    increase, so the loss trajectory is nonincreasing; the reduced step size
    carries over to later steps. ``steps == 0`` returns the initialization
    unchanged. A non-finite loss aborts with ``DistillationDiverged``.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if not sequences:
        raise ValueError("need at least one training sequence")
    params = init if init is not None else init_feature_map(rng, config)
    w = params.weights.copy()
    lr = learning_rate
    for _ in range(steps):
        loss, grad = distillation_gradient(FeatureMapParams(w), config, sequences, max_logit)
        if not np.isfinite(loss):
            raise DistillationDiverged(f"training loss became non-finite ({loss})")
        if loss_history is not None:
            loss_history.append(loss)
        while True:
            w_try = w - lr * grad
            try:
                new_loss = distillation_loss(FeatureMapParams(w_try), config, sequences, max_logit)
            except OverflowGuardError:
                new_loss = np.inf
            if np.isfinite(new_loss) and new_loss <= loss:
                break
            lr *= 0.5
            if lr < learning_rate * 2.0 ** -60:
                # gradient no longer yields progress at any usable step size
                if loss_history is not None:
                    loss_history.append(loss)
                return FeatureMapParams(w)
        w = w_try
    if loss_history is not None:
        loss_history.append(distillation_loss(FeatureMapParams(w), config, sequences, max_logit))
    return FeatureMapParams(w)
