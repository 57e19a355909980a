"""Three-tier decoding cache: sliding window, sparse cache, hidden state.

Every past key-value pair lives in exactly one tier at any time. New pairs
enter a FIFO window attended with exact softmax. A pair evicted from the
window competes with the current sparse-cache residents by score; the
``sparse_capacity`` highest-scoring pairs stay cached in full rank and the
rest are absorbed into the linear-attention hidden state. The default score
is the self-recall error: how far the hidden state's prediction for the
pair's own key lands from the pair's value. Pairs the hidden state already
stores well are cheap to absorb; pairs that would collide stay retrievable
exactly.

Outputs combine all three tiers in one ratio: exponential terms for the
window and sparse pairs share a denominator with the hidden-state term, so
every output is a convex combination of stored values.

Selection details, fixed for determinism:
  * eligible pairs are scored once per step, against the state before this
    step's absorptions; the retained residents are then re-scored against
    the post-absorption state so reported scores are always current;
  * equal scores keep the older pair cached;
  * absorption happens in ascending arrival order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import (
    DEFAULT_MAX_LOGIT,
    AttentionConfig,
    FeatureMapParams,
    LinearState,
    feature_map_apply,
    feature_map_batch,
)
from .numerics import as_vector

__all__ = [
    "KVPair",
    "LolaCache",
    "ScoringStrategy",
    "SelfRecallScoring",
    "StaticScoring",
    "StepEvent",
    "load_snapshot",
    "save_snapshot",
    "self_recall_score",
]


@dataclass(frozen=True)
class KVPair:
    """One stored association, tagged with its 1-based arrival position."""

    key: np.ndarray
    value: np.ndarray
    index: int

    def __post_init__(self):
        object.__setattr__(self, "key", as_vector(self.key))
        object.__setattr__(self, "value", as_vector(self.value))
        if self.index < 1:
            raise ValueError(f"index must be >= 1, got {self.index}")


class ScoringStrategy:
    """Interface the engine expects from a cache scoring rule.

    ``dynamic`` strategies are re-evaluated against the current hidden state
    at every eviction. Static strategies accumulate a per-pair total from the
    queries the pair co-resides with in the window and freeze it at eviction;
    a pair that saw no query scores zero.
    """

    name = "abstract"
    dynamic = True

    def term(self, exp_vals: np.ndarray, lin_vals: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SelfRecallScoring(ScoringStrategy):
    """Score a pair by the hidden state's prediction error for its own key.

    Re-scored every step: absorbing more pairs can make an old resident
    easier (or harder) to recall, so stale scores would mis-rank it.
    """

    name = "self-recall"
    dynamic = True


class StaticScoring(ScoringStrategy):
    """Base for scores summed over a pair's co-resident window queries."""

    name = "static"
    dynamic = False


def self_recall_score(phi_k: np.ndarray, value: np.ndarray, state: LinearState) -> float:
    """Self-recall error of one pair against ``state``.

    An empty state predicts nothing, so the score is ``|value|`` by
    convention (maximal disagreement), not an exception.
    """
    if state.count == 0:
        return float(np.linalg.norm(value))
    den = float(phi_k @ state.normalizer)
    pred = (phi_k @ state.hidden) / den
    return float(np.linalg.norm(pred - value))


def _self_recall_scores(phi: np.ndarray, values: np.ndarray, state: LinearState) -> np.ndarray:
    """Row-wise ``self_recall_score`` with the same empty-state convention."""
    if state.count == 0:
        return np.linalg.norm(values, axis=1)
    den = phi @ state.normalizer
    pred = (phi @ state.hidden) / den[:, None]
    return np.linalg.norm(pred - values, axis=1)


_EMPTY_IDX = np.empty(0, dtype=np.int64)
_EMPTY_F64 = np.empty(0, dtype=np.float64)


@dataclass(frozen=True)
class StepEvent:
    """What one update did: who competed, who stayed cached, who was absorbed."""

    index: int
    evicted_index: int | None
    eligible_indices: np.ndarray = field(default_factory=lambda: _EMPTY_IDX)
    eligible_scores: np.ndarray = field(default_factory=lambda: _EMPTY_F64)
    kept_indices: np.ndarray = field(default_factory=lambda: _EMPTY_IDX)
    absorbed_indices: np.ndarray = field(default_factory=lambda: _EMPTY_IDX)
    absorbed_scores: np.ndarray = field(default_factory=lambda: _EMPTY_F64)


class LolaCache:
    """Decode-path engine holding the three memory tiers for one stream.

    Single-owner mutable state: feed tokens in arrival order through
    ``decode_step`` (or ``update`` plus ``attend``). ``window_capacity`` = 0
    degenerates to pure linear attention, ``sparse_capacity`` = 0 to the
    window + hidden-state baseline.
    """

    def __init__(
        self,
        config: AttentionConfig,
        params: FeatureMapParams,
        window_capacity: int,
        sparse_capacity: int,
        *,
        scoring: ScoringStrategy | None = None,
        max_logit: float = DEFAULT_MAX_LOGIT,
    ):
        if window_capacity < 0 or sparse_capacity < 0:
            raise ValueError("capacities must be >= 0")
        if params.head_dim != config.head_dim or params.feature_dim != config.feature_dim:
            raise ValueError(
                f"feature map is {params.feature_dim}x{params.head_dim}, "
                f"config wants {config.feature_dim}x{config.head_dim}"
            )
        self.config = config
        self.params = params
        self.window_capacity = window_capacity
        self.sparse_capacity = sparse_capacity
        self.scoring = scoring if scoring is not None else SelfRecallScoring()
        self.max_logit = max_logit
        self.linear = LinearState.zeros(config.feature_dim, config.head_dim)
        self.t = 0
        self.last_event: StepEvent | None = None
        d, fdim = config.head_dim, config.feature_dim
        eta, lam = window_capacity, sparse_capacity
        # window ring buffer; once full, slot _wnext always holds the oldest pair
        self._wk = np.zeros((eta, d))
        self._wv = np.zeros((eta, d))
        self._wphi = np.zeros((eta, fdim))
        self._widx = np.zeros(eta, dtype=np.int64)
        self._wacc = np.zeros(eta)
        self._wlen = 0
        self._wnext = 0
        # sparse cache, kept sorted by arrival index
        self._sk = np.zeros((lam, d))
        self._sv = np.zeros((lam, d))
        self._sphi = np.zeros((lam, fdim))
        self._sidx = np.zeros(lam, dtype=np.int64)
        self._sscore = np.zeros(lam)
        self._slen = 0

    # -- views ------------------------------------------------------------

    @property
    def window_size(self) -> int:
        return self._wlen

    @property
    def sparse_size(self) -> int:
        return self._slen

    @property
    def window_indices(self) -> np.ndarray:
        return np.sort(self._widx[: self._wlen])

    @property
    def sparse_indices(self) -> np.ndarray:
        return self._sidx[: self._slen].copy()

    @property
    def sparse_scores(self) -> np.ndarray:
        return self._sscore[: self._slen].copy()

    def window_pairs(self) -> list[KVPair]:
        order = np.argsort(self._widx[: self._wlen])
        return [
            KVPair(self._wk[i].copy(), self._wv[i].copy(), int(self._widx[i]))
            for i in order
        ]

    def sparse_pairs(self) -> list[KVPair]:
        return [
            KVPair(self._sk[i].copy(), self._sv[i].copy(), int(self._sidx[i]))
            for i in range(self._slen)
        ]

    # -- updates ----------------------------------------------------------

    def update(self, key, value, index: int | None = None) -> None:
        """Admit the next pair: window in; on overflow the oldest pair is
        scored against the sparse residents and the losers are absorbed."""
        idx = self.t + 1
        if index is not None and index != idx:
            raise ValueError(f"index discontinuity: expected {idx}, got {index}")
        key = as_vector(key, self.config.head_dim)
        value = as_vector(value, self.config.head_dim)
        phi_k = feature_map_apply(self.params, key, self.max_logit)

        evicted = None
        if self.window_capacity == 0:
            evicted = (key, value, phi_k, idx, 0.0)
        else:
            slot = self._wnext
            if self._wlen == self.window_capacity:
                evicted = (
                    self._wk[slot].copy(),
                    self._wv[slot].copy(),
                    self._wphi[slot].copy(),
                    int(self._widx[slot]),
                    float(self._wacc[slot]),
                )
            else:
                self._wlen += 1
            self._wk[slot] = key
            self._wv[slot] = value
            self._wphi[slot] = phi_k
            self._widx[slot] = idx
            self._wacc[slot] = 0.0
            self._wnext = (slot + 1) % self.window_capacity

        self.t = idx
        if evicted is None:
            self.last_event = StepEvent(idx, None)
        else:
            self._settle(evicted, idx)
        self._assert_conserved()

    def _settle(self, evicted, step_index: int) -> None:
        ek, ev, ephi, eidx, eacc = evicted
        ns = self._slen
        lam = self.sparse_capacity
        elig_k = np.concatenate([self._sk[:ns], ek[None]], axis=0)
        elig_v = np.concatenate([self._sv[:ns], ev[None]], axis=0)
        elig_phi = np.concatenate([self._sphi[:ns], ephi[None]], axis=0)
        elig_idx = np.append(self._sidx[:ns], eidx)
        if self.scoring.dynamic:
            scores = _self_recall_scores(elig_phi, elig_v, self.linear)
        else:
            scores = np.append(self._sscore[:ns], eacc)

        # top-lam by score; ties keep the older pair
        order = np.lexsort((elig_idx, -scores))
        kept = order[:lam]
        dropped = order[lam:]
        dropped = dropped[np.argsort(elig_idx[dropped])]
        for row in dropped:
            self.linear.update(elig_phi[row], elig_v[row])

        kept = kept[np.argsort(elig_idx[kept])]
        nk = kept.shape[0]
        self._sk[:nk] = elig_k[kept]
        self._sv[:nk] = elig_v[kept]
        self._sphi[:nk] = elig_phi[kept]
        self._sidx[:nk] = elig_idx[kept]
        self._slen = nk
        if self.scoring.dynamic and nk:
            self._sscore[:nk] = _self_recall_scores(self._sphi[:nk], self._sv[:nk], self.linear)
        else:
            self._sscore[:nk] = scores[kept]

        self.last_event = StepEvent(
            index=step_index,
            evicted_index=eidx,
            eligible_indices=elig_idx,
            eligible_scores=scores,
            kept_indices=elig_idx[kept].copy(),
            absorbed_indices=elig_idx[dropped].copy(),
            absorbed_scores=scores[dropped].copy(),
        )

    def accumulate_window_scores(self, query) -> None:
        """Add one query's contribution to every window resident's static score.

        Only meaningful for static strategies; the self-recall rule ignores
        queries entirely.
        """
        if self.scoring.dynamic:
            return
        nw = self._wlen
        if nw == 0:
            return
        q = as_vector(query, self.config.head_dim)
        phi_q = feature_map_apply(self.params, q, self.max_logit)
        e = np.exp((self._wk[:nw] @ q) * self.config.scale)
        p = self._wphi[:nw] @ phi_q
        self._wacc[:nw] += self.scoring.term(e, p)

    # -- reads ------------------------------------------------------------

    def attend(self, query) -> np.ndarray:
        """Combined output for ``query`` over all three tiers, one shared
        denominator. Read-only."""
        if self.t < 1:
            raise ValueError("attend called before any pair was admitted")
        q = as_vector(query, self.config.head_dim)
        phi_q = feature_map_apply(self.params, q, self.max_logit)
        scale = self.config.scale
        nw, ns = self._wlen, self._slen
        logit_w = (self._wk[:nw] @ q) * scale
        logit_s = (self._sk[:ns] @ q) * scale
        shift = 0.0
        if nw:
            shift = max(shift, float(logit_w.max()))
        if ns:
            shift = max(shift, float(logit_s.max()))
        ew = np.exp(logit_w - shift)
        es = np.exp(logit_s - shift)
        damp = np.exp(-shift)
        num = ew @ self._wv[:nw] + es @ self._sv[:ns] + damp * (phi_q @ self.linear.hidden)
        den = float(ew.sum() + es.sum()) + damp * float(phi_q @ self.linear.normalizer)
        return num / den

    def decode_step(self, query, key, value) -> np.ndarray:
        """Admit ``(key, value)``, then answer ``query``; the new pair is
        visible to its own query through the window term."""
        self.update(key, value)
        self.accumulate_window_scores(query)
        return self.attend(query)

    # -- invariants -------------------------------------------------------

    def _assert_conserved(self) -> None:
        stored = self._wlen + self._slen + self.linear.count
        if stored != self.t:
            raise RuntimeError(
                f"conservation violated at t={self.t}: window {self._wlen} "
                f"+ sparse {self._slen} + absorbed {self.linear.count} = {stored}"
            )

    def check_conservation(self) -> None:
        self._assert_conserved()

    # -- serialization ----------------------------------------------------

    def to_snapshot(self) -> dict:
        """JSON-ready snapshot: config header, map weights (row-major), hidden
        state (row-major) with its normalizer, window pairs oldest first, and
        sparse pairs with their scores."""
        worder = np.argsort(self._widx[: self._wlen])
        return {
            "format": "lola-cache-snapshot-v1",
            "config": {
                "head_dim": self.config.head_dim,
                "feature_dim": self.config.feature_dim,
                "scale": self.config.scale,
                "window_capacity": self.window_capacity,
                "sparse_capacity": self.sparse_capacity,
                "max_logit": self.max_logit,
                "scoring": self.scoring.name,
            },
            "weights": self.params.weights.reshape(-1).tolist(),
            "t": self.t,
            "hidden": self.linear.hidden.reshape(-1).tolist(),
            "normalizer": self.linear.normalizer.tolist(),
            "absorbed_count": self.linear.count,
            "window": [
                {
                    "index": int(self._widx[i]),
                    "key": self._wk[i].tolist(),
                    "value": self._wv[i].tolist(),
                    "acc": float(self._wacc[i]),
                }
                for i in worder
            ],
            "sparse": [
                {
                    "index": int(self._sidx[i]),
                    "key": self._sk[i].tolist(),
                    "value": self._sv[i].tolist(),
                    "score": float(self._sscore[i]),
                }
                for i in range(self._slen)
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: dict, scoring: ScoringStrategy | None = None) -> "LolaCache":
        if snap.get("format") != "lola-cache-snapshot-v1":
            raise ValueError("unrecognized snapshot format")
        cfg = snap["config"]
        config = AttentionConfig(cfg["head_dim"], cfg["feature_dim"], cfg["scale"])
        weights = np.asarray(snap["weights"], dtype=np.float64).reshape(
            cfg["feature_dim"] // 2, cfg["head_dim"]
        )
        params = FeatureMapParams(weights)
        if scoring is None:
            if cfg["scoring"] != SelfRecallScoring.name:
                raise ValueError(
                    f"snapshot used scoring {cfg['scoring']!r}; pass the strategy object to restore it"
                )
            scoring = SelfRecallScoring()
        cache = cls(
            config,
            params,
            cfg["window_capacity"],
            cfg["sparse_capacity"],
            scoring=scoring,
            max_logit=cfg["max_logit"],
        )
        cache.t = snap["t"]
        cache.linear.hidden = np.asarray(snap["hidden"], dtype=np.float64).reshape(
            cfg["feature_dim"], cfg["head_dim"]
        )
        cache.linear.normalizer = np.asarray(snap["normalizer"], dtype=np.float64)
        cache.linear.count = snap["absorbed_count"]
        for i, entry in enumerate(snap["window"]):
            cache._wk[i] = entry["key"]
            cache._wv[i] = entry["value"]
            cache._widx[i] = entry["index"]
            cache._wacc[i] = entry["acc"]
        cache._wlen = len(snap["window"])
        if cache._wlen:
            cache._wphi[: cache._wlen] = feature_map_batch(
                params, cache._wk[: cache._wlen], cfg["max_logit"]
            )
        cache._wnext = cache._wlen % cache.window_capacity if cache.window_capacity else 0
        for i, entry in enumerate(snap["sparse"]):
            cache._sk[i] = entry["key"]
            cache._sv[i] = entry["value"]
            cache._sidx[i] = entry["index"]
            cache._sscore[i] = entry["score"]
        cache._slen = len(snap["sparse"])
        if cache._slen:
            cache._sphi[: cache._slen] = feature_map_batch(
                params, cache._sk[: cache._slen], cfg["max_logit"]
            )
        cache._assert_conserved()
        return cache


def save_snapshot(cache: LolaCache, path) -> None:
    Path(path).write_text(json.dumps(cache.to_snapshot()))


def load_snapshot(path, scoring: ScoringStrategy | None = None) -> LolaCache:
    return LolaCache.from_snapshot(json.loads(Path(path).read_text()), scoring=scoring)
