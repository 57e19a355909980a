"""Chunked prefill: process a known sequence chunk by chunk with one fused
masked-softmax pass per chunk and a hidden state frozen at chunk entry.

Queries in chunk m attend, in full rank, to their own chunk (causally), to
the previous two chunks in full, and to every sparse-cache resident;
everything older lives in the hidden state. After a chunk's outputs are
emitted, the chunk that just left the two-chunk lookback competes with the
sparse residents by self-recall score and the losers are absorbed. Peak
full-rank storage is bounded by three chunks plus the sparse capacity no
matter how long the input is.

Because all queries in a chunk share the frozen hidden state, prefill
outputs differ slightly from the per-token decode path on the same stream:
they are two policies, not approximations of each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import (
    DEFAULT_MAX_LOGIT,
    AttentionConfig,
    FeatureMapParams,
    LinearState,
    feature_map_apply,
    feature_map_batch,
)
from .cache import _self_recall_scores
from .numerics import as_matrix, as_vector

__all__ = [
    "ChunkConfig",
    "ChunkEvent",
    "PrefillState",
    "attend_after_prefill",
    "compression_rate",
    "effective_cache_size",
    "prefill",
]


@dataclass(frozen=True)
class ChunkConfig:
    chunk_size: int
    sparse_capacity: int = 0

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.sparse_capacity < 0:
            raise ValueError(f"sparse_capacity must be >= 0, got {self.sparse_capacity}")


@dataclass(frozen=True)
class ChunkEvent:
    """Boundary bookkeeping after one chunk: who competed, stayed, was absorbed."""

    chunk: int
    eligible_indices: np.ndarray
    eligible_scores: np.ndarray
    kept_indices: np.ndarray
    absorbed_indices: np.ndarray


@dataclass
class PrefillState:
    """Carry-over memory after a prefill pass.

    ``recent_*`` hold the pairs still inside the two-chunk lookback; a
    follow-up query attends those in full rank next to the sparse cache and
    the hidden state, exactly as the first query of a fresh chunk would.
    """

    linear: LinearState
    sparse_keys: np.ndarray
    sparse_values: np.ndarray
    sparse_indices: np.ndarray
    sparse_scores: np.ndarray
    recent_keys: np.ndarray
    recent_values: np.ndarray
    recent_indices: np.ndarray
    processed: int
    peak_full_rank: int
    absorbed_count: int
    absorbed_score_sum: float
    events: list[ChunkEvent] = field(default_factory=list)


def effective_cache_size(config: ChunkConfig) -> int:
    """Full-rank pair budget: two lookback chunks + the current chunk + sparse."""
    return 3 * config.chunk_size + config.sparse_capacity


def compression_rate(n: int, config: ChunkConfig) -> float:
    """How many times smaller the fixed cache is than an n-pair exact cache."""
    return n / effective_cache_size(config)


def prefill(
    qs,
    ks,
    vs,
    config: ChunkConfig,
    attn: AttentionConfig,
    params: FeatureMapParams,
    max_logit: float = DEFAULT_MAX_LOGIT,
) -> tuple[np.ndarray, PrefillState]:
    """Run the chunked pass over a full sequence.

    Returns one output per input position and the carry-over state. Arrival
    indices are 1-based, matching the decode path.
    """
    qs = as_matrix(qs, cols=attn.head_dim)
    n = qs.shape[0]
    if n < 1:
        raise ValueError("need at least one token")
    ks = as_matrix(ks, rows=n, cols=attn.head_dim)
    vs = as_matrix(vs, rows=n, cols=attn.head_dim)
    c = config.chunk_size
    lam = config.sparse_capacity

    phi_q = feature_map_batch(params, qs, max_logit)
    phi_k = feature_map_batch(params, ks, max_logit)
    linear = LinearState.zeros(attn.feature_dim, attn.head_dim)
    sk = np.zeros((lam, attn.head_dim))
    sv = np.zeros((lam, attn.head_dim))
    sphi = np.zeros((lam, attn.feature_dim))
    sidx = np.zeros(lam, dtype=np.int64)
    sscore = np.zeros(lam)
    slen = 0

    out = np.empty_like(vs)
    events: list[ChunkEvent] = []
    peak = 0
    absorbed_count = 0
    absorbed_score_sum = 0.0
    n_chunks = -(-n // c)

    for m in range(n_chunks):
        c0 = m * c
        c1 = min(n, c0 + c)
        lb0 = max(0, c0 - 2 * c)
        kb = np.concatenate([sk[:slen], ks[lb0:c1]], axis=0)
        vb = np.concatenate([sv[:slen], vs[lb0:c1]], axis=0)
        peak = max(peak, kb.shape[0])
        if kb.shape[0] > 3 * c + lam:
            raise RuntimeError("full-rank storage exceeded its fixed bound")

        logits = (qs[c0:c1] @ kb.T) * attn.scale
        width = c1 - c0
        col0 = slen + (c0 - lb0)
        # queries may not look ahead inside their own chunk
        logits[:, col0:][np.triu(np.ones((width, width), dtype=bool), k=1)] = -np.inf
        shift = np.maximum(logits.max(axis=1), 0.0)
        e = np.exp(logits - shift[:, None])
        damp = np.exp(-shift)
        num = e @ vb + damp[:, None] * (phi_q[c0:c1] @ linear.hidden)
        den = e.sum(axis=1) + damp * (phi_q[c0:c1] @ linear.normalizer)
        out[c0:c1] = num / den[:, None]

        # the chunk two behind just left the lookback: settle it
        if m >= 2:
            e0, e1 = (m - 2) * c, (m - 1) * c
            elig_k = np.concatenate([sk[:slen], ks[e0:e1]], axis=0)
            elig_v = np.concatenate([sv[:slen], vs[e0:e1]], axis=0)
            elig_phi = np.concatenate([sphi[:slen], phi_k[e0:e1]], axis=0)
            elig_idx = np.concatenate(
                [sidx[:slen], np.arange(e0 + 1, e1 + 1, dtype=np.int64)]
            )
            scores = _self_recall_scores(elig_phi, elig_v, linear)
            order = np.lexsort((elig_idx, -scores))
            kept = order[:lam]
            dropped = order[lam:]
            dropped = dropped[np.argsort(elig_idx[dropped])]
            linear.absorb(elig_phi[dropped], elig_v[dropped])
            absorbed_count += dropped.shape[0]
            absorbed_score_sum += float(scores[dropped].sum())

            kept = kept[np.argsort(elig_idx[kept])]
            nk = kept.shape[0]
            sk[:nk] = elig_k[kept]
            sv[:nk] = elig_v[kept]
            sphi[:nk] = elig_phi[kept]
            sidx[:nk] = elig_idx[kept]
            slen = nk
            if nk:
                sscore[:nk] = _self_recall_scores(sphi[:nk], sv[:nk], linear)
            events.append(
                ChunkEvent(
                    chunk=m - 2,
                    eligible_indices=elig_idx,
                    eligible_scores=scores,
                    kept_indices=elig_idx[kept].copy(),
                    absorbed_indices=elig_idx[dropped].copy(),
                )
            )

    r0 = max(0, (n_chunks - 2) * c)
    state = PrefillState(
        linear=linear,
        sparse_keys=sk[:slen].copy(),
        sparse_values=sv[:slen].copy(),
        sparse_indices=sidx[:slen].copy(),
        sparse_scores=sscore[:slen].copy(),
        recent_keys=ks[r0:].copy(),
        recent_values=vs[r0:].copy(),
        recent_indices=np.arange(r0 + 1, n + 1, dtype=np.int64),
        processed=n_chunks,
        peak_full_rank=peak,
        absorbed_count=absorbed_count,
        absorbed_score_sum=absorbed_score_sum,
        events=events,
    )
    return out, state


def attend_after_prefill(
    state: PrefillState,
    query,
    attn: AttentionConfig,
    params: FeatureMapParams,
    max_logit: float = DEFAULT_MAX_LOGIT,
) -> np.ndarray:
    """Answer one extra query as the first token of a hypothetical next chunk."""
    q = as_vector(query, attn.head_dim)
    phi_q = feature_map_apply(params, q, max_logit)
    logit_s = (state.sparse_keys @ q) * attn.scale
    logit_r = (state.recent_keys @ q) * attn.scale
    shift = 0.0
    if logit_s.size:
        shift = max(shift, float(logit_s.max()))
    if logit_r.size:
        shift = max(shift, float(logit_r.max()))
    es = np.exp(logit_s - shift)
    er = np.exp(logit_r - shift)
    damp = np.exp(-shift)
    num = es @ state.sparse_values + er @ state.recent_values + damp * (
        phi_q @ state.linear.hidden
    )
    den = float(es.sum() + er.sum()) + damp * float(phi_q @ state.linear.normalizer)
    if den <= 0.0:
        raise ValueError("empty prefill state")
    return num / den
