"""Attention kernels: plain multi-head, windowed causal, and chunked recall.

The chunked-recall block (hcam_block) scores each stored chunk by matching a
projected query against the chunk's mean summary, then runs detailed
attention inside only the top-k chunks and adds the relevance-weighted
results back to the input. Scoring is N summary dots plus k*C detail dots
per query, against N*C for attending over every stored timestep.

Memory contents (summaries and chunk rows) always pass through
stop_gradient here, so training shapes how memories are queried and used,
never what was written.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, EmptyMemoryError, ShapeError
from .tensor import GradTape, Tensor

NEG_INF = -1e30  # additive mask value; survives float32 without overflow


@dataclass
class AttentionParams:
    """Projections for one multi-head attention: d_model in, d_model out."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


@dataclass
class HcamParams:
    """Chunked-recall block: its own input norm, relevance projection, MHA."""

    ln_gain: Tensor
    ln_bias: Tensor
    w_rel: Tensor  # query projection matched against chunk summaries
    mha: AttentionParams


class ScoreCounter:
    """Counts attention score computations as (query, key) pairs.

    Heads share one count per pair: the cost model tracks which timesteps
    are scored at all, not the width of the projection doing it.
    """

    def __init__(self):
        self.scores = 0

    def add(self, n: int):
        self.scores += int(n)


def sinusoidal_table(n_positions: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Fixed sin/cos position codes, one row per position."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(d_model, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


def scaled_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None, dtype=np.float64) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out)).astype(dtype)


def init_attention_params(rng, d_model: int, dtype=np.float64) -> AttentionParams:
    return AttentionParams(
        wq=Tensor(scaled_uniform(rng, d_model, d_model, dtype=dtype)),
        wk=Tensor(scaled_uniform(rng, d_model, d_model, dtype=dtype)),
        wv=Tensor(scaled_uniform(rng, d_model, d_model, dtype=dtype)),
        wo=Tensor(scaled_uniform(rng, d_model, d_model, dtype=dtype)),
    )


def init_hcam_params(rng, d_model: int, dtype=np.float64) -> HcamParams:
    return HcamParams(
        ln_gain=Tensor(np.ones(d_model, dtype=dtype)),
        ln_bias=Tensor(np.zeros(d_model, dtype=dtype)),
        w_rel=Tensor(scaled_uniform(rng, d_model, d_model, dtype=dtype)),
        mha=init_attention_params(rng, d_model),
    )


def _split_heads(tape: GradTape, x: Tensor, n_heads: int) -> Tensor:
    """(..., q, d) -> (..., h, q, d/h)"""
    *lead, q, d = x.shape
    dh = d // n_heads
    y = tape.reshape(x, (*lead, q, n_heads, dh))
    nlead = len(lead)
    perm = tuple(range(nlead)) + (nlead + 1, nlead, nlead + 2)
    return tape.transpose(y, perm)


def _merge_heads(tape: GradTape, x: Tensor) -> Tensor:
    """(..., h, q, dh) -> (..., q, h*dh)"""
    *lead, h, q, dh = x.shape
    nlead = len(lead)
    perm = tuple(range(nlead)) + (nlead + 1, nlead, nlead + 2)
    y = tape.transpose(x, perm)
    return tape.reshape(y, (*lead, q, h * dh))


def multi_head_attention(
    tape: GradTape,
    queries: Tensor,
    keys_values: Tensor,
    params: AttentionParams,
    n_heads: int,
    mask: np.ndarray | None = None,
    key_pos: tuple[np.ndarray, np.ndarray] | None = None,
    topk: int | None = None,
    counter: ScoreCounter | None = None,
) -> Tensor:
    """Scaled dot-product attention with n_heads heads.

    queries (..., q, d); keys_values (..., s, d); leading dims broadcast.
    mask is additive, broadcastable to the (..., q, s) score shape.
    key_pos = (table, codes): table rows are position encodings added to the
    key input (post-norm, pre-projection), codes[..., q, s] indexes rows per
    query-key pair; realized as an equivalent score-side bias.
    topk keeps only each head's k highest final scores per query (the rest
    are masked out before the softmax); None keeps everything.
    """
    d = queries.shape[-1]
    if d % n_heads != 0:
        raise ShapeError(f"d_model {d} not divisible by n_heads {n_heads}")
    if keys_values.shape[-2] == 0:
        raise ContractError("attention over an empty key/value sequence")
    dh = d // n_heads

    qh = _split_heads(tape, tape.matmul(queries, params.wq), n_heads)
    kh = _split_heads(tape, tape.matmul(keys_values, params.wk), n_heads)
    vh = _split_heads(tape, tape.matmul(keys_values, params.wv), n_heads)

    scores = tape.scale(tape.matmul(qh, tape.swap_last2(kh)), 1.0 / np.sqrt(dh))
    if counter is not None:
        sh = scores.shape  # (..., h, q, s); heads share one count per pair
        counter.add(int(np.prod(sh[:-3], dtype=np.int64)) * sh[-2] * sh[-1])

    if key_pos is not None:
        table, codes = key_pos
        ph = _split_heads(
            tape, tape.matmul(Tensor(table.astype(queries.dtype)), params.wk),
            n_heads)  # (h, n_pos, dh)
        qp = tape.scale(tape.matmul(qh, tape.swap_last2(ph)), 1.0 / np.sqrt(dh))
        idx = np.broadcast_to(codes, qp.shape[:-1] + codes.shape[-1:])
        scores = tape.add(scores, tape.gather_last(qp, idx))

    if mask is not None:
        scores = tape.add(scores, Tensor(mask.astype(queries.dtype)))

    if topk is not None:
        sel = top_k_select(scores.data, topk)
        keep = np.zeros(scores.shape, dtype=bool)
        np.put_along_axis(keep, sel, True, axis=-1)
        cut = np.where(keep, 0.0, NEG_INF).astype(scores.dtype)
        scores = tape.add(scores, Tensor(cut))

    att = tape.softmax(scores, axis=-1)
    out = _merge_heads(tape, tape.matmul(att, vh))
    return tape.matmul(out, params.wo)


def local_attention(
    tape: GradTape,
    seq: Tensor,
    window: int,
    params: AttentionParams,
    n_heads: int,
    pos_table: np.ndarray | None = None,
    n_carry: int = 0,
    counter: ScoreCounter | None = None,
) -> Tensor:
    """Causal attention limited to a sliding window of recent positions.

    seq is (..., S, d) where the first n_carry rows are carried-in context
    (attendable, but not queried); outputs cover the last S - n_carry rows.
    Position t may attend to positions max(0, t - window + 1) .. t, and key
    codes count from the start of that window.
    """
    if window < 1:
        raise ContractError(f"window must be >= 1, got {window}")
    s_total = seq.shape[-2]
    t_len = s_total - n_carry
    gq = np.arange(t_len) + n_carry  # global index of each query
    g = np.arange(s_total)
    start = np.maximum(0, gq - window + 1)
    valid = (g[None, :] >= start[:, None]) & (g[None, :] <= gq[:, None])
    mask = np.where(valid, 0.0, NEG_INF)

    queries = tape.slice_ax(seq, -2, n_carry, s_total) if n_carry else seq
    key_pos = None
    if pos_table is not None:
        codes = np.clip(g[None, :] - start[:, None], 0, window - 1)
        key_pos = (pos_table, codes)
    return multi_head_attention(
        tape, queries, seq, params, n_heads,
        mask=mask, key_pos=key_pos, counter=counter)


def chunk_relevance(
    tape: GradTape,
    queries: Tensor,
    summaries: Tensor,
    w_rel: Tensor,
    counter: ScoreCounter | None = None,
) -> Tensor:
    """Softmax over chunks of (projected query . chunk summary) scores.

    queries (..., q, d); summaries (..., N, d), treated as constants.
    Rows of the result sum to 1 over the N chunks.
    """
    n = summaries.shape[-2]
    if n == 0:
        raise EmptyMemoryError("no complete chunks to score")
    qs = tape.matmul(queries, w_rel)
    s = tape.stop_gradient(summaries)
    scores = tape.matmul(qs, tape.swap_last2(s))
    if counter is not None:
        sh = scores.shape
        counter.add(int(np.prod(sh[:-2], dtype=np.int64)) * sh[-2] * sh[-1])
    return tape.softmax(scores, axis=-1)


def top_k_select(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries along the last axis, ascending.

    Ties break toward the smallest index. k is clamped to the axis length.
    """
    if k < 1:
        raise ContractError(f"top_k must be >= 1, got {k}")
    scores = np.asarray(scores)
    kk = min(k, scores.shape[-1])
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :kk]
    return np.sort(order, axis=-1)


def hcam_block(
    tape: GradTape,
    x: Tensor,
    summaries,
    chunks,
    params: HcamParams,
    n_heads: int,
    top_k: int,
    pos_table: np.ndarray | None = None,
    counter: ScoreCounter | None = None,
) -> Tensor:
    """Hierarchical recall: score summaries, attend inside top-k chunks.

    x (..., q, d) is the block input; summaries (..., N, d) and chunks
    (..., N, C, d) come from memory and are gradient-isolated. Each query
    row picks its own top-k chunks from the relevance softmax; the selected
    chunks' detail-attention outputs, weighted by their unrenormalized
    relevance, are summed and added to x. With no complete chunks the block
    is the identity.
    """
    if isinstance(summaries, Tensor):
        summaries = summaries.data
    if isinstance(chunks, Tensor):
        chunks = chunks.data
    if summaries.shape[-2] == 0:
        return x

    chunks = np.asarray(chunks)
    n, c, d = chunks.shape[-3:]
    dh = d // n_heads
    normed = tape.layer_norm(x, params.ln_gain, params.ln_bias)
    rel = chunk_relevance(tape, normed, Tensor(summaries), params.w_rel, counter)
    sel = top_k_select(rel.data, top_k)  # (..., q, k')
    kk = sel.shape[-1]
    *lead, q, _ = x.shape
    nl = len(lead)

    # project every chunk once, then gather per-query selections
    detail = chunks  # constant: stop-gradient on memory contents
    if pos_table is not None:
        detail = detail + pos_table[:c].astype(detail.dtype)
    flat = Tensor(detail.reshape(tuple(lead) + (n * c, d)))

    def chunked_heads(w):
        hh = _split_heads(tape, tape.matmul(flat, w), n_heads)
        hh = tape.reshape(hh, (*lead, n_heads, n, c, dh))
        perm = tuple(range(nl)) + (nl + 1, nl, nl + 2, nl + 3)
        return tape.transpose(hh, perm)  # (..., N, h, C, dh)

    sel_flat = sel.reshape(tuple(lead) + (q * kk,))
    gshape = (*lead, q, kk, n_heads, c, dh)
    kh = tape.reshape(tape.take_rows(chunked_heads(params.mha.wk), sel_flat),
                      gshape)
    vh = tape.reshape(tape.take_rows(chunked_heads(params.mha.wv), sel_flat),
                      gshape)

    qh = _split_heads(tape, tape.matmul(normed, params.mha.wq), n_heads)
    qh = tape.transpose(qh, tuple(range(nl)) + (nl + 1, nl, nl + 2))
    qh = tape.reshape(qh, (*lead, q, 1, n_heads, 1, dh))

    scores = tape.scale(tape.matmul(qh, tape.swap_last2(kh)), 1.0 / np.sqrt(dh))
    if counter is not None:  # (..., q, k', h, 1, C); heads share one count
        counter.add(int(np.prod(lead, dtype=np.int64)) * q * kk * c)
    att = tape.matmul(tape.softmax(scores, axis=-1), vh)
    att = tape.reshape(att, (*lead, q, kk, d))  # (h, 1, dh) -> head-major d
    att = tape.matmul(att, params.mha.wo)

    weights = tape.gather_last(rel, sel)  # relevance of the selected chunks
    weighted = tape.multiply(att, tape.reshape(weights, (*lead, q, kk, 1)))
    result = tape.reduce_sum(weighted, axis=-2)
    return tape.add(x, result)


def attention_op_count(n_chunks: int, chunk_size: int, k: int) -> tuple[int, int]:
    """Score computations per query: (summary-then-top-k, attend-everything).

    Assumes k <= n_chunks, the only regime the sparse path is for.
    """
    return (n_chunks + k * chunk_size, n_chunks * chunk_size)


def relative_attention_weights(weights: np.ndarray) -> np.ndarray:
    """Attention weights divided by the uniform weight 1/N over the last axis.

    1.0 means a chunk got exactly its share; the mean over any row is 1.
    """
    w = np.asarray(weights)
    return w * w.shape[-1]
