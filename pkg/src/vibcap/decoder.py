"""Autoregressive transformer decoder over fused signal features.

Pre-norm blocks with masked self-attention and cross-attention over the
encoder memory, a final layer norm, and an untied output projection.
Generation is deterministic: greedy argmax or beam search with length
normalization, ties always broken toward the lowest token id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .encoder import (
    FeatureSeq,
    _ln_affine,
    _register_attention_block,
    multi_head_attention,
    sinusoidal_encoding,
)
from .numerics import ParamStore, ShapeError, Tensor, constant

NEG_INF = -1e9


@dataclass
class DecoderConfig:
    d_model: int = 128
    blocks: int = 2
    heads: int = 4
    ff: int = 512
    max_len: int = 20           # tokens including begin/end markers
    length_norm_power: float = 0.7


def register_params(ps: ParamStore, vocab_size: int, cfg: DecoderConfig,
                    prefix: str = "decoder"):
    d = cfg.d_model
    ps.matrix(f"{prefix}.embed", vocab_size, d)
    for blk in range(cfg.blocks):
        _register_attention_block(ps, f"{prefix}.blk{blk}.self", d, cfg.ff)
        for name in ("q", "k", "v", "o"):
            ps.matrix(f"{prefix}.blk{blk}.cross.w{name}", d, d)
            ps.zeros(f"{prefix}.blk{blk}.cross.b{name}", (d,))
        ps.ones(f"{prefix}.blk{blk}.lnc.g", (d,))
        ps.zeros(f"{prefix}.blk{blk}.lnc.b", (d,))
    ps.ones(f"{prefix}.ln_out.g", (d,))
    ps.zeros(f"{prefix}.ln_out.b", (d,))
    ps.matrix(f"{prefix}.out.w", d, vocab_size)
    ps.zeros(f"{prefix}.out.b", (vocab_size,))


def causal_mask(t: int) -> np.ndarray:
    m = np.zeros((t, t))
    m[np.triu_indices(t, k=1)] = NEG_INF
    return m


def forward_logits(ids, memory: FeatureSeq, ps: ParamStore, cfg: DecoderConfig,
                   prefix: str = "decoder") -> Tensor:
    """Logits (T, V) for every position of the input token sequence."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ShapeError("decoder input must be non-empty")
    d = cfg.d_model
    if memory.features.data.shape[1] != d:
        raise ShapeError(
            f"memory dim {memory.features.data.shape[1]} != decoder dim {d}")
    x = nm.embedding(ps[f"{prefix}.embed"], ids) * float(np.sqrt(d))
    x = x + constant(sinusoidal_encoding(ids.size, d, ps.dtype))
    mask = causal_mask(ids.size)
    mem = memory.features
    for blk in range(cfg.blocks):
        base = f"{prefix}.blk{blk}"
        h = _ln_affine(x, ps, f"{base}.self.ln1")
        x = x + multi_head_attention(h, h, ps, f"{base}.self.attn", cfg.heads, mask=mask)
        h = _ln_affine(x, ps, f"{base}.lnc")
        x = x + multi_head_attention(h, mem, ps, f"{base}.cross", cfg.heads)
        h = _ln_affine(x, ps, f"{base}.self.ln2")
        ff = nm.matmul(h, ps[f"{base}.self.ff.w1"]) + ps[f"{base}.self.ff.b1"]
        ff = nm.matmul(nm.gelu(ff), ps[f"{base}.self.ff.w2"]) + ps[f"{base}.self.ff.b2"]
        x = x + ff
    x = _ln_affine(x, ps, f"{prefix}.ln_out")
    return nm.matmul(x, ps[f"{prefix}.out.w"]) + ps[f"{prefix}.out.b"]


def decode_step(prefix_ids, memory: FeatureSeq, ps: ParamStore,
                cfg: DecoderConfig) -> np.ndarray:
    """Next-token probability vector given the prefix."""
    logits = forward_logits(prefix_ids, memory, ps, cfg)
    probs = nm.softmax(nm.slc(logits, (slice(-1, None), slice(None))), axis=-1)
    return probs.data[0].astype(np.float64)


def teacher_forced_loss(reference_ids, memory: FeatureSeq, ps: ParamStore,
                        cfg: DecoderConfig, pad_id: int | None = None) -> Tensor:
    """Average negative log-likelihood of each reference token given its prefix."""
    ids = np.asarray(reference_ids, dtype=np.int64)
    if ids.size < 2:
        raise ShapeError(f"reference must hold at least 2 tokens, got {ids.size}")
    inputs, targets = ids[:-1], ids[1:]
    keep = np.ones(targets.size, dtype=bool)
    if pad_id is not None:
        keep = targets != pad_id
    if not keep.any():
        raise ShapeError("reference contains only padding")
    logits = forward_logits(inputs, memory, ps, cfg)
    logp = nm.log_softmax(logits, axis=-1)
    rows = np.nonzero(keep)[0]
    picked = nm.gather(logp, (rows, targets[rows]))
    return -nm.reduce_mean(picked)


def _log_probs(prefix_ids, memory, ps, cfg) -> np.ndarray:
    logits = forward_logits(prefix_ids, memory, ps, cfg)
    row = logits.data[-1].astype(np.float64)
    row = row - row.max()
    return row - np.log(np.exp(row).sum())


def _norm_score(logp: float, ids: list[int], power: float) -> float:
    produced = max(1, len(ids) - 1)  # tokens after the begin marker
    return logp / (produced ** power)


def generate(memory: FeatureSeq, ps: ParamStore, cfg: DecoderConfig,
             bos_id: int, eos_id: int, mode: str = "greedy", beam: int = 3,
             max_len: int | None = None) -> list[int]:
    """Decode token ids starting at ``bos_id`` until ``eos_id`` or the cap.

    Beam search keeps ``beam`` hypotheses under length-normalized log
    probability; the greedy continuation is always scored as a candidate, so
    beam output never ranks below greedy under the same normalization.
    """
    cap = max_len or cfg.max_len
    if cap < 2:
        raise ValueError(f"max_len must be >= 2, got {cap}")
    if mode == "greedy":
        return _greedy(memory, ps, cfg, bos_id, eos_id, cap)
    if mode == "beam":
        if beam < 1:
            raise ValueError(f"beam width must be >= 1, got {beam}")
        greedy_ids = _greedy(memory, ps, cfg, bos_id, eos_id, cap)
        if beam == 1:
            return greedy_ids
        best_ids, best_logp = _beam(memory, ps, cfg, bos_id, eos_id, cap, beam)
        power = cfg.length_norm_power
        g_score = _norm_score(_sequence_logp(greedy_ids, memory, ps, cfg),
                              greedy_ids, power)
        if _norm_score(best_logp, best_ids, power) >= g_score:
            return best_ids
        return greedy_ids
    raise ValueError(f"unknown decode mode {mode!r}")


def _greedy(memory, ps, cfg, bos_id, eos_id, cap) -> list[int]:
    ids = [bos_id]
    while len(ids) < cap:
        logp = _log_probs(ids, memory, ps, cfg)
        nxt = int(np.argmax(logp))  # argmax takes the lowest index on ties
        ids.append(nxt)
        if nxt == eos_id:
            break
    return ids


def _sequence_logp(ids, memory, ps, cfg) -> float:
    total = 0.0
    for t in range(1, len(ids)):
        total += float(_log_probs(ids[:t], memory, ps, cfg)[ids[t]])
    return total


def _beam(memory, ps, cfg, bos_id, eos_id, cap, width) -> tuple[list[int], float]:
    live = [([bos_id], 0.0)]
    finished: list[tuple[list[int], float]] = []
    while live and len(live[0][0]) < cap:
        candidates = []
        for ids, score in live:
            logp = _log_probs(ids, memory, ps, cfg)
            for tok in range(logp.size):
                candidates.append((ids + [int(tok)], score + float(logp[tok])))
        candidates.sort(key=lambda c: (-c[1], c[0]))
        live = []
        for ids, score in candidates:
            if ids[-1] == eos_id:
                finished.append((ids, score))
            else:
                live.append((ids, score))
            if len(live) == width:
                break
    finished.extend(live)
    power = cfg.length_norm_power
    finished.sort(key=lambda c: (-_norm_score(c[1], c[0], power), c[0]))
    return finished[0]
