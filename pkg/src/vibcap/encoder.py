"""Dual-branch feature extraction with gated fusion.

The periodic branch runs framed raw signal through learned cosine/sine
projections (plus a conventional nonlinear path), compresses channel
magnitudes, and applies a temporal conv-pool.  The aperiodic branch runs the
mel spectrogram through an LSTM and a small self-attention stack.  Both land
in a common feature dimension so they can be blended by a scalar sigmoid
gate driven by the signal's periodicity score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import ParamStore, ShapeError, Tensor, constant


@dataclass
class EncoderConfig:
    frame_dim: int = 256        # equals the analysis window length
    fan_periodic: int = 32      # cosine/sine projection width
    fan_plain: int = 64         # conventional path width
    conv_kernel: int = 3
    conv_channels: int = 128
    feature_dim: int = 128      # common dimension of both branches
    n_mels: int = 64
    enc_blocks: int = 2
    enc_heads: int = 4
    enc_ff: int = 512
    alpha: float = 10.0         # gate sharpness, fixed
    tau_init: float = 0.5       # gate threshold, learnable
    peak_temperature: float = 0.1
    peak_top_k: int = 4

    @property
    def fan_out_dim(self) -> int:
        return 2 * self.fan_periodic + self.fan_plain


@dataclass
class FeatureSeq:
    features: Tensor            # (frames, D)
    kind: str                   # periodic | aperiodic | fused
    gate: float | None = None   # recorded on fused sequences
    periodicity: float | None = None

    @property
    def frames(self) -> int:
        return self.features.data.shape[0]

    @property
    def dim(self) -> int:
        return self.features.data.shape[1]


def register_params(ps: ParamStore, cfg: EncoderConfig, prefix: str = "encoder"):
    """Create every encoder parameter in a fixed, documented order."""
    D = cfg.feature_dim
    ps.matrix(f"{prefix}.fan.w_p", cfg.frame_dim, cfg.fan_periodic)
    ps.matrix(f"{prefix}.fan.w_pbar", cfg.frame_dim, cfg.fan_plain)
    ps.zeros(f"{prefix}.fan.b", (cfg.fan_plain,))
    ps.kernel(f"{prefix}.conv.w", cfg.conv_kernel, cfg.fan_out_dim, cfg.conv_channels)
    ps.zeros(f"{prefix}.conv.b", (cfg.conv_channels,))
    ps.matrix(f"{prefix}.per_proj.w", cfg.conv_channels, D)
    ps.zeros(f"{prefix}.per_proj.b", (D,))

    H = D
    ps.matrix(f"{prefix}.lstm.wx", cfg.n_mels, 4 * H)
    ps.matrix(f"{prefix}.lstm.wh", H, 4 * H)
    ps.zeros(f"{prefix}.lstm.b", (4 * H,))
    for blk in range(cfg.enc_blocks):
        _register_attention_block(ps, f"{prefix}.tf{blk}", D, cfg.enc_ff)
    ps.matrix(f"{prefix}.aper_proj.w", D, D)
    ps.zeros(f"{prefix}.aper_proj.b", (D,))

    ps.scalar("fusion.tau", cfg.tau_init)


def _register_attention_block(ps: ParamStore, prefix: str, d: int, ff: int):
    for name in ("q", "k", "v", "o"):
        ps.matrix(f"{prefix}.attn.w{name}", d, d)
        ps.zeros(f"{prefix}.attn.b{name}", (d,))
    ps.ones(f"{prefix}.ln1.g", (d,))
    ps.zeros(f"{prefix}.ln1.b", (d,))
    ps.matrix(f"{prefix}.ff.w1", d, ff)
    ps.zeros(f"{prefix}.ff.b1", (ff,))
    ps.matrix(f"{prefix}.ff.w2", ff, d)
    ps.zeros(f"{prefix}.ff.b2", (d,))
    ps.ones(f"{prefix}.ln2.g", (d,))
    ps.zeros(f"{prefix}.ln2.b", (d,))


def _ln_affine(x: Tensor, ps: ParamStore, prefix: str) -> Tensor:
    return nm.layer_norm(x) * ps[f"{prefix}.g"] + ps[f"{prefix}.b"]


def sinusoidal_encoding(length: int, dim: int, dtype) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


def multi_head_attention(query: Tensor, keyval: Tensor, ps: ParamStore, prefix: str,
                         heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention; ``mask`` adds to the score matrix."""
    d = query.data.shape[1]
    if d % heads != 0:
        raise ShapeError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads
    q = nm.matmul(query, ps[f"{prefix}.wq"]) + ps[f"{prefix}.bq"]
    k = nm.matmul(keyval, ps[f"{prefix}.wk"]) + ps[f"{prefix}.bk"]
    v = nm.matmul(keyval, ps[f"{prefix}.wv"]) + ps[f"{prefix}.bv"]
    scale = 1.0 / math.sqrt(dh)
    outs = []
    mask_t = None if mask is None else constant(mask.astype(query.data.dtype))
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        qh = nm.slc(q, (slice(None), cols))
        kh = nm.slc(k, (slice(None), cols))
        vh = nm.slc(v, (slice(None), cols))
        scores = nm.matmul(qh, nm.transpose(kh)) * scale
        if mask_t is not None:
            scores = scores + mask_t
        outs.append(nm.matmul(nm.softmax(scores, axis=-1), vh))
    merged = nm.concat(outs, axis=1)
    return nm.matmul(merged, ps[f"{prefix}.wo"]) + ps[f"{prefix}.bo"]


def encoder_block(x: Tensor, ps: ParamStore, prefix: str, heads: int) -> Tensor:
    """Pre-norm self-attention + feed-forward with residuals."""
    h = _ln_affine(x, ps, f"{prefix}.ln1")
    x = x + multi_head_attention(h, h, ps, f"{prefix}.attn", heads)
    h = _ln_affine(x, ps, f"{prefix}.ln2")
    ff = nm.matmul(h, ps[f"{prefix}.ff.w1"]) + ps[f"{prefix}.ff.b1"]
    ff = nm.matmul(nm.gelu(ff), ps[f"{prefix}.ff.w2"]) + ps[f"{prefix}.ff.b2"]
    return x + ff


def lstm_forward(x: Tensor, ps: ParamStore, prefix: str, hidden: int) -> Tensor:
    """Single-layer LSTM over (T, F) input; returns (T, hidden)."""
    T = x.data.shape[0]
    dtype = x.data.dtype
    gates_x = nm.matmul(x, ps[f"{prefix}.wx"]) + ps[f"{prefix}.b"]
    wh = ps[f"{prefix}.wh"]
    h = constant(np.zeros((1, hidden), dtype=dtype))
    c = constant(np.zeros((1, hidden), dtype=dtype))
    rows = []
    for t in range(T):
        z = nm.slc(gates_x, (slice(t, t + 1), slice(None))) + nm.matmul(h, wh)
        i = nm.sigmoid(nm.slc(z, (slice(None), slice(0, hidden))))
        f = nm.sigmoid(nm.slc(z, (slice(None), slice(hidden, 2 * hidden))))
        g = nm.tanh(nm.slc(z, (slice(None), slice(2 * hidden, 3 * hidden))))
        o = nm.sigmoid(nm.slc(z, (slice(None), slice(3 * hidden, 4 * hidden))))
        c = f * c + i * g
        h = o * nm.tanh(c)
        rows.append(h)
    return nm.concat(rows, axis=0)


# ---------------------------------------------------------------------------
# branches

def fan_forward(frames: Tensor, w_p: Tensor, w_pbar: Tensor, b: Tensor) -> Tensor:
    """concat(cos(x W_p), sin(x W_p), gelu(x W_pbar + b)) per frame."""
    if frames.data.shape[1] != w_p.data.shape[0]:
        raise ShapeError(
            f"fan_forward: frame dim {frames.data.shape} vs projection {w_p.data.shape}")
    proj = nm.matmul(frames, w_p)
    plain = nm.matmul(frames, w_pbar) + b
    return nm.concat([nm.cos(proj), nm.sin(proj), nm.gelu(plain)], axis=1)


def periodic_branch(samples: np.ndarray, ps: ParamStore, cfg: EncoderConfig,
                    window: int, hop: int, prefix: str = "encoder") -> FeatureSeq:
    """Framed raw signal -> FAN -> log(1+|.|) -> conv + max-pool -> project."""
    from .dsp import frame_signal

    frames_np = frame_signal(np.asarray(samples), window, hop)
    if frames_np.shape[0] < 4:
        raise ShapeError(f"signal yields only {frames_np.shape[0]} frames; need >= 4")
    frames = constant(frames_np.astype(ps.dtype))
    fan = fan_forward(frames, ps[f"{prefix}.fan.w_p"], ps[f"{prefix}.fan.w_pbar"],
                      ps[f"{prefix}.fan.b"])
    compressed = nm.log(nm.absolute(fan) + 1.0)
    conv = nm.conv1d(compressed, ps[f"{prefix}.conv.w"], ps[f"{prefix}.conv.b"])
    pooled = nm.max_pool_time(conv, size=2, stride=2)
    feat = nm.matmul(pooled, ps[f"{prefix}.per_proj.w"]) + ps[f"{prefix}.per_proj.b"]
    return FeatureSeq(feat, "periodic")


def aperiodic_branch(mel: np.ndarray, ps: ParamStore, cfg: EncoderConfig,
                     target_frames: int, prefix: str = "encoder") -> FeatureSeq:
    """Mel frames -> LSTM -> self-attention blocks -> align -> project."""
    D = cfg.feature_dim
    x = constant(np.asarray(mel, dtype=ps.dtype))
    h = lstm_forward(x, ps, f"{prefix}.lstm", D)
    h = h + constant(sinusoidal_encoding(h.data.shape[0], D, ps.dtype))
    for blk in range(cfg.enc_blocks):
        h = encoder_block(h, ps, f"{prefix}.tf{blk}", cfg.enc_heads)
    h = nm.pool_time_to(h, target_frames)
    feat = nm.matmul(h, ps[f"{prefix}.aper_proj.w"]) + ps[f"{prefix}.aper_proj.b"]
    return FeatureSeq(feat, "aperiodic")


# ---------------------------------------------------------------------------
# encoder-side losses

def periodicity_loss(seq: FeatureSeq, temperature: float = 0.1,
                     top_k: int = 4) -> Tensor:
    """Spread of intervals between soft autocorrelation peaks, scale-free.

    The per-frame channel mean is autocorrelated; around each of the top-k
    hard peaks a softmax-weighted expected lag is taken so the quantity stays
    differentiable.  With fewer than three peaks the loss is defined as 0.
    """
    feats = seq.features
    T = feats.data.shape[0]
    if T < 8:
        raise ShapeError(f"periodicity loss needs >= 8 frames, got {T}")
    dtype = feats.data.dtype
    profile = nm.reduce_mean(feats, axis=1)
    profile = profile - nm.reduce_mean(profile)
    r0 = nm.reduce_sum(nm.square(profile))
    if float(r0.data) <= 1e-20:
        return constant(np.asarray(0.0, dtype=dtype))
    lags = []
    for tau in range(1, T):
        head = nm.slc(profile, (slice(0, T - tau),))
        tail = nm.slc(profile, (slice(tau, T),))
        lags.append(nm.reshape(nm.reduce_sum(head * tail) / r0, (1,)))
    rho = nm.concat(lags, axis=0)  # lags 1 .. T-1
    rho_np = rho.data

    peak_idx = [i for i in range(1, T - 2)
                if rho_np[i] > rho_np[i - 1] and rho_np[i] >= rho_np[i + 1]]
    if len(peak_idx) < 3:
        return constant(np.asarray(0.0, dtype=dtype))
    by_height = sorted(peak_idx, key=lambda i: (-rho_np[i], i))
    chosen: list[int] = []
    for i in by_height:
        if all(abs(i - j) >= 2 for j in chosen):
            chosen.append(i)
        if len(chosen) == top_k:
            break
    if len(chosen) < 3:
        return constant(np.asarray(0.0, dtype=dtype))
    dominant_lag = chosen[0] + 1
    half = max(1, int(round(dominant_lag / 4)))
    chosen.sort()

    soft_lags = []
    for i in chosen:
        lo = max(0, i - half)
        hi = min(T - 1, i + half + 1)
        window = nm.slc(rho, (slice(lo, hi),))
        w = nm.softmax(window / temperature, axis=0)
        lag_values = constant(np.arange(lo + 1, hi + 1, dtype=dtype))
        soft_lags.append(nm.reshape(nm.reduce_sum(w * lag_values), (1,)))
    soft = nm.concat(soft_lags, axis=0)
    head = nm.slc(soft, (slice(0, len(chosen) - 1),))
    tail = nm.slc(soft, (slice(1, len(chosen)),))
    return interval_spread(tail - head)


def interval_spread(intervals: Tensor) -> Tensor:
    """Variance of the intervals over their squared mean.

    Dividing by the squared mean makes the quantity dimensionless: scaling
    every interval by the same factor leaves it unchanged.
    """
    mean_iv = nm.reduce_mean(intervals)
    var_iv = nm.reduce_mean(nm.square(intervals - mean_iv))
    return var_iv / nm.square(mean_iv)


def aperiodicity_loss(seq: FeatureSeq) -> Tensor:
    """Mean squared activation over all frames and channels."""
    return nm.reduce_mean(nm.square(seq.features))


def orthogonality_loss(per: FeatureSeq, aper: FeatureSeq) -> Tensor:
    """Squared normalized inner product of the time-pooled branch features."""
    if per.features.data.shape != aper.features.data.shape:
        raise ShapeError(
            f"orthogonality loss: shapes {per.features.data.shape} vs "
            f"{aper.features.data.shape} differ")
    u = nm.mean_pool_time(per.features)
    v = nm.mean_pool_time(aper.features)
    d = per.features.data.shape[1]
    return nm.square(nm.reduce_sum(u * v) / float(d))


def fuse(per: FeatureSeq, aper: FeatureSeq, p: float, tau: Tensor,
         alpha: float = 10.0, fixed_gate: float | None = None) -> FeatureSeq:
    """Blend branches with w = sigmoid(alpha * (p - tau)).

    Written as aper + w * (per - aper) so each fused entry provably stays
    inside the [min, max] envelope of the two branches in floating point.
    ``fixed_gate`` bypasses the sigmoid (ablation variant with constant w).
    """
    if per.features.data.shape != aper.features.data.shape:
        raise ShapeError(
            f"fuse: shapes {per.features.data.shape} vs {aper.features.data.shape} differ")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    dtype = per.features.data.dtype
    if fixed_gate is None:
        w = nm.sigmoid((constant(np.asarray(p, dtype=tau.data.dtype)) - tau) * alpha)
    else:
        w = constant(np.asarray(fixed_gate, dtype=dtype))
    fused = aper.features + w * (per.features - aper.features)
    return FeatureSeq(fused, "fused", gate=float(w.data), periodicity=float(p))
