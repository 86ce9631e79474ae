"""Composite objective, optimizer, training loop, and checkpointing.

The run is deterministic end to end: parameter initialization comes from the
seeded store, per-epoch sample order and the reference-caption rotation are
derived from (seed, epoch), and gradients are reduced in a fixed order.
Resuming from a checkpoint therefore reproduces the uninterrupted run
bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .data import DataError, Dataset, Vocab, build_vocab, split_captions, tokenize
from .encoder import aperiodicity_loss, orthogonality_loss, periodicity_loss
from .model import CaptionModel, ModelConfig, PreparedSample, VARIANTS
from .numerics import ParamStore, Tensor, backward

MAGIC = b"VPAC"
FORMAT_VERSION = 1

INPUT_MODES = ("dft321", "x-only", "y-only", "z-only", "mean")


class NumericalError(RuntimeError):
    """Non-finite quantity encountered during optimization."""


class CheckpointError(ValueError):
    """Checkpoint file malformed or inconsistent."""


@dataclass
class TrainConfig:
    lambda1: float = 0.1       # periodicity weight
    lambda2: float = 0.01      # aperiodicity weight
    lambda3: float = 0.1       # orthogonality weight
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    variant: str = "full"
    input_mode: str = "dft321"
    grad_clip: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    exclude_category: str | None = None

    def validate(self):
        for name, lam in (("lambda1", self.lambda1), ("lambda2", self.lambda2),
                          ("lambda3", self.lambda3)):
            if lam < 0:
                raise ValueError(f"{name} must be nonnegative, got {lam}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(
                f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")

    def to_dict(self) -> dict:
        return {k: v for k, v in vars(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class Checkpoint:
    version: int
    model_config: ModelConfig
    train_config: TrainConfig
    params: ParamStore
    vocab: Vocab
    step: int
    rng_state: dict

    def build_model(self) -> CaptionModel:
        model = CaptionModel(self.model_config, self.vocab, seed=self.train_config.seed)
        for name, tensor in model.params:
            if name not in self.params.entries:
                raise CheckpointError(f"checkpoint missing parameter {name!r}")
            loaded = self.params[name]
            if loaded.data.shape != tensor.data.shape:
                raise CheckpointError(
                    f"shape table disagrees on {name!r}: checkpoint "
                    f"{loaded.data.shape} vs model {tensor.data.shape}")
            tensor.data = loaded.data.astype(model.cfg.dtype)
        return model


# ---------------------------------------------------------------------------
# composite loss

def composite_loss(model: CaptionModel, batch: list[tuple[PreparedSample, list[int]]],
                   cfg: TrainConfig) -> tuple[Tensor, dict]:
    """Weighted sum of caption cross-entropy and the encoder regularizers.

    Each term is averaged over the batch.  The periodicity term is included
    only for sequences long enough to carry interval structure (>= 8 frames);
    shorter sequences contribute an exact zero, consistent with the loss's
    defined fallback when too few peaks exist.
    """
    if not batch:
        raise DataError("composite loss over an empty batch")
    ecfg = model.cfg.encoder
    use_per = cfg.variant != "aperiodic-only"
    use_aper = cfg.variant != "periodic-only"
    ce_sum = lp_sum = la_sum = lo_sum = None

    def acc(total, term):
        return term if total is None else total + term

    for sample, ref_ids in batch:
        memory, per, aper = model.encode(sample, cfg.variant)
        ce_sum = acc(ce_sum, model.caption_loss(memory, ref_ids))
        if use_per and cfg.lambda1 > 0 and per.frames >= 8:
            lp_sum = acc(lp_sum, periodicity_loss(per, ecfg.peak_temperature,
                                                  ecfg.peak_top_k))
        if use_aper and cfg.lambda2 > 0:
            la_sum = acc(la_sum, aperiodicity_loss(aper))
        if use_per and use_aper and cfg.lambda3 > 0:
            lo_sum = acc(lo_sum, orthogonality_loss(per, aper))

    n = float(len(batch))
    total = ce_sum / n
    breakdown = {"ce": float(total.data), "periodicity": 0.0,
                 "aperiodicity": 0.0, "orthogonality": 0.0}
    if lp_sum is not None:
        term = lp_sum / n
        breakdown["periodicity"] = float(term.data)
        total = total + term * cfg.lambda1
    if la_sum is not None:
        term = la_sum / n
        breakdown["aperiodicity"] = float(term.data)
        total = total + term * cfg.lambda2
    if lo_sum is not None:
        term = lo_sum / n
        breakdown["orthogonality"] = float(term.data)
        total = total + term * cfg.lambda3
    breakdown["total"] = float(total.data)
    return total, breakdown


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adaptive-moment gradient descent with global-norm clipping."""

    def __init__(self, params: ParamStore, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {name: np.zeros_like(t.data) for name, t in params}
        self.v = {name: np.zeros_like(t.data) for name, t in params}
        self.t = 0

    def clip_gradients(self) -> float:
        """Scale all gradients so the global norm stays within the bound."""
        total = 0.0
        for _, tensor in self.params:
            if tensor.grad is not None:
                total += float(np.sum(tensor.grad.astype(np.float64) ** 2))
        norm = float(np.sqrt(total))
        bound = self.cfg.grad_clip
        if bound > 0 and norm > bound:
            scale = (bound / norm)
            for _, tensor in self.params:
                if tensor.grad is not None:
                    tensor.grad *= tensor.data.dtype.type(scale)
        return norm

    def step(self):
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, tensor in self.params:
            g = tensor.grad
            if g is None:
                continue
            dt = tensor.data.dtype.type
            m = self.m[name]
            v = self.v[name]
            m *= dt(c.beta1)
            m += dt(1.0 - c.beta1) * g
            v *= dt(c.beta2)
            v += dt(1.0 - c.beta2) * (g * g)
            mhat = m / dt(bc1)
            vhat = v / dt(bc2)
            tensor.data -= dt(c.learning_rate) * mhat / (np.sqrt(vhat) + dt(c.adam_eps))


# ---------------------------------------------------------------------------
# training loop

@dataclass
class StepLog:
    step: int
    epoch: int
    total: float
    ce: float
    periodicity: float
    aperiodicity: float
    orthogonality: float
    grad_norm: float
    ortho_overlap: float  # mean |<u,v>|/D across the batch, for trend checks


def prepare_training_samples(model: CaptionModel, dataset: Dataset,
                             cfg: TrainConfig) -> list[tuple[PreparedSample, list[list[int]]]]:
    """DSP products plus the five encoded references per training sample."""
    out = []
    for rec in dataset.split("train"):
        if cfg.exclude_category and rec.category == cfg.exclude_category:
            continue
        sig = dataset.load_signal(rec)
        sample = model.prepare(sig, cfg.input_mode, sample_id=rec.id,
                               category=rec.category)
        refs = [model.vocab.encode(tokenize(c)) for c in rec.captions]
        out.append((sample, refs))
    if not out:
        raise DataError("training split is empty")
    return out


def _mean_overlap(model: CaptionModel, batch, variant: str) -> float:
    """Mean |<u, v>| / D over the batch (monitors branch decorrelation)."""
    if variant in ("periodic-only", "aperiodic-only"):
        return 0.0
    vals = []
    for sample, _ in batch:
        _, per, aper = model.encode(sample, variant)
        u = per.features.data.mean(axis=0)
        v = aper.features.data.mean(axis=0)
        vals.append(abs(float(u @ v)) / u.size)
    return float(np.mean(vals))


def train(model: CaptionModel, dataset: Dataset, cfg: TrainConfig,
          stop_after_steps: int | None = None, optimizer: Adam | None = None,
          start_step: int = 0, log_overlap: bool = False,
          progress=None) -> tuple[Checkpoint, list[StepLog]]:
    """Run (or resume) optimization; returns the final state and step logs.

    Epoch ordering and the rotation through the five reference captions are
    pure functions of (seed, epoch), so a resumed run retraces the original
    step sequence exactly.
    """
    cfg.validate()
    samples = prepare_training_samples(model, dataset, cfg)
    n = len(samples)
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    opt = optimizer or Adam(model.params, cfg)
    opt.t = start_step
    logs: list[StepLog] = []
    step = start_step
    while step < total_steps:
        if stop_after_steps is not None and step >= stop_after_steps:
            break
        epoch = step // steps_per_epoch
        batch_idx = step % steps_per_epoch
        order = np.random.default_rng((cfg.seed, epoch)).permutation(n)
        ref_pick = epoch % 5
        sel = order[batch_idx * cfg.batch_size:(batch_idx + 1) * cfg.batch_size]
        batch = [(samples[i][0], samples[i][1][ref_pick]) for i in sel]
        model.params.zero_grads()
        loss, breakdown = composite_loss(model, batch, cfg)
        if not np.isfinite(breakdown["total"]):
            raise NumericalError(
                f"non-finite loss at step {step}: {breakdown}")
        backward(loss)
        grad_norm = opt.clip_gradients()
        opt.step()
        step += 1
        overlap = _mean_overlap(model, batch, cfg.variant) if log_overlap else 0.0
        logs.append(StepLog(step, epoch, breakdown["total"], breakdown["ce"],
                            breakdown["periodicity"], breakdown["aperiodicity"],
                            breakdown["orthogonality"], grad_norm, overlap))
        if progress is not None:
            progress(logs[-1], total_steps)
    ckpt = Checkpoint(FORMAT_VERSION, model.cfg, cfg, _store_with_moments(model, opt),
                      model.vocab, step, model.params.rng_state())
    return ckpt, logs


def _store_with_moments(model: CaptionModel, opt: Adam) -> ParamStore:
    """Parameters plus optimizer moments, in shape-table order."""
    store = ParamStore(seed=model.params.seed, dtype=model.params.dtype)
    for name, tensor in model.params:
        store._register(name, tensor.data.copy())
    for name, _ in model.params:
        store._register(f"optim.m.{name}", opt.m[name].copy())
    for name, _ in model.params:
        store._register(f"optim.v.{name}", opt.v[name].copy())
    return store


def resume(ckpt: Checkpoint) -> tuple[CaptionModel, Adam]:
    """Rebuild the model and optimizer state captured in a checkpoint."""
    model = ckpt.build_model()
    opt = Adam(model.params, ckpt.train_config)
    for name, _ in model.params:
        m_name, v_name = f"optim.m.{name}", f"optim.v.{name}"
        if m_name in ckpt.params.entries:
            opt.m[name] = ckpt.params[m_name].data.astype(model.cfg.dtype)
            opt.v[name] = ckpt.params[v_name].data.astype(model.cfg.dtype)
    opt.t = ckpt.step
    return model, opt


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout: magic 'VPAC' | version u32 LE | header-length u32 LE | header JSON
# (configs, vocabulary, shape table with per-entry sha256) | raw float32 LE
# payloads in shape-table order.

def save_checkpoint(ckpt: Checkpoint, path):
    path = Path(path)
    shape_table = {}
    payloads = []
    for name, tensor in ckpt.params:
        raw = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
        shape_table[name] = {
            "dims": list(tensor.data.shape),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }
        payloads.append(raw)
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
        "vocab": ckpt.vocab.to_dict(),
        "step": ckpt.step,
        "rng_state": _encode_rng(ckpt.rng_state),
        "shape_table": shape_table,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        head = fh.read(8)
        if len(head) < 8:
            raise CheckpointError(f"{path}: truncated before header")
        version, hlen = struct.unpack("<II", head)
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
        blob = fh.read(hlen)
        if len(blob) < hlen:
            raise CheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt header ({e})") from None
        model_cfg = ModelConfig.from_dict(header["model_config"])
        train_cfg = TrainConfig.from_dict(header["train_config"])
        store = ParamStore(seed=train_cfg.seed, dtype=np.float32)
        for name, meta in header["shape_table"].items():
            dims = tuple(int(d) for d in meta["dims"])
            count = int(np.prod(dims)) if dims else 1
            raw = fh.read(4 * count)
            if len(raw) < 4 * count:
                raise CheckpointError(
                    f"{path}: payload truncated while reading {name!r}")
            if hashlib.sha256(raw).hexdigest() != meta["sha256"]:
                raise CheckpointError(
                    f"{path}: payload digest mismatch for {name!r} "
                    f"(shape table edited or data corrupted)")
            arr = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
            store._register(name, arr)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"{path}: trailing bytes after final payload")
    return Checkpoint(version, model_cfg, train_cfg, store,
                      Vocab.from_dict(header["vocab"]), int(header["step"]),
                      _decode_rng(header["rng_state"]))


def _encode_rng(state: dict) -> dict:
    # PCG64 state holds 128-bit ints; stringify for JSON round-tripping
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, int):
            return str(v)
        return v

    return conv(state)


def _decode_rng(state: dict) -> dict:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, str) and v.lstrip("-").isdigit():
            return int(v)
        return v

    return conv(state)


def vocab_for_run(dataset: Dataset, cfg: TrainConfig) -> Vocab:
    """Vocabulary over the run's effective train/eval caption splits."""
    if cfg.exclude_category:
        train = [c for r in dataset.records
                 if r.split == "train" and r.category != cfg.exclude_category
                 for c in r.captions]
        test = [c for r in dataset.records if r.category == cfg.exclude_category
                for c in r.captions]
        if not train or not test:
            raise DataError(
                f"hold-out split for category {cfg.exclude_category!r} is empty")
        return build_vocab(train, test)
    return build_vocab(*split_captions(dataset))
