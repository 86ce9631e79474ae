"""End-to-end caption model: signal preparation, dual-branch encoding with
variant handling, and the decoder hook-up.

Per-sample DSP products (mono fusion, mel frames, periodicity score) are
computed once and cached in a PreparedSample; only the learned graph is
rebuilt every training step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import decoder as dec
from . import dsp
from . import encoder as enc
from . import numerics as nm
from .data import BOS, EOS, PAD, Vocab
from .dsp import DspConfig, MonoSignal, TriaxialSignal
from .encoder import EncoderConfig, FeatureSeq
from .decoder import DecoderConfig
from .numerics import ParamStore, Tensor

VARIANTS = ("full", "periodic-only", "aperiodic-only", "no-fusion")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    dsp: DspConfig = field(default_factory=DspConfig)
    precision: str = "float32"  # float64 for verification work

    def __post_init__(self):
        # the two halves meet at the memory interface and the analysis window
        if self.encoder.feature_dim != self.decoder.d_model:
            raise ValueError(
                f"feature_dim {self.encoder.feature_dim} must equal decoder "
                f"d_model {self.decoder.d_model}")
        self.encoder.frame_dim = self.dsp.window
        self.encoder.n_mels = self.dsp.n_mels

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_dict(self) -> dict:
        return {
            "encoder": vars(self.encoder).copy(),
            "decoder": vars(self.decoder).copy(),
            "dsp": vars(self.dsp).copy(),
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(encoder=EncoderConfig(**d["encoder"]),
                   decoder=DecoderConfig(**d["decoder"]),
                   dsp=DspConfig(**d["dsp"]),
                   precision=d["precision"])


@dataclass
class PreparedSample:
    """Signal-domain inputs for one sample, fixed for the whole run."""
    sample_id: str
    mono: np.ndarray
    mel: np.ndarray
    periodicity: float
    frames: int          # analysis frames of the mono signal
    category: str = ""


class CaptionModel:
    """Holds the parameter store and wires branches, gate, and decoder."""

    def __init__(self, cfg: ModelConfig, vocab: Vocab, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab
        self.params = ParamStore(seed=seed, dtype=cfg.dtype)
        enc.register_params(self.params, cfg.encoder)
        dec.register_params(self.params, len(vocab), cfg.decoder)

    def prepare(self, sig: TriaxialSignal | MonoSignal, input_mode: str = "dft321",
                sample_id: str = "", category: str = "") -> PreparedSample:
        if isinstance(sig, TriaxialSignal):
            mono = dsp.to_mono(sig, input_mode)
        else:
            mono = sig
        mel = dsp.mel_spectrogram(mono, self.cfg.dsp)
        score = dsp.periodicity_score(mono)
        return PreparedSample(
            sample_id=sample_id or getattr(sig, "id", ""),
            mono=mono.samples,
            mel=mel.data,
            periodicity=score.p,
            frames=mel.frames,
            category=category,
        )

    def encode(self, sample: PreparedSample, variant: str = "full"
               ) -> tuple[FeatureSeq, FeatureSeq | None, FeatureSeq | None]:
        """Returns (memory, periodic branch, aperiodic branch).

        Branch entries are None when the variant skips that branch entirely.
        """
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        ecfg = self.cfg.encoder
        dcfg = self.cfg.dsp
        per = aper = None
        if variant != "aperiodic-only":
            per = enc.periodic_branch(sample.mono, self.params, ecfg,
                                      dcfg.window, dcfg.hop)
        if variant != "periodic-only":
            target = per.frames if per is not None else -(-sample.frames // 2)
            aper = enc.aperiodic_branch(sample.mel, self.params, ecfg, target)
        if variant == "periodic-only":
            return per, per, None
        if variant == "aperiodic-only":
            return aper, None, aper
        if variant == "no-fusion":
            memory = enc.fuse(per, aper, sample.periodicity, self.params["fusion.tau"],
                              ecfg.alpha, fixed_gate=0.5)
        else:
            memory = enc.fuse(per, aper, sample.periodicity, self.params["fusion.tau"],
                              ecfg.alpha)
        return memory, per, aper

    def caption_loss(self, memory: FeatureSeq, reference_ids) -> Tensor:
        return dec.teacher_forced_loss(reference_ids, memory, self.params,
                                       self.cfg.decoder, pad_id=PAD)

    def generate_ids(self, sample: PreparedSample, variant: str = "full",
                     mode: str = "greedy", beam: int = 3) -> list[int]:
        memory, _, _ = self.encode(sample, variant)
        return dec.generate(memory, self.params, self.cfg.decoder,
                            BOS, EOS, mode=mode, beam=beam)

    def caption(self, sample: PreparedSample, variant: str = "full",
                mode: str = "greedy", beam: int = 3) -> str:
        ids = self.generate_ids(sample, variant, mode, beam)
        return " ".join(self.vocab.decode(ids))


def micro_model(vocab_size: int = 12, seed: int = 0, precision: str = "float64"
                ) -> tuple["CaptionModel", PreparedSample]:
    """Tiny configuration for gradient audits: width 8, 2 fused frames.

    The sample is synthesized so both branches, the gate, and the decoder all
    participate in the graph.
    """
    from .data import Vocab, RESERVED

    tokens = list(RESERVED) + [f"w{i}" for i in range(vocab_size - len(RESERVED))]
    vocab = Vocab(tokens, {})
    dsp_cfg = DspConfig(window=64, hop=32, n_mels=8, fmin=10.0)
    ecfg = EncoderConfig(frame_dim=64, fan_periodic=2, fan_plain=4,
                         conv_kernel=3, conv_channels=8, feature_dim=8,
                         n_mels=8, enc_blocks=1, enc_heads=2, enc_ff=16)
    dcfg = DecoderConfig(d_model=8, blocks=1, heads=2, ff=16, max_len=10)
    cfg = ModelConfig(encoder=ecfg, decoder=dcfg, dsp=dsp_cfg, precision=precision)
    model = CaptionModel(cfg, vocab, seed=seed)
    rng = np.random.default_rng(seed)
    t = np.arange(160) / 1000.0
    wave = np.sin(2 * np.pi * 100.0 * t) + 0.3 * rng.normal(size=160)
    sig = MonoSignal(wave, 1000)
    sample = model.prepare(sig, sample_id="micro")
    return model, sample
