import numpy as np
import pytest

from vibcap import numerics as nm
from vibcap.data import RESERVED, Vocab
from vibcap.dsp import DspConfig, MonoSignal, TriaxialSignal
from vibcap.model import CaptionModel, ModelConfig, micro_model
from vibcap.numerics import backward


def small_vocab(n=16):
    return Vocab(list(RESERVED) + [f"w{i}" for i in range(n - len(RESERVED))], {})


def test_config_rejects_dim_mismatch():
    from vibcap.decoder import DecoderConfig
    from vibcap.encoder import EncoderConfig

    with pytest.raises(ValueError):
        ModelConfig(encoder=EncoderConfig(feature_dim=64),
                    decoder=DecoderConfig(d_model=128))


def test_config_round_trip():
    cfg = ModelConfig()
    back = ModelConfig.from_dict(cfg.to_dict())
    assert back.to_dict() == cfg.to_dict()


def test_prepare_from_mono_and_triaxial():
    model, sample = micro_model()
    assert sample.frames >= 4
    assert 0.0 <= sample.periodicity <= 1.0

    rng = np.random.default_rng(0)
    t = np.arange(2500) / 2000
    x = np.sin(2 * np.pi * 90 * t)
    sig = TriaxialSignal(x, 0.5 * x, 0.1 * rng.normal(size=2500), 2000, id="tri")
    big = CaptionModel(ModelConfig(), small_vocab(), seed=0)
    s = big.prepare(sig, "dft321", category="G1")
    assert s.periodicity > 0.8
    assert s.mel.shape[1] == big.cfg.dsp.n_mels


def test_micro_model_runs_two_fused_frames():
    model, sample = micro_model()
    memory, per, aper = model.encode(sample, "full")
    assert memory.frames == 2
    assert per.frames == 2 and aper.frames == 2
    assert memory.kind == "fused"


def test_variant_memory_kinds():
    model, sample = micro_model()
    assert model.encode(sample, "periodic-only")[0].kind == "periodic"
    assert model.encode(sample, "aperiodic-only")[0].kind == "aperiodic"
    assert model.encode(sample, "no-fusion")[0].gate == 0.5
    with pytest.raises(ValueError):
        model.encode(sample, "bogus")


def test_gate_gradient_reaches_tau_through_pipeline():
    model, sample = micro_model()
    memory, _, _ = model.encode(sample, "full")
    loss = nm.reduce_mean(nm.square(memory.features))
    model.params.zero_grads()
    backward(loss)
    tau = model.params["fusion.tau"]
    assert tau.grad is not None


def test_caption_decodes_to_words():
    model, sample = micro_model()
    text = model.caption(sample)
    assert isinstance(text, str)
    for w in text.split():
        assert w in model.vocab.index


def test_float32_precision_mode():
    cfg = ModelConfig(precision="float32")
    model = CaptionModel(cfg, small_vocab(), seed=1)
    assert model.params["fusion.tau"].data.dtype == np.float32
    rng = np.random.default_rng(1)
    mono = MonoSignal(rng.normal(size=2500), 2000)
    sample = model.prepare(mono)
    memory, _, _ = model.encode(sample)
    assert memory.features.data.dtype == np.float32
