"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The end-to-end and
ablation criteria train real models and together take roughly 15-20 minutes
on a laptop-class CPU; everything else finishes in seconds.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from vibcap import numerics as nm
from vibcap.cli import build_retrieval_index, main, query_retrieval_index
from vibcap.data import SynthConfig, generate_corpus, load_manifest, tokenize
from vibcap.dsp import MonoSignal, TriaxialSignal, dft321, periodicity_score
from vibcap.encoder import (
    FeatureSeq,
    aperiodicity_loss,
    fuse,
    orthogonality_loss,
    periodicity_loss,
)
from vibcap.metrics import bleu_corpus, cider_corpus, evaluate_model, rouge_l_pair
from vibcap.model import CaptionModel, ModelConfig
from vibcap.numerics import Tensor, constant
from vibcap.training import (
    TrainConfig,
    load_checkpoint,
    resume,
    save_checkpoint,
    train,
    vocab_for_run,
)


def report(criterion: int, ok: bool, detail: str):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion} failed: {detail}"


# ---------------------------------------------------------------------------
# shared artifacts


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """Default-config corpus and training run (criteria 7, 10)."""
    root = tmp_path_factory.mktemp("reference")
    t0 = time.perf_counter()
    manifest = generate_corpus(SynthConfig(), root / "corpus")
    dataset = load_manifest(manifest)
    cfg = TrainConfig(seed=0)
    vocab = vocab_for_run(dataset, cfg)
    model = CaptionModel(ModelConfig(), vocab, seed=cfg.seed)
    ckpt, logs = train(model, dataset, cfg)
    train_minutes = (time.perf_counter() - t0) / 60
    ckpt_path = root / "model.vpac"
    save_checkpoint(ckpt, ckpt_path)
    scores = evaluate_model(model, dataset, "test").scores
    return {"manifest": manifest, "dataset": dataset, "model": model,
            "ckpt_path": ckpt_path, "scores": scores,
            "train_minutes": train_minutes, "logs": logs}


@pytest.fixture(scope="session")
def benchmark_corpus(tmp_path_factory):
    """Smaller corpus used by the seeded ablation grid (criterion 8)."""
    root = tmp_path_factory.mktemp("benchmark")
    manifest = generate_corpus(
        SynthConfig(materials=12, samples_per_material=8, seed=3), root)
    return load_manifest(manifest)


def train_and_score(dataset, variant, input_mode, seed):
    cfg = TrainConfig(epochs=30, batch_size=4, seed=seed,
                      variant=variant, input_mode=input_mode)
    model = CaptionModel(ModelConfig(), vocab_for_run(dataset, cfg), seed=seed)
    train(model, dataset, cfg)
    return evaluate_model(model, dataset, "test",
                          variant=variant, input_mode=input_mode).scores


# ---------------------------------------------------------------------------
# criterion 1: gradient gate


def test_criterion_1_gradient_gate():
    from vibcap.audit import (
        COMPOSITE_GATE,
        COMPOSITE_MIN_FRACTION,
        OP_GATE,
        composite_gradcheck,
        op_gradient_suite,
    )

    t0 = time.perf_counter()
    audits = op_gradient_suite(cases_per_op=100)
    worst = max(a.max_rel_err for a in audits)
    ops_ok = all(a.ok for a in audits)
    comp = composite_gradcheck()
    comp_ok = comp.passes(COMPOSITE_GATE, COMPOSITE_MIN_FRACTION)
    elapsed = time.perf_counter() - t0
    report(1, ops_ok and comp_ok and elapsed < 120,
           f"{len(audits)} ops worst {worst:.2e} (gate {OP_GATE:g}); composite "
           f"{comp.passed_fraction:.1%} of {comp.checked} coords under "
           f"{COMPOSITE_GATE:g}; runtime {elapsed:.1f}s < 120s")


# ---------------------------------------------------------------------------
# criterion 2: axis-fusion identities


def test_criterion_2_dft321_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.normal(size=2048)
    mono = dft321(TriaxialSignal(x, np.zeros_like(x), np.zeros_like(x), 2000))
    rms = float(np.sqrt(np.mean((mono.samples - x) ** 2)))
    single_ok = rms < 1e-9

    parseval_ok = True
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(64, 4000))
        sig = TriaxialSignal(rng.normal(size=n), rng.normal(size=n),
                             rng.normal(size=n), 2000)
        out = dft321(sig)
        total = sum(float(np.sum(a ** 2)) for a in (sig.x, sig.y, sig.z))
        rel = abs(float(np.sum(out.samples ** 2)) - total) / total
        worst = max(worst, rel)
        parseval_ok &= rel < 1e-6
    elapsed = time.perf_counter() - t0
    report(2, single_ok and parseval_ok and elapsed < 30,
           f"single-axis RMS {rms:.1e} < 1e-9; Parseval worst {worst:.1e} < 1e-6 "
           f"on 100 signals; runtime {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 3: periodicity separation


def test_criterion_3_periodicity_separation():
    sr, n = 2000, 2500
    sines, noises = [], []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        f = rng.uniform(30, 300)
        t = np.arange(n) / sr
        sines.append(periodicity_score(
            MonoSignal(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)), sr)).p)
        rng2 = np.random.default_rng(1000 + seed)
        noises.append(periodicity_score(MonoSignal(rng2.normal(size=n), sr)).p)
    ok = (min(sines) > 0.9 and max(noises) < 0.3 and min(sines) > max(noises))
    report(3, ok, f"min p(sine) {min(sines):.3f} > 0.9; "
                  f"max p(noise) {max(noises):.3f} < 0.3; full separation")


# ---------------------------------------------------------------------------
# criterion 4: gate analytics


def test_criterion_4_gate_analytics():
    rng = np.random.default_rng(4)
    per = FeatureSeq(constant(rng.normal(size=(6, 5))), "periodic")
    aper = FeatureSeq(constant(rng.normal(size=(6, 5))), "aperiodic")
    tau = Tensor(np.asarray(0.5), requires=True)

    exact_half = fuse(per, aper, 0.5, tau).gate == 0.5

    gates = [fuse(per, aper, p, tau).gate for p in np.linspace(0, 1, 1000)]
    monotone = all(b >= a for a, b in zip(gates, gates[1:]))

    envelope = True
    for trial in range(50):
        r = np.random.default_rng(trial)
        a = FeatureSeq(constant(r.normal(size=(4, 3))), "periodic")
        b = FeatureSeq(constant(r.normal(size=(4, 3))), "aperiodic")
        fused = fuse(a, b, float(r.uniform(0, 1)), tau)
        lo = np.minimum(a.features.data, b.features.data)
        hi = np.maximum(a.features.data, b.features.data)
        envelope &= bool(np.all(fused.features.data >= lo)
                         and np.all(fused.features.data <= hi))
    report(4, exact_half and monotone and envelope,
           "w(p=tau)=0.5 exactly; monotone on 1000-point grid; "
           "fused inside branch envelope (exact) on 50 trials")


# ---------------------------------------------------------------------------
# criterion 5: loss analytics


def test_criterion_5_loss_analytics():
    def train_features(period, frames=48, jitter=None, seed=0):
        v = np.zeros(frames)
        pos, rng = 0.0, np.random.default_rng(seed)
        while int(round(pos)) < frames:
            v[int(round(pos))] = 1.0
            pos += period if jitter is None else period * (1 + rng.uniform(-jitter, jitter))
        return FeatureSeq(constant(np.tile(v[:, None], (1, 4))), "periodic")

    equal = float(periodicity_loss(train_features(6)).data)
    jittered = float(periodicity_loss(train_features(6, jitter=0.2, seed=3)).data)
    aper_ones = float(aperiodicity_loss(
        FeatureSeq(constant(np.ones((7, 3))), "aperiodic")).data)
    u = FeatureSeq(constant(np.array([[1.0, 0.0], [1.0, 0.0]])), "periodic")
    v = FeatureSeq(constant(np.array([[0.0, 1.0], [0.0, 1.0]])), "aperiodic")
    ortho_zero = float(orthogonality_loss(u, v).data)
    ones = FeatureSeq(constant(np.ones((3, 4))), "periodic")
    ones2 = FeatureSeq(constant(np.ones((3, 4))), "aperiodic")
    ortho_one = float(orthogonality_loss(ones, ones2).data)

    ok = (equal <= 1e-6 and jittered > 0 and aper_ones == 1.0
          and ortho_zero == 0.0 and ortho_one == 1.0)
    report(5, ok, f"periodicity: equal {equal:.1e} <= 1e-6, jittered {jittered:.3f} > 0; "
                  f"aperiodicity(ones)={aper_ones}; ortho: {ortho_zero}, {ortho_one}")


# ---------------------------------------------------------------------------
# criterion 6: metric oracles


def test_criterion_6_metric_oracles():
    tol = 1e-6
    checks = []

    # 1. identity hypothesis: BLEU-1..4 = ROUGE-L = 1
    hyp = "the cat on the mat".split()
    scores = bleu_corpus([hyp], [[hyp]])
    checks.append(all(abs(scores[f"bleu{k}"] - 1.0) < tol for k in range(1, 5)))
    checks.append(abs(rouge_l_pair(hyp, hyp) - 1.0) < tol)

    # 2. brevity penalty: exp(1 - 5/2)
    s = bleu_corpus([["the", "cat"]], [[hyp]])
    checks.append(abs(s["bleu1"] - math.exp(1 - 5 / 2)) < tol)

    # 3. clipped unigrams: 1/4 with BP=1
    s = bleu_corpus([["the"] * 4], [[["the", "cat"]]])
    checks.append(abs(s["bleu1"] - 0.25) < tol)

    # 4. ROUGE-L hand case: LCS=2, R=1, P=2/3, beta=1.2
    b2 = 1.2 ** 2
    expected = (1 + b2) * 1.0 * (2 / 3) / (1.0 + b2 * (2 / 3))
    checks.append(abs(rouge_l_pair(list("abc"), list("ac")) - expected) < tol)

    # 5. CIDEr single-sample degenerate: 0
    cider_one, _ = cider_corpus([list("abcd")], [[list("abcd")]])
    checks.append(abs(cider_one) < tol)

    # 6. CIDEr disjoint two-sample, bigram-capable: 5.0
    cider_two, _ = cider_corpus([["a", "b"], ["c", "d"]],
                                [[["a", "b"]], [["c", "d"]]])
    checks.append(abs(cider_two - 5.0) < tol)

    # 7. disjoint hypothesis: BLEU-1 = 0
    s = bleu_corpus([["x", "y"]], [[["a", "b"]]])
    checks.append(s["bleu1"] == 0.0)

    report(6, all(checks),
           f"{sum(checks)}/{len(checks)} hand-computed metric cases matched to 1e-6")


# ---------------------------------------------------------------------------
# criterion 7: end-to-end desk run


def test_criterion_7_end_to_end(reference_run):
    scores = reference_run["scores"]
    minutes = reference_run["train_minutes"]
    ok = (minutes < 15 and scores["bleu1"] >= 0.8 and scores["cider"] >= 1.0)
    report(7, ok, f"default run: {minutes:.1f} min < 15; held-out BLEU-1 "
                  f"{scores['bleu1']:.4f} >= 0.8; CIDEr {scores['cider']:.4f} >= 1.0")


# ---------------------------------------------------------------------------
# criterion 8: ablation directionality


def test_criterion_8_ablation_directionality(benchmark_corpus):
    seeds = (0, 1, 2)
    cider = {}
    for variant in ("full", "periodic-only", "aperiodic-only"):
        for s in seeds:
            cider[(variant, "dft321", s)] = train_and_score(
                benchmark_corpus, variant, "dft321", s)["cider"]
    for mode in ("x-only", "y-only", "z-only"):
        for s in seeds:
            cider[("full", mode, s)] = train_and_score(
                benchmark_corpus, "full", mode, s)["cider"]

    def majority(pairs):
        return sum(a >= b for a, b in pairs) >= 2

    full = [cider[("full", "dft321", s)] for s in seeds]
    var_ok = all(majority(list(zip(full, [cider[(v, "dft321", s)] for s in seeds])))
                 for v in ("periodic-only", "aperiodic-only"))
    mode_ok = all(majority(list(zip(full, [cider[("full", m, s)] for s in seeds])))
                  for m in ("x-only", "y-only", "z-only"))
    detail = "; ".join(
        [f"full {np.mean(full):.3f}"]
        + [f"{v} {np.mean([cider[(v, 'dft321', s)] for s in seeds]):.3f}"
           for v in ("periodic-only", "aperiodic-only")]
        + [f"{m} {np.mean([cider[('full', m, s)] for s in seeds]):.3f}"
           for m in ("x-only", "y-only", "z-only")])
    report(8, var_ok and mode_ok,
           f"majority-of-3-seeds orderings hold on CIDEr ({detail})")


# ---------------------------------------------------------------------------
# criterion 9: determinism and persistence


def test_criterion_9_determinism_and_persistence(tmp_path):
    manifest = generate_corpus(SynthConfig(materials=6, samples_per_material=5,
                                           seed=13), tmp_path / "c")
    dataset = load_manifest(manifest)
    cfg = TrainConfig(epochs=3, batch_size=8, seed=1)

    def run(stop):
        model = CaptionModel(ModelConfig(), vocab_for_run(dataset, cfg), seed=cfg.seed)
        return model, *train(model, dataset, cfg, stop_after_steps=stop)

    _, _, logs_a = run(10)
    _, _, logs_b = run(10)
    identical = ([np.float64(l.total).tobytes() for l in logs_a]
                 == [np.float64(l.total).tobytes() for l in logs_b])

    model_h, ckpt5, logs_head = run(5)
    path = tmp_path / "step5.vpac"
    save_checkpoint(ckpt5, path)
    loaded = load_checkpoint(path)
    round_trip = all(loaded.params[name].data.tobytes()
                     == t.data.astype("<f4").tobytes()
                     for name, t in ckpt5.params)
    model_r, opt_r = resume(loaded)
    _, logs_tail = train(model_r, dataset, cfg, stop_after_steps=10,
                         optimizer=opt_r, start_step=5)
    stitched = ([np.float64(l.total).tobytes() for l in logs_head + logs_tail]
                == [np.float64(l.total).tobytes() for l in logs_a])
    report(9, identical and round_trip and stitched,
           "10-step trajectory bit-identical across runs; checkpoint round-trips "
           "bit-exactly; resumed steps 6-10 match the uninterrupted run")


# ---------------------------------------------------------------------------
# criterion 10: retrieval consistency


def test_criterion_10_retrieval_consistency(reference_run, tmp_path):
    index_dir = tmp_path / "index"
    build_retrieval_index(reference_run["ckpt_path"], reference_run["manifest"],
                          index_dir)
    payload = json.loads((index_dir / "index.json").read_text())
    total_tokens = 0
    consistent = True
    for sid, caption in payload["captions"].items():
        for tok in set(tokenize(caption)):
            total_tokens += 1
            hits = [h for h, _ in query_retrieval_index(index_dir, tok)]
            consistent &= sid in hits

    empty = query_retrieval_index(index_dir, "zzznope qqqmissing")
    rc = main(["retrieve", "--index", str(index_dir), "--query", "zzznope"])
    report(10, consistent and empty == [] and rc == 0,
           f"all {total_tokens} caption tokens retrieve their samples; "
           "zero-overlap query returns empty with exit 0")
