"""Corpus model: tokenizer, filtered vocabulary, manifest handling, and a
deterministic synthetic generator of paired vibration/caption data.

The generator stands in for real captured corpora (which cannot be shipped
here); its manifest and signal files double as the ingestion format for
externally recorded data.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SignalError, TriaxialSignal, load_signal_csv, save_signal_csv


class DataError(ValueError):
    """Malformed corpus data: manifests, captions, splits."""


PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

CAPTION_PREFIX = "this material surface"
MAX_CAPTION_WORDS = 15

COLOR_TERMS = frozenset({
    "red", "orange", "yellow", "green", "blue", "purple", "violet", "pink",
    "brown", "black", "white", "gray", "grey", "golden", "silver", "beige",
    "tan", "crimson", "scarlet", "teal", "cyan", "magenta", "maroon", "navy",
})

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


def tokenize(caption: str) -> list[str]:
    """Lowercase, strip punctuation except intra-word hyphens, split."""
    return _TOKEN_RE.findall(caption.lower())


# ---------------------------------------------------------------------------
# vocabulary

@dataclass
class Vocab:
    tokens: list[str]                       # index = id; starts with RESERVED
    frequencies: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def encode(self, words: list[str]) -> list[int]:
        return [BOS] + [self.index.get(w, UNK) for w in words] + [EOS]

    def decode(self, ids) -> list[str]:
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.tokens[i])
        return out

    def to_dict(self) -> dict:
        return {"tokens": self.tokens, "frequencies": self.frequencies}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["tokens"]), dict(d["frequencies"]))


def build_vocab(train_captions: list[str], test_captions: list[str]) -> Vocab:
    """Frequency-ranked vocabulary with singleton filtering.

    A token survives only if it occurs at least twice in the whole corpus and
    at least once in each split; everything else encodes to the unknown id.
    Ids are assigned by descending corpus frequency, ties lexicographic.
    """
    if not train_captions or not test_captions:
        raise DataError("both splits must be non-empty to build a vocabulary")
    train_counts = Counter(w for c in train_captions for w in tokenize(c))
    test_counts = Counter(w for c in test_captions for w in tokenize(c))
    total = train_counts + test_counts
    kept = [w for w, n in total.items()
            if n >= 2 and train_counts[w] >= 1 and test_counts[w] >= 1]
    kept.sort(key=lambda w: (-total[w], w))
    tokens = list(RESERVED) + kept
    return Vocab(tokens, {w: int(total[w]) for w in kept})


# ---------------------------------------------------------------------------
# manifest records

@dataclass
class CaptionRecord:
    id: str
    signal_path: str
    category: str
    split: str
    captions: list[str]


@dataclass
class Dataset:
    records: list[CaptionRecord]
    root: Path

    def split(self, name: str) -> list[CaptionRecord]:
        return [r for r in self.records if r.split == name]

    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})

    def resolve(self, rec: CaptionRecord) -> Path:
        return self.root / rec.signal_path

    def load_signal(self, rec: CaptionRecord) -> TriaxialSignal:
        sig = load_signal_csv(self.resolve(rec))
        if not isinstance(sig, TriaxialSignal):
            raise DataError(f"{rec.id}: expected a 3-column signal file")
        return sig


def caption_violations(caption: str) -> list[str]:
    words = tokenize(caption)
    problems = []
    if len(words) > MAX_CAPTION_WORDS:
        problems.append(f"{len(words)} words exceeds {MAX_CAPTION_WORDS}")
    if words[:3] != CAPTION_PREFIX.split():
        problems.append(f"does not start with {CAPTION_PREFIX!r}")
    hits = sorted(set(words) & COLOR_TERMS)
    if hits:
        problems.append("color terms: " + ", ".join(hits))
    return problems


def validate_manifest(path) -> tuple[list[str], list[str]]:
    """Check a manifest; returns (errors, warnings).

    Structural problems (missing files, bad CSV, wrong caption count, bad
    split tags) are errors; caption-constraint violations are warnings so
    externally produced captions still load.
    """
    path = Path(path)
    errors: list[str] = []
    warnings: list[str] = []
    if not path.exists():
        return [f"manifest not found: {path}"], warnings
    root = path.parent
    seen_ids = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                errors.append(f"line {lineno}: invalid JSON ({e})")
                continue
            missing = [k for k in ("id", "signal_path", "category", "split", "captions")
                       if k not in rec]
            if missing:
                errors.append(f"line {lineno}: missing fields {missing}")
                continue
            sid = rec["id"]
            if sid in seen_ids:
                errors.append(f"{sid}: duplicate sample id")
            seen_ids.add(sid)
            if rec["split"] not in ("train", "test"):
                errors.append(f"{sid}: split must be train or test, got {rec['split']!r}")
            caps = rec["captions"]
            if not isinstance(caps, list) or len(caps) != 5:
                errors.append(f"{sid}: expected 5 captions, got "
                              f"{len(caps) if isinstance(caps, list) else type(caps).__name__}")
                caps = caps if isinstance(caps, list) else []
            sig_path = root / rec["signal_path"]
            if not sig_path.exists():
                errors.append(f"{sid}: signal file missing: {sig_path}")
            else:
                try:
                    load_signal_csv(sig_path)
                except SignalError as e:
                    errors.append(f"{sid}: {e}")
            for ci, cap in enumerate(caps):
                for prob in caption_violations(cap):
                    warnings.append(f"{sid} caption {ci}: {prob}")
    return errors, warnings


def load_manifest(path) -> Dataset:
    path = Path(path)
    errors, _ = validate_manifest(path)
    if errors:
        raise DataError(f"manifest {path} invalid:\n" + "\n".join(errors[:20]))
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            records.append(CaptionRecord(d["id"], d["signal_path"], d["category"],
                                         d["split"], list(d["captions"])))
    return Dataset(records, path.parent)


# ---------------------------------------------------------------------------
# synthetic corpus

@dataclass
class SynthConfig:
    materials: int = 40
    samples_per_material: int = 10
    sample_rate: int = 2000
    duration: float = 1.25
    class_mix: tuple[str, ...] = ("periodic", "aperiodic", "mixed")
    seed: int = 7

    def validate(self):
        if self.materials < 1:
            raise DataError(f"materials must be positive, got {self.materials}")
        if self.samples_per_material < 1:
            raise DataError(
                f"samples_per_material must be positive, got {self.samples_per_material}")
        if self.sample_rate < 100:
            raise DataError(f"sample_rate too low: {self.sample_rate}")
        bad = [c for c in self.class_mix if c not in ("periodic", "aperiodic", "mixed")]
        if bad:
            raise DataError(f"unknown classes in class_mix: {bad}")
        if not self.class_mix:
            raise DataError("class_mix must name at least one class")
        n = int(self.duration * self.sample_rate)
        if n < 1024:
            raise DataError(
                f"duration too short: {n} samples; need >= 1024 for analysis windows")


# five captions per texture group; all start with the fixed prefix, stay
# under the word cap, and avoid color vocabulary.  Periodic groups split on
# ridge pitch and on crest shape: sharp crests come from phase-aligned
# harmonics, rounded crests from the same harmonic powers with scrambled
# phases, so the two are indistinguishable in power spectra alone.
CAPTION_BANK: dict[str, list[str]] = {
    "periodic-coarse-sharp": [
        "This material surface has coarse sharply cut ridges with crisp clicking edges.",
        "This material surface feels like broad ridges whose sharp crests snap under the fingertip.",
        "This material surface shows widely spaced ridges with hard sharp edges repeating slowly.",
        "This material surface carries slow heavy ridges with abrupt sharply peaked crests.",
        "This material surface presents a coarse ridge pattern with crisp sharply defined peaks.",
    ],
    "periodic-coarse-round": [
        "This material surface has coarse rounded ridges with mellow evenly curved crests.",
        "This material surface feels like broad undulations rolling slowly under the fingertip.",
        "This material surface shows widely spaced rounded ridges with an even curved profile.",
        "This material surface carries slow broad waves with mellow rounded crests.",
        "This material surface presents a coarse undulating pattern of curved gradual swells.",
    ],
    "periodic-fine-sharp": [
        "This material surface has fine narrow ridges with crisp sharply cut edges.",
        "This material surface feels like dense tiny ridges whose sharp crests prickle quickly.",
        "This material surface shows closely spaced fine ridges with hard sharp peaks.",
        "This material surface carries rapid narrow ridges with abrupt crisply peaked edges.",
        "This material surface presents a fine ridge pattern with sharp precisely defined crests.",
    ],
    "periodic-fine-round": [
        "This material surface has fine rounded ridges with mellow evenly curved tops.",
        "This material surface feels like dense gentle ripples flowing quickly under the fingertip.",
        "This material surface shows closely spaced fine ripples with an even curved profile.",
        "This material surface carries rapid narrow ripples with mellow rounded tops.",
        "This material surface presents a fine rippled pattern of curved gradual waves.",
    ],
    "aperiodic-smooth": [
        "This material surface feels smooth and soft with only faint irregular texture.",
        "This material surface has a smooth gentle finish with weak random variation.",
        "This material surface shows a soft even texture without any repeating pattern.",
        "This material surface carries a smooth muted grain with mild irregular fluctuations.",
        "This material surface presents a gentle smooth feel with low random roughness.",
    ],
    "aperiodic-rough": [
        "This material surface feels rough and uneven with random bumps across it.",
        "This material surface has an irregular rough grain without any repeating structure.",
        "This material surface shows a jagged random texture with uneven scattered bumps.",
        "This material surface carries a rough unpredictable grain with scattered irregular bumps.",
        "This material surface presents an uneven rough feel with no steady rhythm.",
    ],
    "aperiodic-gritty": [
        "This material surface feels gritty and sharp with a harsh sandy texture.",
        "This material surface has a gritty abrasive grain like loose fine sand.",
        "This material surface shows a harsh granular texture with sharp tiny particles.",
        "This material surface carries a sandy gritty roughness with crisp random crackle.",
        "This material surface presents a sharp abrasive feel with dense gritty grains.",
    ],
    "mixed-coarse": [
        "This material surface mixes coarse widely spaced ridges with a grainy irregular background.",
        "This material surface has slow broad ridges blended with random surface grain.",
        "This material surface shows coarse periodic ridges beneath a layer of irregular texture.",
        "This material surface carries wide ridges together with scattered grainy irregularities.",
        "This material surface presents a slow ridge rhythm mixed with random grain.",
    ],
    "mixed-medium": [
        "This material surface mixes evenly spaced medium ridges with a grainy irregular background.",
        "This material surface has moderate ridges blended with random surface grain.",
        "This material surface shows medium periodic ridges beneath a layer of irregular texture.",
        "This material surface carries moderate ridges together with scattered grainy irregularities.",
        "This material surface presents a moderate ridge rhythm mixed with random grain.",
    ],
    "mixed-fine": [
        "This material surface mixes fine dense ridges with a grainy irregular background.",
        "This material surface has rapid narrow ridges blended with random surface grain.",
        "This material surface shows fine periodic ridges beneath a layer of irregular texture.",
        "This material surface carries fine ridges together with scattered grainy irregularities.",
        "This material surface presents a rapid ridge rhythm mixed with random grain.",
    ],
}

GROUP_IDS = {name: f"G{i + 1}" for i, name in enumerate(CAPTION_BANK)}


# parameters are drawn per SAMPLE within the material's bucket, so a sample's
# exact fundamental or tilt identifies its texture class but never the
# individual material
PERIODIC_BUCKETS = {"coarse": (30.0, 140.0), "fine": (160.0, 300.0)}
MIXED_BUCKETS = {"coarse": (30.0, 105.0), "medium": (115.0, 195.0),
                 "fine": (205.0, 300.0)}
TILT_BUCKETS = {"smooth": (-0.75, -0.3), "rough": (-0.2, 0.2),
                "gritty": (0.3, 0.75)}


def _fundamental_bucket(f: float) -> str:
    return "coarse" if f < 150.0 else "fine"


def _mixed_bucket(f: float) -> str:
    if f < 110.0:
        return "coarse"
    if f < 200.0:
        return "medium"
    return "fine"


def _tilt_bucket(tilt: float) -> str:
    if tilt < -0.25:
        return "smooth"
    if tilt <= 0.25:
        return "rough"
    return "gritty"


def _harmonic_amplitudes(f: float, sr: int, max_harmonics: int = 6) -> np.ndarray:
    count = max(1, min(max_harmonics, int(0.45 * sr / f)))
    return 1.0 / np.arange(1, count + 1)


def _periodic_wave(rng, f: float, n: int, sr: int, crest: str = "round") -> np.ndarray:
    """Harmonic stack at f.  'sharp' aligns harmonic phases (pulse-like
    crests); 'round' scrambles them.  Power spectra are identical either way.
    """
    t = np.arange(n) / sr
    amps = _harmonic_amplitudes(f, sr)
    wave = np.zeros(n)
    t0 = rng.uniform(0.0, 1.0 / f)
    for h, amp in enumerate(amps, start=1):
        if crest == "sharp":
            phase = -2 * np.pi * h * f * t0  # common time shift only
        else:
            phase = rng.uniform(0, 2 * np.pi)
        wave += amp * np.cos(2 * np.pi * f * h * t + phase)
    wave /= np.sqrt(np.mean(wave ** 2))
    # noise floor sits well above spectrogram-leakage level of crest shape but
    # well below the pulse peaks, so crest stays a waveform-domain cue
    return wave + 0.15 * rng.normal(size=n)


def _tilted_noise(rng, tilt: float, n: int, sr: int) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(size=n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    band = (freqs >= 10.0) & (freqs <= 0.45 * sr)
    env = np.zeros_like(freqs)
    ref = 0.1 * sr
    env[band] = (freqs[band] / ref) ** tilt
    out = np.fft.irfft(spec * env, n=n)
    return out / np.sqrt(np.mean(out ** 2))


@dataclass
class MaterialSpec:
    index: int
    klass: str
    group: str
    freq_bucket: str
    tilt_bucket: str
    mix: float
    crest: str


def _plan_materials(cfg: SynthConfig) -> list[MaterialSpec]:
    specs = []
    n_periodic_seen = 0
    for m in range(cfg.materials):
        rng = np.random.default_rng((cfg.seed, m))
        klass = cfg.class_mix[m % len(cfg.class_mix)]
        coarse_fine = _fundamental_bucket(float(rng.uniform(30.0, 300.0)))
        mixed_bucket = _mixed_bucket(float(rng.uniform(30.0, 300.0)))
        tilt_bucket = _tilt_bucket(float(rng.uniform(-0.75, 0.75)))
        mix = float(rng.uniform(0.4, 0.6))
        crest = "round"
        freq_bucket = ""
        if klass == "periodic":
            # alternate crest within the class so both shapes stay represented
            crest = "sharp" if n_periodic_seen % 2 == 0 else "round"
            n_periodic_seen += 1
            freq_bucket = coarse_fine
            group = f"periodic-{freq_bucket}-{crest}"
            tilt_bucket = ""
        elif klass == "aperiodic":
            group = f"aperiodic-{tilt_bucket}"
        else:
            freq_bucket = mixed_bucket
            group = f"mixed-{freq_bucket}"
            tilt_bucket = ""
        specs.append(MaterialSpec(m, klass, group, freq_bucket, tilt_bucket,
                                  mix, crest))
    return specs


def _render_sample(spec: MaterialSpec, cfg: SynthConfig, sample_idx: int) -> TriaxialSignal:
    rng = np.random.default_rng((cfg.seed, spec.index, sample_idx))
    n = int(cfg.duration * cfg.sample_rate)
    sr = cfg.sample_rate
    f = spec.fundamental * (1.0 + 0.01 * rng.normal())
    if spec.klass == "periodic":
        mono = _periodic_wave(rng, f, n, sr, spec.crest)
    elif spec.klass == "aperiodic":
        mono = _tilted_noise(rng, spec.tilt, n, sr)
    else:
        mono = spec.mix * _periodic_wave(rng, f, n, sr, "sharp") + \
            (1.0 - spec.mix) * _tilted_noise(rng, spec.tilt, n, sr)
    # sensor orientation varies per sample; a single axis can land near the
    # null of the projection, which is exactly what axis fusion recovers from
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    rms = float(np.sqrt(np.mean(mono ** 2)))
    axes = [u[i] * mono + 0.15 * rms * rng.normal(size=n) for i in range(3)]
    return TriaxialSignal(axes[0], axes[1], axes[2], sr,
                          id=f"m{spec.index:03d}_s{sample_idx:02d}")


def generate_corpus(cfg: SynthConfig, out_dir) -> Path:
    """Write signals and a JSON-lines manifest; returns the manifest path.

    Deterministic per seed: per-material and per-sample generator streams are
    derived from (seed, material, sample), so output bytes never depend on
    generation order.  The split is stratified per material at 7:3.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    sig_dir = out_dir / "signals"
    sig_dir.mkdir(parents=True, exist_ok=True)
    specs = _plan_materials(cfg)
    n_train = int(round(cfg.samples_per_material * 0.7))
    lines = []
    for spec in specs:
        captions = CAPTION_BANK[spec.group]
        for s in range(cfg.samples_per_material):
            sig = _render_sample(spec, cfg, s)
            rel = f"signals/{sig.id}.csv"
            save_signal_csv(out_dir / rel, sig)
            record = {
                "id": sig.id,
                "signal_path": rel,
                "category": GROUP_IDS[spec.group],
                "split": "train" if s < n_train else "test",
                "captions": captions,
            }
            lines.append(json.dumps(record))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def split_captions(dataset: Dataset) -> tuple[list[str], list[str]]:
    train = [c for r in dataset.split("train") for c in r.captions]
    test = [c for r in dataset.split("test") for c in r.captions]
    return train, test
