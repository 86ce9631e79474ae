"""Signal-domain preprocessing for triaxial vibration records.

Covers the spectral axis fusion that collapses three acceleration axes into
one perceptually equivalent channel, short-time mel analysis, normalized
autocorrelation, and the scalar periodicity score that later drives the
feature-fusion gate.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks


class SignalError(ValueError):
    """Malformed or inconsistent signal data."""


MONO_MODES = ("dft321", "x-only", "y-only", "z-only", "mean")


@dataclass
class TriaxialSignal:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        if not (len(self.x) == len(self.y) == len(self.z)):
            raise SignalError(
                f"axis length mismatch: x={len(self.x)} y={len(self.y)} z={len(self.z)}")
        if len(self.x) == 0:
            raise SignalError("empty signal")
        if self.sample_rate <= 0:
            raise SignalError(f"sample_rate must be positive, got {self.sample_rate}")
        for name, a in (("x", self.x), ("y", self.y), ("z", self.z)):
            if not np.all(np.isfinite(a)):
                raise SignalError(f"axis {name} contains non-finite samples")

    def __len__(self):
        return len(self.x)


@dataclass
class MonoSignal:
    samples: np.ndarray
    sample_rate: int
    source_mode: str = "dft321"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.source_mode not in MONO_MODES:
            raise SignalError(f"unknown source mode {self.source_mode!r}")

    def __len__(self):
        return len(self.samples)


@dataclass
class DspConfig:
    window: int = 256
    hop: int = 128
    n_mels: int = 64
    fmin: float = 10.0
    fmax: float | None = None  # None = Nyquist

    def resolve_fmax(self, sample_rate: int) -> float:
        return self.fmax if self.fmax is not None else sample_rate / 2.0


@dataclass
class MelSpectrogram:
    data: np.ndarray  # (frames, n_mels), log-compressed energies
    frame_rate: float
    config: DspConfig

    @property
    def frames(self) -> int:
        return self.data.shape[0]


@dataclass
class PeriodicityScore:
    p: float
    dominant_lag: int
    peak_lags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


# ---------------------------------------------------------------------------
# axis fusion

def dft321(sig: TriaxialSignal) -> MonoSignal:
    """Collapse three axes into one channel in the spectral domain.

    Per frequency bin the output magnitude is the root sum of squares of the
    three axis magnitudes, and the phase is the phase of the spectral sum, so
    the total energy of the result equals the summed axis energies.
    """
    n = len(sig)
    X = np.fft.rfft(sig.x)
    Y = np.fft.rfft(sig.y)
    Z = np.fft.rfft(sig.z)
    mag = np.sqrt(np.abs(X) ** 2 + np.abs(Y) ** 2 + np.abs(Z) ** 2)
    s = X + Y + Z
    sabs = np.abs(s)
    unit = np.where(sabs > 0, s / np.where(sabs > 0, sabs, 1.0), 1.0)
    samples = np.fft.irfft(mag * unit, n=n)
    return MonoSignal(samples, sig.sample_rate, "dft321")


def to_mono(sig: TriaxialSignal, mode: str = "dft321") -> MonoSignal:
    """Reduce a triaxial record to one channel by the named strategy."""
    if mode == "dft321":
        return dft321(sig)
    if mode == "x-only":
        return MonoSignal(sig.x.copy(), sig.sample_rate, mode)
    if mode == "y-only":
        return MonoSignal(sig.y.copy(), sig.sample_rate, mode)
    if mode == "z-only":
        return MonoSignal(sig.z.copy(), sig.sample_rate, mode)
    if mode == "mean":
        return MonoSignal((sig.x + sig.y + sig.z) / 3.0, sig.sample_rate, mode)
    raise SignalError(f"unknown mono mode {mode!r}")


# ---------------------------------------------------------------------------
# short-time analysis

def frame_count(n: int, window: int, hop: int) -> int:
    return 1 + (n - window) // hop


def frame_signal(samples: np.ndarray, window: int, hop: int) -> np.ndarray:
    """Slice a 1-D signal into overlapping frames, shape (frames, window)."""
    n = len(samples)
    if window > n:
        raise SignalError(f"window {window} longer than signal ({n} samples)")
    m = frame_count(n, window, hop)
    idx = np.arange(window)[None, :] + hop * np.arange(m)[:, None]
    return samples[idx]


def hann_window(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def mel_of_hz(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def hz_of_mel(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, window: int, n_mels: int,
                   fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters on the mel scale, shape (n_mels, window//2 + 1)."""
    if n_mels < 1:
        raise SignalError(f"n_mels must be >= 1, got {n_mels}")
    pts = hz_of_mel(np.linspace(mel_of_hz(fmin), mel_of_hz(fmax), n_mels + 2))
    freqs = np.arange(window // 2 + 1) * sample_rate / window
    fb = np.zeros((n_mels, freqs.size))
    for i in range(n_mels):
        lo, ctr, hi = pts[i], pts[i + 1], pts[i + 2]
        up = (freqs - lo) / max(ctr - lo, 1e-12)
        down = (hi - freqs) / max(hi - ctr, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_spectrogram(mono: MonoSignal, config: DspConfig | None = None) -> MelSpectrogram:
    """Hann-windowed FFT power through a triangular mel bank, log(1 + e)."""
    cfg = config or DspConfig()
    frames = frame_signal(mono.samples, cfg.window, cfg.hop)
    win = hann_window(cfg.window)
    spec = np.abs(np.fft.rfft(frames * win, axis=1)) ** 2
    fb = mel_filterbank(mono.sample_rate, cfg.window, cfg.n_mels,
                        cfg.fmin, cfg.resolve_fmax(mono.sample_rate))
    energy = spec @ fb.T
    return MelSpectrogram(np.log1p(energy), mono.sample_rate / cfg.hop, cfg)


# ---------------------------------------------------------------------------
# periodicity

def autocorrelation(samples: np.ndarray, max_lag: int | None = None) -> np.ndarray:
    """Biased autocorrelation normalized so r[0] = 1.

    An all-zero input follows the fixed convention r[0] = 1, r[tau > 0] = 0.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise SignalError("autocorrelation of empty signal")
    L = x.size - 1 if max_lag is None else min(max_lag, x.size - 1)
    r0 = float(np.dot(x, x))
    if r0 <= 0.0:
        out = np.zeros(L + 1)
        out[0] = 1.0
        return out
    nfft = 1 << int(np.ceil(np.log2(2 * x.size)))
    spec = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(spec * np.conj(spec), nfft)[:L + 1]
    return acf / acf[0]


def periodicity_score(mono: MonoSignal, lag_min: int | None = None,
                      lag_max: int | None = None) -> PeriodicityScore:
    """Height of the dominant autocorrelation peak in a lag band, in [0, 1].

    The signal is mean-removed first so DC offsets cannot masquerade as
    periodicity.  The default band spans periods from 500 Hz down to 2 Hz.
    ``peak_lags`` lists local maxima above half the dominant height, at least
    ``lag_min`` apart.
    """
    sr = mono.sample_rate
    if lag_min is None:
        lag_min = max(2, int(round(sr / 500)))
    if lag_max is None:
        lag_max = int(round(sr / 2))
    n = len(mono)
    if n < 4 * lag_min:
        raise SignalError(f"signal too short ({n}) for minimum lag {lag_min}")
    lag_max = min(lag_max, n - 1)
    x = mono.samples - mono.samples.mean()
    # mean removal of a constant signal leaves rounding residue; treat it as zero
    if np.abs(x).max() <= 1e-12 * max(1.0, np.abs(mono.samples).max()):
        return PeriodicityScore(0.0, 0)
    rho = autocorrelation(x, max_lag=lag_max)
    band = rho[lag_min:lag_max + 1]
    peaks, _ = find_peaks(band)
    if peaks.size == 0:
        return PeriodicityScore(0.0, 0)
    heights = band[peaks]
    best = int(np.argmax(heights))
    p = float(np.clip(heights[best], 0.0, 1.0))
    if p <= 0.0:
        return PeriodicityScore(0.0, 0)
    dominant = int(peaks[best]) + lag_min
    kept, _ = find_peaks(band, height=0.5 * p, distance=lag_min)
    return PeriodicityScore(p, dominant, kept + lag_min)


# ---------------------------------------------------------------------------
# signal file format: CSV with a sample-rate header line

_HEADER_RE = re.compile(r"#\s*sample_rate\s*=\s*(\d+)\s*$")


def save_signal_csv(path, sig: TriaxialSignal, fmt: str = "%.9g"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sample_rate={sig.sample_rate}\n")
        for a, b, c in zip(sig.x, sig.y, sig.z):
            fh.write(f"{fmt % a},{fmt % b},{fmt % c}\n")


def save_mono_csv(path, mono: MonoSignal, fmt: str = "%.9g"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sample_rate={mono.sample_rate}\n")
        for v in mono.samples:
            fh.write(f"{fmt % v}\n")


def load_signal_csv(path):
    """Parse a signal CSV; returns TriaxialSignal (3 columns) or MonoSignal (1).

    Errors name the file and the 1-based line where parsing failed.
    """
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        m = _HEADER_RE.match(first.strip())
        if not m:
            raise SignalError(f"{path}:1: expected header '# sample_rate=<Hz>'")
        sr = int(m.group(1))
        cols = None
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if cols is None:
                cols = len(parts)
                if cols not in (1, 3):
                    raise SignalError(f"{path}:{lineno}: expected 1 or 3 columns, got {cols}")
            elif len(parts) != cols:
                raise SignalError(
                    f"{path}:{lineno}: expected {cols} values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise SignalError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    if not rows:
        raise SignalError(f"{path}: no samples")
    arr = np.asarray(rows)
    if cols == 1:
        return MonoSignal(arr[:, 0], sr)
    return TriaxialSignal(arr[:, 0], arr[:, 1], arr[:, 2], sr)
