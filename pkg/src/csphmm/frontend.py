"""Signal conditioning, MFCC extraction and frame-level prosodic measurements."""

import wave
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.fft import dct, rfft
from scipy.signal import firwin, resample_poly
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import TooShort, WavFormatError

TAPS_PER_PHASE = 64
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.samples.ndim != 1:
            raise ValueError("waveform must be mono (1-D)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class FrameSpec:
    frame_len: int = 240
    overlap: float = 0.3125
    window: str = "hamming"

    def __post_init__(self):
        if self.frame_len < 2:
            raise ValueError("frame_len must be >= 2")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError("overlap must lie in [0, 1)")
        if self.window != "hamming":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def hop(self):
        return int(round(self.frame_len * (1.0 - self.overlap)))


@dataclass
class ProsodicTrack:
    """Per-frame natural-log energy, F0 in Hz (0 when unvoiced) and voicing flag."""

    log_energy: np.ndarray
    f0: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.log_energy = np.asarray(self.log_energy, dtype=float)
        self.f0 = np.asarray(self.f0, dtype=float)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if not (len(self.log_energy) == len(self.f0) == len(self.voiced)):
            raise ValueError("prosodic track fields differ in length")

    def __len__(self):
        return len(self.log_energy)

    def as_array(self):
        return np.column_stack([self.log_energy, self.f0, self.voiced.astype(float)])

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("prosodic array must be T x 3")
        return cls(arr[:, 0], arr[:, 1], arr[:, 2] > 0.5)


@dataclass
class Utterance:
    """Acoustic observation matrix plus the frame-aligned prosodic track."""

    acoustic: np.ndarray
    prosody: ProsodicTrack

    def __post_init__(self):
        self.acoustic = np.asarray(self.acoustic, dtype=float)
        if len(self.prosody) != len(self.acoustic):
            raise ValueError("acoustic and prosodic frame counts differ")


# -- audio i/o ---------------------------------------------------------------


def read_wav(path):
    """Read a 16-bit PCM mono WAV file into a ``Waveform`` scaled to [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise WavFormatError(f"{path}: expected mono audio, found {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise WavFormatError(f"{path}: expected 16-bit PCM, found {8 * wf.getsampwidth()}-bit samples")
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, wave_obj):
    pcm = np.clip(np.round(wave_obj.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(wave_obj.sample_rate))
        wf.writeframes(pcm.tobytes())


# -- conditioning ------------------------------------------------------------


def resample(wave_obj, target_rate):
    """Band-limited rate conversion with a windowed-sinc polyphase filter.

    The prototype low-pass has ``TAPS_PER_PHASE`` taps per polyphase branch
    and cuts off at the lower of the two Nyquist frequencies.
    """
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == wave_obj.sample_rate or len(wave_obj) == 0:
        return Waveform(wave_obj.samples.copy(), target_rate)
    ratio = Fraction(target_rate / wave_obj.sample_rate).limit_denominator(10000)
    up, down = ratio.numerator, ratio.denominator
    n_taps = TAPS_PER_PHASE * up + 1
    h = firwin(n_taps, 1.0 / max(up, down), window=("kaiser", 8.0))
    out = resample_poly(wave_obj.samples, up, down, window=h)
    return Waveform(out, target_rate)


def pre_emphasize(wave_obj, coeff=0.97):
    """y[n] = x[n] - coeff * x[n-1], with y[0] = x[0]."""
    if not 0.0 <= coeff < 1.0:
        raise ValueError("pre-emphasis coefficient must lie in [0, 1)")
    x = wave_obj.samples
    y = x.copy()
    y[1:] = x[1:] - coeff * x[:-1]
    return Waveform(y, wave_obj.sample_rate)


def frame_starts(n_samples, spec):
    if n_samples < spec.frame_len:
        raise TooShort(f"signal of {n_samples} samples is shorter than one frame ({spec.frame_len})")
    n_frames = (n_samples - spec.frame_len) // spec.hop + 1
    return np.arange(n_frames) * spec.hop


def frame(wave_obj, spec=FrameSpec()):
    """Slice into overlapping frames, each multiplied by the analysis window."""
    starts = frame_starts(len(wave_obj), spec)
    idx = starts[:, None] + np.arange(spec.frame_len)[None, :]
    return wave_obj.samples[idx] * np.hamming(spec.frame_len)[None, :]


# -- MFCC --------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_centers(n_filters=24, fmin=0.0, fmax=6000.0):
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    return edges[1:-1]


def mel_filterbank(n_filters=24, n_fft=256, sample_rate=12000, fmin=0.0, fmax=6000.0):
    """Triangular filters with unit peak, evaluated at the FFT bin frequencies."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def power_spectrum(frames, n_fft=256):
    frames = np.atleast_2d(frames)
    if frames.shape[1] > n_fft:
        raise ValueError(f"frame length {frames.shape[1]} exceeds FFT size {n_fft}")
    return np.abs(rfft(frames, n=n_fft, axis=1)) ** 2


def filterbank_energies(frames, sample_rate=12000, n_fft=256, n_filters=24, fmin=0.0, fmax=None):
    fmax = sample_rate / 2.0 if fmax is None else fmax
    fb = mel_filterbank(n_filters, n_fft, sample_rate, fmin, fmax)
    return power_spectrum(frames, n_fft) @ fb.T


def deltas(static, width=2):
    """Regression deltas over +/- ``width`` frames with edge frames replicated."""
    static = np.asarray(static, dtype=float)
    T = len(static)
    padded = np.concatenate([np.repeat(static[:1], width, axis=0), static, np.repeat(static[-1:], width, axis=0)])
    num = np.zeros_like(static)
    for k in range(1, width + 1):
        num += k * (padded[width + k : width + k + T] - padded[width - k : width - k + T])
    return num / (2.0 * sum(k * k for k in range(1, width + 1)))


def mfcc(
    frames,
    sample_rate=12000,
    n_fft=256,
    n_filters=24,
    n_ceps=16,
    include_c0=False,
    log_floor=LOG_FLOOR,
    delta_width=2,
    fmax=None,
):
    """Static cepstra followed by their deltas: a ``(T, 2 * n_ceps)`` matrix."""
    energies = filterbank_energies(frames, sample_rate, n_fft, n_filters, fmax=fmax)
    logfb = np.log(np.maximum(energies, log_floor))
    ceps = dct(logfb, type=2, norm="ortho", axis=1)
    first = 0 if include_c0 else 1
    static = ceps[:, first : first + n_ceps]
    return np.hstack([static, deltas(static, delta_width)])


# -- prosody -----------------------------------------------------------------


def prosody(frames, sample_rate=12000, f0_min=60.0, f0_max=400.0, voicing_threshold=0.3, energy_floor=LOG_FLOOR):
    """Frame log-energy, autocorrelation F0 and voicing decision.

    F0 is the autocorrelation peak over lags spanning ``f0_min``..``f0_max``;
    a frame is voiced when the peak normalized by the zero-lag value reaches
    ``voicing_threshold``.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if frames.shape[0] == 0:
        raise ValueError("no frames given")
    L = frames.shape[1]
    n_fft = 1 << int(np.ceil(np.log2(2 * L)))
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    acf = np.fft.irfft(np.abs(spec) ** 2, n=n_fft, axis=1)[:, :L]
    r0 = acf[:, 0]
    log_energy = np.log(np.maximum((frames * frames).sum(axis=1), energy_floor))

    lag_lo = max(1, int(np.ceil(sample_rate / f0_max)))
    lag_hi = min(L - 2, int(np.floor(sample_rate / f0_min)))
    f0 = np.zeros(len(frames))
    voiced = np.zeros(len(frames), dtype=bool)
    if lag_hi < lag_lo:
        return ProsodicTrack(log_energy, f0, voiced)
    for i in range(len(frames)):
        if r0[i] <= 0 or log_energy[i] <= np.log(energy_floor):
            continue
        seg = acf[i, lag_lo : lag_hi + 1]
        k = int(np.argmax(seg))
        peak = seg[k] / r0[i]
        if peak < voicing_threshold:
            continue
        lag = float(lag_lo + k)
        if 0 < k < len(seg) - 1:
            a, b, c = seg[k - 1], seg[k], seg[k + 1]
            denom = a - 2 * b + c
            if denom < 0:
                lag += 0.5 * (a - c) / denom
        f0[i] = float(np.clip(sample_rate / lag, f0_min, f0_max))
        voiced[i] = True
    return ProsodicTrack(log_energy, f0, voiced)


# -- estimator ---------------------------------------------------------------


class FeatureExtractor(BaseEstimator, TransformerMixin):
    """Waveforms to ``Utterance`` objects (MFCC + deltas, prosodic track).

    Stateless: ``fit`` only validates parameters.
    """

    def __init__(
        self,
        target_rate=12000,
        pre_emphasis=0.97,
        frame_len=240,
        overlap=0.3125,
        n_fft=256,
        n_filters=24,
        n_ceps=16,
        include_c0=False,
        delta_width=2,
        log_floor=LOG_FLOOR,
        f0_min=60.0,
        f0_max=400.0,
        voicing_threshold=0.3,
    ):
        self.target_rate = target_rate
        self.pre_emphasis = pre_emphasis
        self.frame_len = frame_len
        self.overlap = overlap
        self.n_fft = n_fft
        self.n_filters = n_filters
        self.n_ceps = n_ceps
        self.include_c0 = include_c0
        self.delta_width = delta_width
        self.log_floor = log_floor
        self.f0_min = f0_min
        self.f0_max = f0_max
        self.voicing_threshold = voicing_threshold

    def fit(self, X=None, y=None):
        FrameSpec(self.frame_len, self.overlap)
        return self

    def extract(self, wave_obj):
        spec = FrameSpec(self.frame_len, self.overlap)
        w = resample(wave_obj, self.target_rate)
        w = pre_emphasize(w, self.pre_emphasis)
        frames = frame(w, spec)
        acoustic = mfcc(
            frames,
            self.target_rate,
            self.n_fft,
            self.n_filters,
            self.n_ceps,
            self.include_c0,
            self.log_floor,
            self.delta_width,
        )
        track = prosody(frames, self.target_rate, self.f0_min, self.f0_max, self.voicing_threshold, self.log_floor)
        return Utterance(acoustic, track)

    def transform(self, X):
        return [self.extract(w) for w in X]
