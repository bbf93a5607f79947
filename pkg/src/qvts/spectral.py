"""STFT analysis and the audio measurement apparati.

Phonation is measured by harmonic-summation pitch salience and by the
harmonic half of a sines-plus-residual split; turbulence by band energies and
the stochastic half of the split; myoelastic pulsation by spectral-flux onsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import median_filter
from scipy.signal import get_window

DEFAULT_BANDS = ((1000.0, 2000.0), (2000.0, 6000.0))
DB_FLOOR = -80.0


class SpectralError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono samples at full scale +-1."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).reshape(-1)
        if self.sample_rate <= 0:
            raise SpectralError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise SpectralError("audio contains non-finite samples")
        x = x.copy()
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * gain, self.sample_rate)


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 2048
    fft_size: int = 4096
    hop: int = 1024
    window: str = "hann"

    def __post_init__(self):
        for name in ("window_size", "fft_size", "hop"):
            if not _pow2(getattr(self, name)):
                raise SpectralError(f"{name} must be a power of two")
        if self.fft_size < self.window_size:
            raise SpectralError("fft_size must be >= window_size")
        if self.hop > self.window_size:
            raise SpectralError("hop must be <= window_size")
        if self.window != "hann":
            raise SpectralError(f"unsupported window {self.window!r}")

    def window_array(self) -> np.ndarray:
        # periodic Hann: overlap-adds to a constant at hop = window_size / 2**k
        return get_window("hann", self.window_size, fftbins=True)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """One-sided complex spectra, one row per frame."""

    frames: np.ndarray
    frame_times: np.ndarray
    config: StftConfig
    sample_rate: float
    num_samples: int

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.config.fft_size

    @property
    def scale(self) -> float:
        """Factor mapping |X| of a full-scale sine to 1 (0 dBFS)."""
        return 2.0 / self.config.window_array().sum()

    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames) * self.scale

    def magnitude_db(self, floor: float = DB_FLOOR) -> np.ndarray:
        with np.errstate(divide="ignore"):
            db = 20 * np.log10(self.magnitude())
        return np.maximum(db, floor)


def stft(audio: AudioBuffer, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Frames at ``m * hop`` with no padding; ``floor((len - window) / hop) + 1`` frames."""
    x = audio.samples
    if x.size < cfg.window_size:
        raise SpectralError(f"audio has {x.size} samples, fewer than window_size={cfg.window_size}")
    frames = sliding_window_view(x, cfg.window_size)[:: cfg.hop]
    spectra = np.fft.rfft(frames * cfg.window_array(), n=cfg.fft_size, axis=1)
    times = np.arange(frames.shape[0]) * cfg.hop / audio.sample_rate
    return Spectrogram(spectra, times, cfg, audio.sample_rate, x.size)


def istft(frames: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Least-squares overlap-add inverse of :func:`stft`.

    Samples not covered by any window are returned as zero.
    """
    w = cfg.window_array()
    n = cfg.window_size
    out = np.zeros(max(length, (len(frames) - 1) * cfg.hop + n))
    norm = np.zeros_like(out)
    seg = np.fft.irfft(frames, n=cfg.fft_size, axis=1)[:, :n] * w
    for m, s in enumerate(seg):
        out[m * cfg.hop : m * cfg.hop + n] += s
        norm[m * cfg.hop : m * cfg.hop + n] += w * w
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return out[:length]


class PeakList(NamedTuple):
    freqs: np.ndarray
    mags: np.ndarray
    bins: np.ndarray


def spectral_peaks(
    frame: np.ndarray,
    bin_hz: float,
    max_peaks: int = 100,
    threshold_db: float = -60.0,
    scale: float = 1.0,
    min_freq: float = 0.0,
    max_freq: float = math.inf,
    prominence_db: float | None = None,
) -> PeakList:
    """Local maxima of one spectrum, parabolically refined in dB.

    ``frame`` may be complex or magnitude; ``scale`` converts it to full scale
    before thresholding. With ``prominence_db`` set, a peak must also exceed
    the local median level (+-32 bins) by that many dB. Returned magnitudes
    are linear and sorted descending.
    """
    mag = np.abs(np.asarray(frame)) * scale
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag)
    db = np.maximum(db, -400.0)
    k = np.arange(1, db.size - 1)
    is_peak = (db[k] > db[k - 1]) & (db[k] >= db[k + 1]) & (db[k] > threshold_db)
    if prominence_db is not None:
        med = median_filter(db, size=65, mode="nearest")
        is_peak &= db[k] > med[k] + prominence_db
    k = k[is_peak]
    if k.size == 0:
        empty = np.zeros(0)
        return PeakList(empty, empty, np.zeros(0, dtype=int))
    a, b, c = db[k - 1], db[k], db[k + 1]
    denom = a - 2 * b + c
    p = np.where(denom != 0, 0.5 * (a - c) / np.where(denom != 0, denom, 1), 0.0)
    freqs = (k + p) * bin_hz
    peak_db = b - 0.25 * (a - c) * p
    keep = (freqs >= min_freq) & (freqs <= max_freq)
    freqs, peak_db, k = freqs[keep], peak_db[keep], k[keep]
    order = np.lexsort((freqs, -peak_db))[:max_peaks]
    return PeakList(freqs[order], 10 ** (peak_db[order] / 20), k[order])


@dataclass(frozen=True)
class SalienceConfig:
    """Harmonic-summation salience over cent-spaced bins above ``reference_freq``."""

    reference_freq: float = 55.0
    bin_resolution: float = 10.0  # cents
    num_bins: int = 600
    num_harmonics: int = 10
    harmonic_weight: float = 0.01
    min_freq: float = 80.0
    max_freq: float = 1760.0
    min_separation_cents: float = 100.0
    no_pitch_threshold: float = 0.05
    peak_threshold_db: float = -60.0
    max_peaks: int = 100
    peak_max_freq: float = 10000.0

    def bin_freqs(self) -> np.ndarray:
        return self.reference_freq * 2 ** (np.arange(self.num_bins) * self.bin_resolution / 1200)


def pitch_salience(peaks: PeakList, cfg: SalienceConfig = SalienceConfig()) -> np.ndarray:
    """Salience per cent bin.

    Every peak votes for the candidate fundamentals ``f / h`` (h = 1..H) with
    weight ``harmonic_weight ** (h - 1) * mag``, spread over bins within half a
    semitone by a ``cos**2`` window.
    """
    sal = np.zeros(cfg.num_bins)
    if len(peaks.freqs) == 0:
        return sal
    half = 50.0 / cfg.bin_resolution  # half a semitone, in bins
    reach = int(math.ceil(half))
    offsets = np.arange(-reach, reach + 1)
    for f, a in zip(peaks.freqs, peaks.mags):
        if f <= 0:
            continue
        for h in range(1, cfg.num_harmonics + 1):
            centre = 1200 * math.log2(f / h / cfg.reference_freq) / cfg.bin_resolution
            if centre < -half:
                break
            bins = np.round(centre).astype(int) + offsets
            delta = np.abs(bins - centre) / half
            ok = (delta < 1) & (bins >= 0) & (bins < cfg.num_bins)
            sal[bins[ok]] += cfg.harmonic_weight ** (h - 1) * a * np.cos(delta[ok] * math.pi / 2) ** 2
    return sal


@dataclass(frozen=True, eq=False)
class SalienceTrack:
    """Two most salient pitches per frame; saliences normalized by the file maximum."""

    frame_times: np.ndarray
    freq1: np.ndarray
    sal1: np.ndarray
    freq2: np.ndarray
    sal2: np.ndarray


def _top_two(sal: np.ndarray, lo: int, hi: int, min_sep: float) -> tuple[int, float, int, float]:
    s = sal[lo:hi]
    if s.size < 3 or not np.any(s > 0):
        return -1, 0.0, -1, 0.0
    padded = np.concatenate(([-np.inf], s, [-np.inf]))
    i = np.arange(1, padded.size - 1)
    cand = i[(padded[i] > padded[i - 1]) & (padded[i] >= padded[i + 1]) & (padded[i] > 0)] - 1
    if cand.size == 0:
        return -1, 0.0, -1, 0.0
    order = cand[np.lexsort((cand, -s[cand]))]
    b1 = int(order[0])
    for b in order[1:]:
        if abs(int(b) - b1) >= min_sep:
            return b1 + lo, float(s[b1]), int(b) + lo, float(s[b])
    return b1 + lo, float(s[b1]), -1, 0.0


def two_most_salient(
    salience: np.ndarray, frame_times: np.ndarray, cfg: SalienceConfig = SalienceConfig()
) -> SalienceTrack:
    """Pick the two highest salience peaks at least ``min_separation_cents`` apart.

    Ties go to the lower frequency. Frames whose normalized salience is below
    ``no_pitch_threshold`` report frequency 0.
    """
    salience = np.atleast_2d(salience)
    freqs = cfg.bin_freqs()
    lo = int(np.searchsorted(freqs, cfg.min_freq))
    hi = int(np.searchsorted(freqs, cfg.max_freq, side="right"))
    min_sep = cfg.min_separation_cents / cfg.bin_resolution
    n = salience.shape[0]
    b1, s1, b2, s2 = (np.zeros(n, dtype=int), np.zeros(n), np.zeros(n, dtype=int), np.zeros(n))
    for m in range(n):
        b1[m], s1[m], b2[m], s2[m] = _top_two(salience[m], lo, hi, min_sep)
    top = s1.max() if n else 0.0
    if top > 0:
        s1, s2 = s1 / top, s2 / top
    f1 = np.where((b1 >= 0) & (s1 >= cfg.no_pitch_threshold), freqs[np.maximum(b1, 0)], 0.0)
    f2 = np.where((b2 >= 0) & (s2 >= cfg.no_pitch_threshold), freqs[np.maximum(b2, 0)], 0.0)
    return SalienceTrack(np.asarray(frame_times, dtype=float), f1, s1, f2, s2)


def salience_track(spec: Spectrogram, cfg: SalienceConfig = SalienceConfig()) -> SalienceTrack:
    """Peaks, salience and two-pitch picking for every frame of ``spec``."""
    rows = []
    for frame in spec.frames:
        peaks = spectral_peaks(
            frame,
            spec.bin_hz,
            max_peaks=cfg.max_peaks,
            threshold_db=cfg.peak_threshold_db,
            scale=spec.scale,
            max_freq=cfg.peak_max_freq,
        )
        rows.append(pitch_salience(peaks, cfg))
    sal = np.array(rows) if rows else np.zeros((0, cfg.num_bins))
    return two_most_salient(sal, spec.frame_times, cfg)


@dataclass(frozen=True, eq=False)
class BandEnergyTrack:
    frame_times: np.ndarray
    bands: tuple[tuple[float, float], ...]
    energy: np.ndarray  # (frames, bands), normalized by the maximum over the whole file


def band_energy(spec: Spectrogram, bands: Sequence[tuple[float, float]] = DEFAULT_BANDS) -> BandEnergyTrack:
    """Per-frame power in ``[lo, hi)`` for each band, normalized by the file maximum."""
    nyq = spec.sample_rate / 2
    bands = tuple((float(lo), float(hi)) for lo, hi in bands)
    for lo, hi in bands:
        if not (0 <= lo < hi <= nyq):
            raise SpectralError(f"invalid band ({lo}, {hi}) for sample rate {spec.sample_rate}")
    f = np.arange(spec.frames.shape[1]) * spec.bin_hz
    power = np.abs(spec.frames * spec.scale) ** 2
    energy = np.stack([power[:, (f >= lo) & (f < hi)].sum(axis=1) for lo, hi in bands], axis=1)
    top = energy.max() if energy.size else 0.0
    if top > 0:
        energy = energy / top
    return BandEnergyTrack(spec.frame_times, bands, energy)


@dataclass(frozen=True, eq=False)
class PulsationTrack:
    frame_times: np.ndarray
    strength: np.ndarray
    onset_times: np.ndarray
    rate: np.ndarray  # onsets per second in a 1 s window centred on each frame

    def mean_rate(self) -> float:
        """Pulse rate from the median inter-onset interval (0 with fewer than two onsets)."""
        if self.onset_times.size < 2:
            return 0.0
        return float(1.0 / np.median(np.diff(self.onset_times)))


def onset_strength(
    spec: Spectrogram,
    compression: float = 100.0,
    median_span: int = 11,
    delta: float = 0.1,
    spread: int = 2,
) -> PulsationTrack:
    """Half-wave-rectified log spectral flux and the onsets it implies.

    An onset is a local maximum (within ``spread`` frames) whose flux exceeds
    the running median over ``median_span`` frames plus ``delta`` times the
    file maximum. The first frame is compared against silence.
    """
    logmag = np.log1p(compression * spec.magnitude())
    prev = np.vstack([np.zeros((1, logmag.shape[1])), logmag[:-1]])
    flux = np.maximum(logmag - prev, 0.0).sum(axis=1)
    n = flux.size
    times = spec.frame_times
    if n == 0 or flux.max() <= 1e-9:
        return PulsationTrack(times, flux, np.zeros(0), np.zeros(n))
    thresh = median_filter(flux, size=median_span, mode="nearest") + delta * flux.max()
    onsets = []
    for m in range(n):
        lo, hi = max(0, m - spread), min(n, m + spread + 1)
        if flux[m] > thresh[m] and flux[m] == flux[lo:hi].max() and (not onsets or m - onsets[-1] > spread):
            onsets.append(m)
    onset_times = times[onsets] if onsets else np.zeros(0)
    rate = np.array([np.count_nonzero(np.abs(onset_times - t) < 0.5) for t in times], dtype=float)
    return PulsationTrack(times, flux, onset_times, rate)


@dataclass(frozen=True)
class SplitConfig:
    """Sines-plus-residual mask parameters."""

    stft: StftConfig = field(default_factory=StftConfig)
    threshold_db: float = -60.0
    max_peaks: int = 100
    prominence_db: float = 15.0
    half_width: int = 3
    taper: int = 3


def _peak_mask(spec: Spectrogram, cfg: SplitConfig) -> np.ndarray:
    nbins = spec.frames.shape[1]
    mask = np.zeros(spec.frames.shape)
    # soft edge: 1 inside +-half_width, raised-cosine fall over the next `taper` bins
    dist = np.arange(-(cfg.half_width + cfg.taper), cfg.half_width + cfg.taper + 1)
    edge = np.clip((np.abs(dist) - cfg.half_width) / (cfg.taper + 1), 0, 1)
    shape = 0.5 * (1 + np.cos(np.pi * edge))
    for m, frame in enumerate(spec.frames):
        peaks = spectral_peaks(
            frame, spec.bin_hz, cfg.max_peaks, cfg.threshold_db, spec.scale, prominence_db=cfg.prominence_db
        )
        for k in peaks.bins:
            idx = k + dist
            ok = (idx >= 0) & (idx < nbins)
            mask[m, idx[ok]] = np.maximum(mask[m, idx[ok]], shape[ok])
    return mask


def harmonic_stochastic_split(audio: AudioBuffer, cfg: SplitConfig = SplitConfig()) -> tuple[AudioBuffer, AudioBuffer]:
    """Split ``audio`` into a harmonic and a stochastic part that sum back to it.

    Prominent spectral peaks are masked with soft-edged windows; the masked
    and complementary spectra are resynthesized by overlap-add. The input is
    padded by one window on both sides so every sample is fully covered.
    """
    n = cfg.stft.window_size
    if len(audio) < n:
        raise SpectralError(f"audio has {len(audio)} samples, fewer than window_size={n}")
    padded = AudioBuffer(np.concatenate([np.zeros(n), audio.samples, np.zeros(n)]), audio.sample_rate)
    spec = stft(padded, cfg.stft)
    mask = _peak_mask(spec, cfg)
    length = len(padded)
    harm = istft(spec.frames * mask, cfg.stft, length)[n : n + len(audio)]
    stoch = istft(spec.frames * (1 - mask), cfg.stft, length)[n : n + len(audio)]
    return AudioBuffer(harm, audio.sample_rate), AudioBuffer(stoch, audio.sample_rate)


def extract_harmonic(audio: AudioBuffer, cfg: SplitConfig = SplitConfig()) -> AudioBuffer:
    """Phonation measurement: the harmonic part of the split."""
    return harmonic_stochastic_split(audio, cfg)[0]


def extract_stochastic(audio: AudioBuffer, cfg: SplitConfig = SplitConfig()) -> AudioBuffer:
    """Turbulence measurement: the stochastic residual."""
    return harmonic_stochastic_split(audio, cfg)[1]


def spectrogram_distance(a: Spectrogram, b: Spectrogram) -> float:
    """Relative distance between log-magnitude spectrograms.

    Levels are taken in dB above an -80 dBFS floor. The mean per-frame L2
    distance is divided by the RMS (over frames) of the per-frame L2 norms of
    both inputs. Identical inputs give 0; two silent inputs give 0.
    """
    if a.frames.shape != b.frames.shape:
        raise SpectralError(f"spectrogram shapes differ: {a.frames.shape} vs {b.frames.shape}")
    la = a.magnitude_db() - DB_FLOOR
    lb = b.magnitude_db() - DB_FLOOR
    num = np.linalg.norm(la - lb, axis=1).mean()
    den = math.sqrt(0.5 * (np.sum(la**2) + np.sum(lb**2)) / la.shape[0]) if la.shape[0] else 0.0
    if den == 0:
        return 0.0
    return float(num / den)


@dataclass(frozen=True)
class FeatureConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    salience: SalienceConfig = field(default_factory=SalienceConfig)
    bands: tuple[tuple[float, float], ...] = DEFAULT_BANDS
    # "stochastic": band energy of the residual left after removing sinusoids;
    # "input": band energy of the input itself
    band_source: str = "stochastic"

    def __post_init__(self):
        if self.band_source not in ("stochastic", "input"):
            raise SpectralError(f"unknown band_source {self.band_source!r}")


@dataclass(frozen=True, eq=False)
class FeatureTracks:
    """Everything the Hamiltonian and the renderers need from one audio file."""

    salience: SalienceTrack
    bands: BandEnergyTrack
    pulsation: PulsationTrack
    sample_rate: float
    hop: int
    num_samples: int

    @property
    def frame_times(self) -> np.ndarray:
        return self.salience.frame_times

    @property
    def num_frames(self) -> int:
        return self.frame_times.size

    def rows(self):
        """CSV-ready rows: time, two pitches, band energies, onset strength."""
        s = self.salience
        for m in range(self.num_frames):
            yield [s.frame_times[m], s.freq1[m], s.sal1[m], s.freq2[m], s.sal2[m], *self.bands.energy[m], self.pulsation.strength[m]]

    def header(self) -> list[str]:
        band_cols = [f"energy_{int(lo)}_{int(hi)}" for lo, hi in self.bands.bands]
        return ["time_s", "freq1_hz", "sal1", "freq2_hz", "sal2", *band_cols, "onset_strength"]


def extract_features(audio: AudioBuffer, cfg: FeatureConfig = FeatureConfig()) -> FeatureTracks:
    spec = stft(audio, cfg.stft)
    if cfg.band_source == "stochastic":
        residual = extract_stochastic(audio, SplitConfig(stft=cfg.stft))
        band_spec = stft(residual, cfg.stft)
    else:
        band_spec = spec
    return FeatureTracks(
        salience=salience_track(spec, cfg.salience),
        bands=band_energy(band_spec, cfg.bands),
        pulsation=onset_strength(spec),
        sample_rate=audio.sample_rate,
        hop=cfg.stft.hop,
        num_samples=len(audio),
    )
