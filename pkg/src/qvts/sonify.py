"""Test stimuli and sonification of stream and mix traces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.signal import butter, sosfilt

from .spectral import AudioBuffer, FeatureTracks

if TYPE_CHECKING:
    from .streaming import MixTrace, StreamTrace

KINDS = ("crossing_glides", "sine", "click_train", "noise_band", "mixture")
PEAK_DBFS = -1.0


class StimulusError(ValueError):
    pass


def bandpass_noise(n: int, lo: float, hi: float, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    """White noise through a Butterworth band-pass (scipy order 4), scaled to unit RMS."""
    white = rng.standard_normal(n)
    sos = butter(4, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
    y = sosfilt(sos, white)
    rms = np.sqrt(np.mean(y**2)) if n else 0.0
    return y / rms if rms > 0 else y


def _glide_phase(f0: float, f1: float, n: int, sample_rate: float) -> np.ndarray:
    freq = np.linspace(f0, f1, n, endpoint=False)
    return 2 * np.pi * np.cumsum(freq) / sample_rate


def glide_frequencies(spec: "StimulusSpec", t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous frequencies of the two glides at times ``t``."""
    frac = np.asarray(t) / spec.duration
    a = spec.glide_a[0] + (spec.glide_a[1] - spec.glide_a[0]) * frac
    b = spec.glide_b[0] + (spec.glide_b[1] - spec.glide_b[0]) * frac
    return a, b


@dataclass(frozen=True)
class StimulusSpec:
    """Parameters for :func:`generate_stimulus`.

    Defaults describe the crossing-glides scene: two linear glides that cross
    at 1 s, interrupted from 1.0 to 1.2 s by 1-2 kHz noise at the RMS of the
    sines.
    """

    kind: str = "crossing_glides"
    duration: float = 2.0
    sample_rate: int = 44100
    glide_a: tuple[float, float] = (400.0, 1600.0)
    glide_b: tuple[float, float] = (1600.0, 400.0)
    burst: tuple[float, float] = (1.0, 1.2)
    burst_band: tuple[float, float] = (1000.0, 2000.0)
    amplitude: float = 0.5
    noise_level: float = 1.0  # burst RMS relative to the tone RMS
    freq: float = 440.0
    rate: float = 5.0
    fade_ms: float = 5.0
    noise_seed: int = 0

    def validate(self) -> None:
        nyq = self.sample_rate / 2
        if self.kind not in KINDS:
            raise StimulusError(f"unknown stimulus kind {self.kind!r}")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise StimulusError("duration and sample_rate must be positive")
        if self.kind == "crossing_glides" and not 0 <= self.burst[0] < self.burst[1] <= self.duration:
            raise StimulusError("burst must lie inside the stimulus")
        freqs = [*self.glide_a, *self.glide_b, *self.burst_band, self.freq]
        if any(f <= 0 or f >= nyq for f in freqs):
            raise StimulusError("frequencies must lie in (0, sample_rate / 2)")
        if self.burst_band[0] >= self.burst_band[1]:
            raise StimulusError("burst band must have lo < hi")
        if self.rate <= 0 or self.amplitude < 0 or self.noise_level < 0:
            raise StimulusError("rate must be positive, levels non-negative")


def _fade_gate(n: int, start: int, stop: int, ramp: int) -> np.ndarray:
    """1 inside ``[start, stop)``, linear ramps of ``ramp`` samples just inside the edges."""
    g = np.zeros(n)
    g[start:stop] = 1.0
    if ramp > 0 and stop - start > 2 * ramp:
        r = np.linspace(0, 1, ramp, endpoint=False)
        g[start : start + ramp] = r
        g[stop - ramp : stop] = r[::-1]
    return g


def generate_stimulus(spec: StimulusSpec = StimulusSpec()) -> AudioBuffer:
    spec.validate()
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    rng = np.random.Generator(np.random.PCG64(spec.noise_seed))
    t = np.arange(n) / sr
    if spec.kind == "sine":
        x = spec.amplitude * np.sin(2 * np.pi * spec.freq * t)
    elif spec.kind == "click_train":
        x = np.zeros(n)
        period = sr / spec.rate
        idx = np.round(np.arange(0, n, period)).astype(int)
        x[idx[idx < n]] = spec.amplitude
    elif spec.kind == "noise_band":
        x = spec.amplitude * bandpass_noise(n, *spec.burst_band, sr, rng)
    elif spec.kind == "mixture":
        tone = spec.amplitude * np.sin(2 * np.pi * spec.freq * t)
        x = tone + spec.noise_level * spec.amplitude / np.sqrt(2) * rng.standard_normal(n)
    else:
        tones = spec.amplitude * (
            np.sin(_glide_phase(*spec.glide_a, n, sr)) + np.sin(_glide_phase(*spec.glide_b, n, sr))
        )
        ramp = int(round(spec.fade_ms * 1e-3 * sr))
        b0, b1 = (int(round(s * sr)) for s in spec.burst)
        burst_gate = _fade_gate(n, b0, b1, ramp)
        tone_gate = 1.0 - burst_gate
        # two incoherent unit sines have RMS amplitude * 1
        noise = spec.noise_level * spec.amplitude * bandpass_noise(n, *spec.burst_band, sr, rng)
        x = tones * tone_gate + noise * burst_gate
    return AudioBuffer(x, sr)


@dataclass(frozen=True)
class RenderConfig:
    amp_ramp_ms: float = 10.0
    noise_seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.amp_ramp_ms < 0:
            raise StimulusError("amp_ramp_ms must be non-negative")


def oscillator(freq: np.ndarray, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Phase-continuous sine for a per-sample frequency curve; returns ``(signal, phase)``."""
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate
    return np.sin(phase), phase


def _frame_curve(values: np.ndarray, frame_times: np.ndarray, n: int, sample_rate: float) -> np.ndarray:
    """Linear interpolation of per-frame values onto the sample grid (held at the ends)."""
    if values.size == 0:
        return np.zeros(n)
    return np.interp(np.arange(n) / sample_rate, frame_times, values)


def _step_curve(values: np.ndarray, frame_times: np.ndarray, n: int, sample_rate: float) -> np.ndarray:
    idx = np.searchsorted(frame_times, np.arange(n) / sample_rate, side="right") - 1
    return np.asarray(values, dtype=float)[np.clip(idx, 0, values.size - 1)]


def _smooth(gate: np.ndarray, ramp: int) -> np.ndarray:
    """Turn steps into linear crossfades of ``ramp`` samples."""
    if ramp <= 1:
        return gate
    kernel = np.ones(ramp) / ramp
    return np.convolve(np.pad(gate, (ramp // 2, ramp - 1 - ramp // 2), mode="edge"), kernel, mode="valid")


def _finish(y: np.ndarray, sample_rate: float, cfg: RenderConfig) -> AudioBuffer:
    peak = np.max(np.abs(y)) if y.size else 0.0
    if cfg.normalize and peak > 0:
        y = y * (10 ** (PEAK_DBFS / 20) / peak)
    return AudioBuffer(y, sample_rate)


def _check_aligned(n_trace: int, features: FeatureTracks) -> None:
    if n_trace != features.num_frames:
        raise StimulusError(f"trace has {n_trace} frames, features have {features.num_frames}")


def render_stream(trace: "StreamTrace", features: FeatureTracks, cfg: RenderConfig = RenderConfig()) -> AudioBuffer:
    """Sine at the selected pitch on pitch frames, band noise on noise frames."""
    from .streaming import NOISE_LABELS, PITCH_LABELS

    sr = features.sample_rate
    if len(trace.labels) == 0:
        return AudioBuffer(np.zeros(0), sr)
    _check_aligned(len(trace.labels), features)
    n = features.num_samples
    times = features.frame_times
    ramp = int(round(cfg.amp_ramp_ms * 1e-3 * sr))
    labels = list(trace.labels)
    freqs = np.asarray(trace.selected_freq, dtype=float)
    pitched = np.array([lab in PITCH_LABELS and f > 0 for lab, f in zip(labels, freqs)], dtype=float)

    # hold the last known pitch through non-pitch frames so the phase never jumps
    held = freqs.copy()
    last = next((f for f, p in zip(freqs, pitched) if p), 0.0)
    for m in range(held.size):
        if pitched[m]:
            last = held[m]
        held[m] = last
    tone, _ = oscillator(_frame_curve(held, times, n, sr), sr)
    y = tone * _smooth(_step_curve(pitched, times, n, sr), ramp) / np.sqrt(2)

    rng = np.random.Generator(np.random.PCG64(cfg.noise_seed))
    for label, band in NOISE_LABELS.items():
        gate = np.array([lab == label for lab in labels], dtype=float)
        noise = bandpass_noise(n, *band, sr, rng)  # drawn for every band so output depends only on seed
        if gate.any():
            y = y + noise * _smooth(_step_curve(gate, times, n, sr), ramp) / np.sqrt(2)
    return _finish(y, sr, cfg)


def render_mixed(trace: "MixTrace", features: FeatureTracks, cfg: RenderConfig = RenderConfig()) -> AudioBuffer:
    """Upper pitch x amp_up + lower pitch x amp_down + noise x amp_noise.

    Each unit component has RMS ``1/sqrt(2)``, so a maximally mixed state
    renders as noise at half that level before normalization.
    """
    from .streaming import NOISE_LABELS, upper_lower

    sr = features.sample_rate
    if len(trace.p_u) == 0:
        return AudioBuffer(np.zeros(0), sr)
    _check_aligned(len(trace.p_u), features)
    n = features.num_samples
    times = features.frame_times
    up, down = upper_lower(features.salience.freq1, features.salience.freq2)
    up_tone, _ = oscillator(_frame_curve(up, times, n, sr), sr)
    down_tone, _ = oscillator(_frame_curve(down, times, n, sr), sr)
    up_tone *= _frame_curve((up > 0).astype(float), times, n, sr)
    down_tone *= _frame_curve((down > 0).astype(float), times, n, sr)
    lo = min(b[0] for b in NOISE_LABELS.values())
    hi = max(b[1] for b in NOISE_LABELS.values())
    rng = np.random.Generator(np.random.PCG64(cfg.noise_seed))
    noise = bandpass_noise(n, lo, hi, sr, rng)
    y = (
        _frame_curve(np.asarray(trace.amp_up), times, n, sr) * up_tone
        + _frame_curve(np.asarray(trace.amp_down), times, n, sr) * down_tone
        + _frame_curve(np.asarray(trace.amp_noise), times, n, sr) * noise / np.sqrt(2)
    )
    return _finish(y, sr, cfg)
