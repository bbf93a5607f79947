import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qvts.sonify import StimulusSpec, generate_stimulus, glide_frequencies
from qvts.spectral import (
    AudioBuffer,
    FeatureConfig,
    PeakList,
    SalienceConfig,
    SpectralError,
    StftConfig,
    band_energy,
    extract_features,
    extract_harmonic,
    extract_stochastic,
    harmonic_stochastic_split,
    istft,
    onset_strength,
    pitch_salience,
    salience_track,
    spectral_peaks,
    spectrogram_distance,
    stft,
    two_most_salient,
)

SR = 44100


def tone(freqs, amp=0.5, duration=1.0, sr=SR):
    t = np.arange(int(duration * sr)) / sr
    return AudioBuffer(sum(amp * np.sin(2 * np.pi * f * t) for f in np.atleast_1d(freqs)), sr)


def white(duration=1.0, amp=0.3, seed=0):
    rng = np.random.default_rng(seed)
    return AudioBuffer(amp * rng.standard_normal(int(duration * SR)), SR)


def rel_db(err, ref):
    return 10 * np.log10(np.sum(err**2) / np.sum(ref**2))


class TestConfig:
    def test_defaults(self):
        cfg = StftConfig()
        assert (cfg.window_size, cfg.fft_size, cfg.hop) == (2048, 4096, 1024)

    @pytest.mark.parametrize("kw", [dict(window_size=1000), dict(fft_size=1024), dict(hop=4096)])
    def test_invalid(self, kw):
        with pytest.raises(SpectralError):
            StftConfig(**kw)

    def test_bad_audio(self):
        with pytest.raises(SpectralError):
            AudioBuffer(np.array([0.0, np.nan]), SR)
        with pytest.raises(SpectralError):
            AudioBuffer(np.zeros(4), 0)


class TestStft:
    def test_frame_count(self):
        for n in (2048, 2049, 3072, 44100):
            spec = stft(AudioBuffer(np.zeros(n), SR))
            assert spec.frames.shape == ((n - 2048) // 1024 + 1, 2049)

    def test_too_short(self):
        with pytest.raises(SpectralError):
            stft(AudioBuffer(np.zeros(100), SR))

    def test_silence(self):
        assert not np.any(stft(AudioBuffer(np.zeros(SR), SR)).frames)

    def test_frame_times(self):
        spec = stft(AudioBuffer(np.zeros(SR), SR))
        assert np.allclose(np.diff(spec.frame_times), 1024 / SR)

    def test_sine_peak_bin(self):
        spec = stft(tone(440, amp=1.0))
        peak = np.argmax(np.abs(spec.frames[1:-1]), axis=1)
        assert np.all(peak == round(440 * 4096 / SR))

    def test_full_scale_sine_is_0_dbfs(self):
        spec = stft(tone(440, amp=1.0))
        assert spec.magnitude_db()[5].max() == pytest.approx(0.0, abs=0.1)

    def test_impulse_locality(self):
        x = np.zeros(SR)
        x[0] = 1.0
        energy = np.sum(np.abs(stft(AudioBuffer(x, SR)).frames) ** 2, axis=1)
        # only frame 0 covers sample 0, and the periodic Hann window is 0 there
        assert np.all(energy[1:] == 0)

    def test_parseval(self):
        cfg = StftConfig()
        x = white(duration=2.0).samples.copy()
        # keep the edges silent so every nonzero sample sees the full window overlap
        x[: cfg.window_size] = 0
        x[-cfg.window_size :] = 0
        spec = stft(AudioBuffer(x, SR), cfg)
        mag2 = np.abs(spec.frames) ** 2
        two_sided = 2 * mag2.sum() - mag2[:, 0].sum() - mag2[:, -1].sum()
        w = cfg.window_array()
        spec_energy = two_sided / cfg.fft_size / (np.sum(w**2) / cfg.hop)
        assert spec_energy == pytest.approx(np.sum(x**2), rel=0.01)

    def test_istft_round_trip(self):
        x = white().samples
        cfg = StftConfig()
        spec = stft(AudioBuffer(x, SR), cfg)
        y = istft(spec.frames, cfg, len(x))
        inner = slice(cfg.window_size, len(x) - cfg.window_size)
        assert np.max(np.abs(y[inner] - x[inner])) < 1e-10


class TestPeaks:
    def test_single_sine(self):
        spec = stft(tone(440))
        pk = spectral_peaks(spec.frames[5], spec.bin_hz, scale=spec.scale)
        assert abs(pk.freqs[0] - 440) < 1
        assert pk.mags[0] == pytest.approx(0.5, rel=0.01)
        assert pk.mags[0] > 10 * pk.mags[1]

    def test_two_sines(self):
        spec = stft(tone([440, 660], amp=0.4))
        pk = spectral_peaks(spec.frames[5], spec.bin_hz, scale=spec.scale)
        assert sorted(pk.freqs[:2]) == pytest.approx([440, 660], abs=1)

    def test_high_threshold_on_noise(self):
        spec = stft(white(amp=0.01))
        pk = spectral_peaks(spec.frames[3], spec.bin_hz, threshold_db=-6, scale=spec.scale)
        assert len(pk.freqs) == 0

    def test_sorted_and_capped(self):
        spec = stft(white())
        pk = spectral_peaks(spec.frames[3], spec.bin_hz, max_peaks=7, scale=spec.scale)
        assert len(pk.freqs) == 7
        assert np.all(np.diff(pk.mags) <= 0)


class TestSalience:
    def test_single_peak(self):
        cfg = SalienceConfig()
        sal = pitch_salience(PeakList(np.array([440.0]), np.array([1.0]), np.array([0])), cfg)
        assert np.argmax(sal) == np.argmin(np.abs(cfg.bin_freqs() - 440))

    def test_empty(self):
        empty = PeakList(np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))
        assert not np.any(pitch_salience(empty))

    def test_harmonic_stack(self):
        # needs a strong harmonic decay; the default 0.01 is below bin quantization
        cfg = SalienceConfig(harmonic_weight=0.8)
        peaks = PeakList(np.array([200.0, 400.0, 600.0]), np.ones(3), np.zeros(3, dtype=int))
        sal = pitch_salience(peaks, cfg)
        assert np.argmax(sal) == np.argmin(np.abs(cfg.bin_freqs() - 200))

    def test_subharmonic_weight(self):
        cfg = SalienceConfig()
        sal = pitch_salience(PeakList(np.array([440.0]), np.array([1.0]), np.array([0])), cfg)
        sub = np.argmin(np.abs(cfg.bin_freqs() - 220))
        assert sal[sub - 5 : sub + 6].max() == pytest.approx(cfg.harmonic_weight * sal.max(), rel=0.05)

    def test_single_sine_track(self):
        tr = salience_track(stft(tone(440)))
        assert np.all(np.abs(tr.freq1 - 440) < 440 * (2 ** (1 / 24) - 1))
        assert np.all(tr.sal2 < 0.3)
        assert tr.sal1.max() == pytest.approx(1.0)

    def test_silence_track(self):
        tr = salience_track(stft(AudioBuffer(np.zeros(SR), SR)))
        for a in (tr.freq1, tr.sal1, tr.freq2, tr.sal2):
            assert not np.any(a)

    def test_crossing_glides(self):
        spec = StimulusSpec()
        audio = generate_stimulus(spec)
        s = stft(audio)
        tr = salience_track(s)
        centre = s.frame_times + s.config.window_size / 2 / SR
        a, b = glide_frequencies(spec, centre)
        half = s.config.window_size / 2 / SR
        tonal = (centre + half < spec.burst[0]) | (centre - half > spec.burst[1])
        # avoid the crossing point, where the two glides share one bin
        tonal &= np.abs(np.log2(a / b)) > 1 / 6

        def near(f, g):
            return (f > 0) & (np.abs(1200 * np.log2(np.maximum(f, 1e-9) / g)) <= 100)

        ok = (near(tr.freq1, a) & near(tr.freq2, b)) | (near(tr.freq1, b) & near(tr.freq2, a))
        assert ok[tonal].mean() >= 0.9

    def test_separation_and_order(self):
        cfg = SalienceConfig()
        freqs = cfg.bin_freqs()
        sal = np.zeros((1, cfg.num_bins))
        i = int(np.argmin(np.abs(freqs - 440)))
        sal[0, i] = 1.0
        sal[0, i + 3] = 0.9  # 30 cents away, too close
        sal[0, i + 20] = 0.5
        tr = two_most_salient(sal, np.zeros(1), cfg)
        assert tr.freq1[0] == freqs[i] and tr.freq2[0] == freqs[i + 20]

    def test_tie_goes_low(self):
        cfg = SalienceConfig()
        sal = np.zeros((1, cfg.num_bins))
        sal[0, [200, 300]] = 1.0
        tr = two_most_salient(sal, np.zeros(1), cfg)
        assert tr.freq1[0] == cfg.bin_freqs()[200]

    @settings(max_examples=15, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=2.0))
    def test_gain_invariance(self, c):
        # an absolute dBFS peak threshold breaks scale invariance, so disable it
        cfg = SalienceConfig(peak_threshold_db=-np.inf)
        audio = tone([300, 720], amp=0.3, duration=0.3)
        base = salience_track(stft(audio), cfg)
        got = salience_track(stft(audio.scaled(c)), cfg)
        assert np.array_equal(base.freq1, got.freq1) and np.array_equal(base.freq2, got.freq2)
        assert np.allclose(base.sal1, got.sal1, atol=1e-6) and np.allclose(base.sal2, got.sal2, atol=1e-6)


class TestBandEnergy:
    def test_band_noise_ratio(self):
        audio = generate_stimulus(StimulusSpec(kind="noise_band", duration=1.0, burst_band=(1000, 2000)))
        e = band_energy(stft(audio)).energy
        assert e[:, 0].sum() > 10 * e[:, 1].sum()

    def test_silence(self):
        assert not np.any(band_energy(stft(AudioBuffer(np.zeros(SR), SR))).energy)

    def test_full_band(self):
        e = band_energy(stft(white(duration=2.0))).energy
        assert np.all(e > 0)
        assert e[:, 1].mean() > e[:, 0].mean()
        assert e.max() == pytest.approx(1.0)

    @pytest.mark.parametrize("band", [(2000, 1000), (-1, 100), (1000, 30000)])
    def test_invalid(self, band):
        with pytest.raises(SpectralError):
            band_energy(stft(white()), [band])


class TestOnsets:
    def test_click_train(self):
        audio = generate_stimulus(StimulusSpec(kind="click_train", rate=5, duration=3.0))
        p = onset_strength(stft(audio))
        assert p.mean_rate() == pytest.approx(5, abs=0.5)
        assert np.all((p.onset_times >= 0) & (p.onset_times <= 3.0))

    def test_steady_sine(self):
        p = onset_strength(stft(tone(440)))
        assert np.all(p.onset_times <= p.frame_times[0])

    def test_silence(self):
        p = onset_strength(stft(AudioBuffer(np.zeros(SR), SR)))
        assert p.onset_times.size == 0 and not np.any(p.strength)


class TestSplit:
    def test_round_trip(self):
        mix = generate_stimulus(StimulusSpec(kind="mixture", duration=1.0))
        h, s = harmonic_stochastic_split(mix)
        assert rel_db(h.samples + s.samples - mix.samples, mix.samples) < -40

    def test_sine(self):
        x = tone(440)
        h, s = harmonic_stochastic_split(x)
        assert rel_db(h.samples - x.samples, x.samples) < -20
        assert rel_db(s.samples, x.samples) < -20

    def test_white_noise(self):
        x = white()
        s = extract_stochastic(x)
        assert np.sum(s.samples**2) >= 0.8 * np.sum(x.samples**2)

    def test_mixture(self):
        mix = generate_stimulus(StimulusSpec(kind="mixture", duration=1.0, freq=440))
        h = stft(extract_harmonic(mix))
        pk = spectral_peaks(h.frames[10], h.bin_hz, scale=h.scale)
        assert abs(pk.freqs[0] - 440) < 2
        s = stft(extract_stochastic(mix)).magnitude()[10]
        band = s[(np.arange(s.size) * h.bin_hz > 200) & (np.arange(s.size) * h.bin_hz < 15000)]
        # no dominant line left at the sine frequency
        assert s[round(440 / h.bin_hz)] < 4 * np.median(band)

    def test_too_short(self):
        with pytest.raises(SpectralError):
            harmonic_stochastic_split(AudioBuffer(np.zeros(100), SR))


class TestDistance:
    def test_identity(self):
        x = stft(white())
        assert spectrogram_distance(x, x) == 0

    def test_gain(self):
        x = tone(440)
        d = spectrogram_distance(stft(x), stft(x.scaled(2)))
        assert 0 < d < 0.5

    def test_sine_vs_noise(self):
        assert spectrogram_distance(stft(tone(440)), stft(white())) > 0.5

    def test_shape_mismatch(self):
        with pytest.raises(SpectralError):
            spectrogram_distance(stft(white(1.0)), stft(white(2.0)))

    def test_non_commutativity(self):
        mix = generate_stimulus(StimulusSpec(kind="mixture", duration=1.0))
        pt = extract_harmonic(extract_stochastic(mix))
        tp = extract_stochastic(extract_harmonic(mix))
        assert spectrogram_distance(stft(pt), stft(tp)) > 0.05

    def test_idempotence(self):
        mix = generate_stimulus(StimulusSpec(kind="mixture", duration=1.0))
        st1 = extract_stochastic(mix)
        st2 = extract_stochastic(st1)
        ratio = spectrogram_distance(stft(st1), stft(st2)) / spectrogram_distance(stft(mix), stft(st1))
        assert ratio < 0.25


class TestFeatures:
    def test_aligned(self):
        audio = generate_stimulus(StimulusSpec())
        f = extract_features(audio)
        n = f.num_frames
        assert f.salience.sal1.size == n and f.bands.energy.shape == (n, 2) and f.pulsation.strength.size == n
        rows = list(f.rows())
        assert len(rows) == n and len(rows[0]) == len(f.header())

    def test_band_source(self):
        audio = generate_stimulus(StimulusSpec())
        stoch = extract_features(audio).bands.energy
        raw = extract_features(audio, FeatureConfig(band_source="input")).bands.energy
        t = stft(audio).frame_times
        outside = t + 2048 / SR < 0.8
        # sinusoids contribute to the raw bands but are removed from the residual
        assert raw[outside, 0].mean() > 10 * stoch[outside, 0].mean()

    def test_bad_band_source(self):
        with pytest.raises(SpectralError):
            FeatureConfig(band_source="nope")
