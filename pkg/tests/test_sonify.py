import numpy as np
import pytest

from qvts.hamiltonian import build_hamiltonian_track
from qvts.quantum import PhonState, basis_state, density_from_ensemble
from qvts.sonify import (
    RenderConfig,
    StimulusError,
    StimulusSpec,
    generate_stimulus,
    oscillator,
    render_mixed,
    render_stream,
)
from qvts.spectral import AudioBuffer, StftConfig, extract_features, onset_strength, spectral_peaks, stft
from qvts.streaming import (
    NOISE_HI,
    NOISE_LO,
    PITCH_UP,
    CollapsePolicy,
    MixTrace,
    StreamTrace,
    mix_weights,
    track_mixed,
    track_pure,
)

SR = 44100


@pytest.fixture(scope="module")
def sine_features():
    return extract_features(generate_stimulus(StimulusSpec(kind="sine", freq=440, duration=1.0)))


def stream_trace(feats, labels, freq):
    n = feats.num_frames
    states = tuple(basis_state("u") for _ in range(n))
    return StreamTrace(feats.frame_times, states, tuple(labels), np.asarray(freq, dtype=float), np.zeros(n, bool))


def mix_trace(feats, p_u, scale=1.0):
    n = feats.num_frames
    p_u = np.broadcast_to(np.asarray(p_u, dtype=float), (n,))
    amps = np.array([mix_weights(p, 1 - p) for p in p_u]) * scale
    rho = tuple(density_from_ensemble([(p, basis_state("u")), (1 - p, basis_state("d"))]) for p in p_u)
    return MixTrace(
        feats.frame_times, rho, p_u.copy(), 1 - p_u, amps[:, 0], amps[:, 1], amps[:, 2],
        np.zeros(n, bool), np.full(n, -1),
    )


def dominant_freq(audio, frame=5):
    spec = stft(audio)
    return spectral_peaks(spec.frames[frame], spec.bin_hz, scale=spec.scale).freqs[0]


def rms(x):
    return np.sqrt(np.mean(np.asarray(x) ** 2))


class TestStimulus:
    def test_sine(self):
        audio = generate_stimulus(StimulusSpec(kind="sine", freq=440, duration=1.0))
        assert len(audio) == SR
        assert dominant_freq(audio) == pytest.approx(440, abs=1)

    def test_click_train(self):
        audio = generate_stimulus(StimulusSpec(kind="click_train", rate=5, duration=3.0))
        assert onset_strength(stft(audio)).mean_rate() == pytest.approx(5, abs=0.5)

    def test_crossing_glides_layout(self):
        spec = StimulusSpec()
        x = generate_stimulus(spec).samples
        assert len(x) == 2 * SR
        burst = x[int(1.05 * SR) : int(1.15 * SR)]
        before = x[int(0.5 * SR) : int(0.9 * SR)]
        # equal RMS between the two-sine segment and the noise burst
        assert rms(burst) == pytest.approx(rms(before), rel=0.15)
        spec_b = stft(AudioBuffer(burst, SR), StftConfig(1024, 2048, 512)).magnitude()
        f = np.arange(spec_b.shape[1]) * SR / 2048
        inband = spec_b[:, (f >= 1000) & (f < 2000)] ** 2
        assert inband.sum() > 0.9 * (spec_b**2).sum()

    def test_deterministic(self):
        a = generate_stimulus(StimulusSpec(noise_seed=3))
        b = generate_stimulus(StimulusSpec(noise_seed=3))
        c = generate_stimulus(StimulusSpec(noise_seed=4))
        assert np.array_equal(a.samples, b.samples) and not np.array_equal(a.samples, c.samples)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(kind="nope"),
            dict(burst=(1.5, 1.2)),
            dict(burst=(1.0, 3.0)),
            dict(glide_a=(400, 30000)),
            dict(duration=0),
            dict(kind="sine", freq=-1),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(StimulusError):
            generate_stimulus(StimulusSpec(**kw))


class TestRenderStream:
    def test_pure_tone(self, sine_features):
        n = sine_features.num_frames
        out = render_stream(stream_trace(sine_features, [PITCH_UP] * n, [440.0] * n), sine_features)
        assert len(out) == sine_features.num_samples
        assert dominant_freq(out) == pytest.approx(440, abs=1)
        assert np.max(np.abs(out.samples)) == pytest.approx(10 ** (-1 / 20))

    def test_no_clicks_at_boundaries(self, sine_features):
        n = sine_features.num_frames
        labels = [PITCH_UP if (m // 4) % 2 == 0 else NOISE_LO for m in range(n)]
        trace = stream_trace(sine_features, labels, [440.0] * n)

        def leak(cfg):
            spec = stft(render_stream(trace, sine_features, cfg), StftConfig(512, 1024, 128))
            db = spec.magnitude_db(floor=-200)
            f = np.arange(db.shape[1]) * spec.bin_hz
            return (db[:, f > 6000].max(axis=1) - db.max()).max()

        smooth = leak(RenderConfig())
        assert smooth < -30
        # crossfades remove most of the splatter of hard switching
        assert smooth < leak(RenderConfig(amp_ramp_ms=0)) - 20

    def test_noise_band(self, sine_features):
        n = sine_features.num_frames
        out = render_stream(stream_trace(sine_features, [NOISE_HI] * n, [4000.0] * n), sine_features)
        mag = stft(out).magnitude() ** 2
        f = np.arange(mag.shape[1]) * SR / 4096
        assert mag[:, (f >= 2000) & (f < 6000)].sum() > 0.9 * mag.sum()

    def test_empty(self, sine_features):
        empty = StreamTrace(np.zeros(0), (), (), np.zeros(0), np.zeros(0, bool))
        assert len(render_stream(empty, sine_features)) == 0

    def test_misaligned(self, sine_features):
        tr = stream_trace(sine_features, [PITCH_UP] * sine_features.num_frames, [440.0] * sine_features.num_frames)
        short = StreamTrace(tr.frame_times[:-1], tr.states[:-1], tr.labels[:-1], tr.selected_freq[:-1], tr.collapse_event[:-1])
        with pytest.raises(StimulusError):
            render_stream(short, sine_features)

    def test_deterministic_and_bounded(self):
        feats = extract_features(generate_stimulus(StimulusSpec()))
        ham = build_hamiltonian_track(feats)
        tr = track_pure(ham, feats, PhonState.from_vector([np.sqrt(0.75), 0.5]), CollapsePolicy(seed=1))
        a = render_stream(tr, feats)
        b = render_stream(tr, feats)
        assert np.array_equal(a.samples, b.samples)
        assert np.all(np.isfinite(a.samples)) and np.max(np.abs(a.samples)) <= 1.0


class TestRenderMixed:
    def test_pure_up(self, sine_features):
        out = render_mixed(mix_trace(sine_features, 1.0), sine_features)
        assert dominant_freq(out) == pytest.approx(440, abs=1)

    def test_maximally_mixed_noise(self, sine_features):
        cfg = RenderConfig(normalize=False)
        out = render_mixed(mix_trace(sine_features, 0.5), sine_features, cfg)
        # unit noise has RMS 1/sqrt(2); amp_noise = 1/2
        assert rms(out.samples) == pytest.approx(0.5 / np.sqrt(2), rel=0.01)
        mag = stft(out).magnitude() ** 2
        f = np.arange(mag.shape[1]) * SR / 4096
        assert mag[:, (f >= 1000) & (f < 6000)].sum() > 0.9 * mag.sum()

    @pytest.mark.parametrize("c", [1.0, 0.5, 0.1])
    def test_rms_scaling(self, sine_features, c):
        cfg = RenderConfig(normalize=False)
        p_u = np.linspace(0.2, 0.9, sine_features.num_frames)
        base = rms(render_mixed(mix_trace(sine_features, p_u), sine_features, cfg).samples)
        scaled = rms(render_mixed(mix_trace(sine_features, p_u, scale=c), sine_features, cfg).samples)
        assert scaled == pytest.approx(c * base, rel=0.01)

    def test_from_tracker(self):
        feats = extract_features(generate_stimulus(StimulusSpec()))
        ham = build_hamiltonian_track(feats)
        rho = density_from_ensemble([(1 / 3, basis_state("u")), (2 / 3, basis_state("d"))])
        tr = track_mixed(ham, rho, CollapsePolicy(seed=0))
        a = render_mixed(tr, feats)
        assert np.array_equal(a.samples, render_mixed(tr, feats).samples)
        assert np.all(np.isfinite(a.samples)) and np.max(np.abs(a.samples)) <= 1.0

    def test_empty(self, sine_features):
        empty = MixTrace(*(np.zeros(0),) * 1, (), *(np.zeros(0),) * 5, np.zeros(0, bool), np.zeros(0, int))
        assert len(render_mixed(empty, sine_features)) == 0


class TestOscillator:
    def test_phase_continuity(self):
        freq = np.concatenate([np.full(1000, 300.0), np.linspace(300, 1800, 5000), np.full(1000, 900.0)])
        _, phase = oscillator(freq, SR)
        assert np.max(np.abs(np.diff(phase))) <= 2 * np.pi * freq.max() / SR + 1e-6

    def test_ramp_validation(self):
        with pytest.raises(StimulusError):
            RenderConfig(amp_ramp_ms=-1)
