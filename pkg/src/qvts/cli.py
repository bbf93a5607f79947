"""``qvts`` command line: analyze, track, demo-commutator, gen.

Every command writes ``manifest.json`` next to its outputs. ``--manifest``
reruns a command from such a file and reproduces its outputs bit for bit.
Exit codes: 0 success, 2 usage or input error, 1 internal error.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
from dataclasses import asdict
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import AudioIOError, read_wav, write_csv, write_json, write_text, write_wav
from .hamiltonian import ScheduleConfig, ScheduleError, build_hamiltonian_track
from .quantum import QuantumError, basis_state, density_from_ensemble
from .sonify import KINDS, RenderConfig, StimulusError, StimulusSpec, generate_stimulus, render_mixed, render_stream
from .spectral import (
    FeatureConfig,
    SalienceConfig,
    SpectralError,
    SplitConfig,
    StftConfig,
    extract_features,
    extract_harmonic,
    extract_stochastic,
    spectrogram_distance,
    stft,
)
from .streaming import CollapsePolicy, TrackingError, track_mixed, track_pure

COMMUTATOR_MIN = 0.05
IDEMPOTENCE_RATIO_MAX = 0.25


class UsageError(Exception):
    """Bad flags or unusable input; exit code 2."""


INPUT_ERRORS = (UsageError, AudioIOError, SpectralError, StimulusError, ScheduleError, TrackingError, QuantumError)


def _pair(text: str, sep: str = ":") -> list[float]:
    parts = text.split(sep)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two values separated by {sep!r}, got {text!r}")
    try:
        return [float(Fraction(p.strip())) for p in parts]
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad number in {text!r}") from exc


def _bands(text: str) -> list[list[float]]:
    return [_pair(b) for b in text.split(",") if b]


def _mix(text: str) -> list[float]:
    return _pair(text, sep=",")


def _seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("QVTS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"QVTS_SEED must be an integer, got {env!r}") from exc


def _analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, default=2048, help="analysis window in samples")
    p.add_argument("--fft", type=int, default=4096, help="FFT size in samples")
    p.add_argument("--hop", type=int, default=1024, help="hop size in samples")
    p.add_argument("--bands", type=_bands, default=[[1000.0, 2000.0], [2000.0, 6000.0]], help="lo:hi,lo:hi in Hz")
    p.add_argument(
        "--band-source",
        choices=("stochastic", "input"),
        default="stochastic",
        help="measure band energy on the stochastic residual or on the raw input",
    )


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", type=Path, default=Path("."), help="directory for outputs")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (falls back to $QVTS_SEED, then 0)")
    p.add_argument("--wav-format", choices=("pcm16", "float32"), default="pcm16")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qvts", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qvts {__version__}")
    parser.add_argument("--manifest", type=Path, help="rerun the command recorded in this manifest")
    parser.add_argument("--out-dir", dest="manifest_out_dir", type=Path, help="output directory for --manifest reruns")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("analyze", help="extract salience, band energy and onset tracks")
    p.add_argument("input", type=Path)
    _analysis_flags(p)
    _common_flags(p)

    p = sub.add_parser("track", help="analyze, build the Hamiltonian and track a phon")
    p.add_argument("input", type=Path)
    _analysis_flags(p)
    _common_flags(p)
    p.add_argument("--mode", choices=("pure", "mixed"), default="pure")
    p.add_argument("--init", choices=("u", "d", "r", "l", "f", "s"), default=None, help="initial pure state")
    p.add_argument("--init-mix", type=_mix, default=None, help="p_u,p_d for a mixed initial state, e.g. 1/3,2/3")
    p.add_argument("--decimation", type=int, default=10)
    p.add_argument("--damping-k", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--hop-collapse", type=int, default=5)
    p.add_argument("--noise-band", type=int, default=0, help="index of the band that drives n_x")
    p.add_argument("--pulsation", action="store_true", help="drive n_y with the normalized onset rate")
    p.add_argument("--sonify", action="store_true", help="also render the trace to render.wav")

    p = sub.add_parser("demo-commutator", help="check non-commutativity and idempotence of P and T")
    p.add_argument("input", type=Path)
    _analysis_flags(p)
    _common_flags(p)

    p = sub.add_parser("gen", help="write a test stimulus")
    _common_flags(p)
    d = StimulusSpec()
    p.add_argument("--kind", choices=KINDS, default=d.kind)
    p.add_argument("--duration", type=float, default=d.duration)
    p.add_argument("--sample-rate", type=int, default=d.sample_rate)
    p.add_argument("--glide-a", type=_pair, default=list(d.glide_a), help="start:end Hz")
    p.add_argument("--glide-b", type=_pair, default=list(d.glide_b), help="start:end Hz")
    p.add_argument("--burst", type=_pair, default=list(d.burst), help="start:end s")
    p.add_argument("--burst-band", type=_pair, default=list(d.burst_band), help="lo:hi Hz")
    p.add_argument("--amplitude", type=float, default=d.amplitude)
    p.add_argument("--noise-level", type=float, default=d.noise_level)
    p.add_argument("--freq", type=float, default=d.freq)
    p.add_argument("--rate", type=float, default=d.rate)
    p.add_argument("--output", default="stimulus.wav", help="file name inside --out-dir")
    return parser


def _feature_config(params: dict) -> FeatureConfig:
    try:
        stft_cfg = StftConfig(params["window"], params["fft"], params["hop"])
    except SpectralError as exc:
        raise UsageError(str(exc)) from exc
    return FeatureConfig(
        stft=stft_cfg,
        salience=SalienceConfig(**params["salience"]),
        bands=tuple(tuple(b) for b in params["bands"]),
        band_source=params["band_source"],
    )


def _spectrogram_csv(spec) -> str:
    db = spec.magnitude_db()
    freqs = np.arange(db.shape[1]) * spec.bin_hz
    buf = io.StringIO()
    buf.write("time_s," + ",".join(f"{f:.3f}" for f in freqs) + "\n")
    np.savetxt(buf, np.column_stack([spec.frame_times, db]), fmt="%.4f", delimiter=",")
    return buf.getvalue()


def _manifest(command: str, params: dict, outputs: list[Path], out_dir: Path) -> dict:
    return {
        "command": command,
        "version": __version__,
        "params": params,
        "outputs": sorted(str(p.relative_to(out_dir)) for p in outputs),
    }


def cmd_analyze(params: dict, out_dir: Path) -> list[Path]:
    audio = read_wav(params["input"])
    cfg = _feature_config(params)
    feats = extract_features(audio, cfg)
    spec = stft(audio, cfg.stft)
    onsets = feats.pulsation.onset_times
    return [
        write_csv(out_dir / "features.csv", feats.header(), feats.rows()),
        write_csv(out_dir / "onsets.csv", ["onset_time_s"], ([t] for t in onsets)),
        write_text(out_dir / "spectrogram_db.csv", _spectrogram_csv(spec)),
    ]


def cmd_track(params: dict, out_dir: Path) -> list[Path]:
    mode = params["mode"]
    if params["init"] is not None and params["init_mix"] is not None:
        raise UsageError("--init and --init-mix are mutually exclusive")
    if mode == "pure" and params["init_mix"] is not None:
        raise UsageError("--init-mix needs --mode mixed")
    try:
        sched = ScheduleConfig(params["decimation"], params["damping_k"], params["noise_band"], params["pulsation"])
        policy = CollapsePolicy(params["threshold"], params["hop_collapse"], params["seed"])
    except (ScheduleError, TrackingError) as exc:
        raise UsageError(str(exc)) from exc
    audio = read_wav(params["input"])
    feats = extract_features(audio, _feature_config(params))
    ham = build_hamiltonian_track(feats, sched)
    outputs = [
        write_csv(out_dir / "features.csv", feats.header(), feats.rows()),
        write_csv(out_dir / "hamiltonian.csv", ham.header(), ham.rows()),
    ]
    render = RenderConfig(noise_seed=params["seed"])
    if mode == "pure":
        trace = track_pure(ham, feats, basis_state(params["init"] or "u"), policy)
        sonified = render_stream(trace, feats, render) if params["sonify"] else None
    else:
        if params["init_mix"] is not None:
            p_u, p_d = params["init_mix"]
            if min(p_u, p_d) < 0 or abs(p_u + p_d - 1) > 1e-9:
                raise UsageError(f"--init-mix must be two non-negative weights summing to 1, got {p_u},{p_d}")
            rho = density_from_ensemble([(p_u, basis_state("u")), (p_d, basis_state("d"))])
        else:
            rho = basis_state(params["init"] or "u").density()
        trace = track_mixed(ham, rho, policy)
        sonified = render_mixed(trace, feats, render) if params["sonify"] else None
    outputs.append(write_csv(out_dir / "trace.csv", trace.header(), trace.rows()))
    outputs.append(write_text(out_dir / "trace.json", trace.to_json() + "\n"))
    if sonified is not None:
        outputs.append(write_wav(out_dir / "render.wav", sonified, params["wav_format"]))
    return outputs


def cmd_demo_commutator(params: dict, out_dir: Path) -> list[Path]:
    audio = read_wav(params["input"])
    cfg = _feature_config(params)
    split = SplitConfig(stft=cfg.stft)

    def P(a):
        return extract_harmonic(a, split)

    def T(a):
        return extract_stochastic(a, split)

    t, p = T(audio), P(audio)
    pt, tp = P(t), T(p)
    tt = T(t)

    def dist(a, b):
        return spectrogram_distance(stft(a, cfg.stft), stft(b, cfg.stft))

    commutator = dist(pt, tp)
    idem = dist(t, tt)
    first = dist(audio, t)
    ratio = idem / first if first > 0 else 0.0
    report = {
        "commutator_distance": commutator,
        "commutator_pass": bool(commutator > COMMUTATOR_MIN),
        "commutator_threshold": COMMUTATOR_MIN,
        "idempotence_distance": idem,
        "first_extraction_distance": first,
        "idempotence_ratio": ratio,
        "idempotence_pass": bool(ratio < IDEMPOTENCE_RATIO_MAX),
        "idempotence_ratio_threshold": IDEMPOTENCE_RATIO_MAX,
    }
    fmt = params["wav_format"]
    outputs = [
        write_wav(out_dir / "T.wav", t, fmt),
        write_wav(out_dir / "P.wav", p, fmt),
        write_wav(out_dir / "PT.wav", pt, fmt),
        write_wav(out_dir / "TP.wav", tp, fmt),
        write_json(out_dir / "report.json", report),
    ]
    print(
        f"commutator distance {commutator:.4f} ({'pass' if report['commutator_pass'] else 'fail'}), "
        f"idempotence ratio {ratio:.4f} ({'pass' if report['idempotence_pass'] else 'fail'})",
        file=sys.stderr,
    )
    return outputs


def cmd_gen(params: dict, out_dir: Path) -> list[Path]:
    spec = StimulusSpec(
        kind=params["kind"],
        duration=params["duration"],
        sample_rate=params["sample_rate"],
        glide_a=tuple(params["glide_a"]),
        glide_b=tuple(params["glide_b"]),
        burst=tuple(params["burst"]),
        burst_band=tuple(params["burst_band"]),
        amplitude=params["amplitude"],
        noise_level=params["noise_level"],
        freq=params["freq"],
        rate=params["rate"],
        noise_seed=params["seed"],
    )
    name = params["output"]
    if Path(name).name != name:
        raise UsageError(f"--output must be a bare file name, got {name!r}")
    return [write_wav(out_dir / name, generate_stimulus(spec), params["wav_format"])]


COMMANDS = {
    "analyze": cmd_analyze,
    "track": cmd_track,
    "demo-commutator": cmd_demo_commutator,
    "gen": cmd_gen,
}


def run(command: str, params: dict, out_dir: Path) -> Path:
    """Run ``command`` and write its manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    outputs = COMMANDS[command](params, out_dir)
    return write_json(out_dir / "manifest.json", _manifest(command, params, outputs, out_dir))


def _params_from_args(ns: argparse.Namespace) -> tuple[dict, Path]:
    params = {k: v for k, v in vars(ns).items() if k not in ("command", "manifest", "manifest_out_dir", "out_dir")}
    params["seed"] = _seed(ns.seed)
    if "input" in params:
        params["input"] = str(Path(params["input"]).resolve())
        params["salience"] = asdict(SalienceConfig())
    return params, ns.out_dir


def _load_manifest(path: Path) -> tuple[str, dict]:
    try:
        doc = json.loads(Path(path).read_text())
        command, params = doc["command"], doc["params"]
    except FileNotFoundError as exc:
        raise UsageError(f"no such manifest: {path}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed manifest {path}: {exc}") from exc
    if command not in COMMANDS:
        raise UsageError(f"manifest {path} names unknown command {command!r}")
    return command, params


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.manifest is not None:
            if ns.command is not None:
                raise UsageError("--manifest cannot be combined with a command")
            command, params = _load_manifest(ns.manifest)
            out_dir = ns.manifest_out_dir or ns.manifest.parent
        elif ns.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a command is required")
        else:
            command = ns.command
            params, out_dir = _params_from_args(ns)
        manifest = run(command, params, out_dir)
    except INPUT_ERRORS as exc:
        print(f"qvts: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"qvts: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
