"""Tracking loops: pure-state streaming with collapses, and mixed-state mixing.

In both loops the state at frame ``m`` is ``U(m)`` applied to the initial
state or to the state left by the most recent collapse. Measurements are
sampled every frame; only frames with ``m % hop_collapse == 0`` reset the
state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .hamiltonian import HamiltonianTrack
from .quantum import (
    DensityMatrix,
    PhonState,
    basis_state,
    make_rng,
    matrix_to_json,
    measure_density,
    projector_pair,
)
from .spectral import DEFAULT_BANDS, FeatureTracks

PITCH_UP, PITCH_DOWN, NOISE_LO, NOISE_HI = "pitch_up", "pitch_down", "noise_lo", "noise_hi"
PITCH_LABELS = (PITCH_UP, PITCH_DOWN)
NOISE_LABELS = {NOISE_LO: DEFAULT_BANDS[0], NOISE_HI: DEFAULT_BANDS[1]}

_SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class TrackingError(ValueError):
    pass


@dataclass(frozen=True)
class CollapsePolicy:
    threshold: float = 0.7
    hop_collapse: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise TrackingError("threshold must lie in [0, 1]")
        if self.hop_collapse < 1:
            raise TrackingError("hop_collapse must be >= 1")


def pitchiness(state: PhonState) -> float:
    """``|| psi - sigma_z psi ||``, i.e. ``2 |a_d|``: 0 for |u>, 2 for |d>."""
    v = state.vector
    return float(np.linalg.norm(v - _SIGMA_Z @ v))


def upper_lower(freq1, freq2) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame upper and lower pitch; a missing (0) pitch is replaced by the other."""
    f1 = np.asarray(freq1, dtype=float)
    f2 = np.asarray(freq2, dtype=float)
    hi, lo = np.maximum(f1, f2), np.minimum(f1, f2)
    lo = np.where(lo > 0, lo, hi)
    return hi, lo


def mix_weights(p_u: float, p_d: float) -> tuple[float, float, float]:
    """``(amp_noise, amp_up, amp_down)``: the shared part becomes noise."""
    common = min(p_u, p_d)
    return common, p_u - common, p_d - common


@dataclass(frozen=True, eq=False)
class StreamTrace:
    frame_times: np.ndarray
    states: tuple[PhonState, ...]
    labels: tuple[str, ...]
    selected_freq: np.ndarray
    collapse_event: np.ndarray

    @staticmethod
    def header() -> list[str]:
        return ["time_s", "label", "selected_freq_hz", "a_u_re", "a_u_im", "a_d_re", "a_d_im", "collapse_event"]

    def rows(self):
        for m, s in enumerate(self.states):
            yield [
                self.frame_times[m], self.labels[m], self.selected_freq[m],
                s.a_u.real, s.a_u.imag, s.a_d.real, s.a_d.imag, int(self.collapse_event[m]),
            ]

    def to_json(self) -> str:
        return json.dumps({"columns": self.header(), "rows": [_plain(r) for r in self.rows()]})


@dataclass(frozen=True, eq=False)
class MixTrace:
    frame_times: np.ndarray
    rho: tuple[DensityMatrix, ...]
    p_u: np.ndarray
    p_d: np.ndarray
    amp_noise: np.ndarray
    amp_up: np.ndarray
    amp_down: np.ndarray
    collapse_event: np.ndarray
    outcome: np.ndarray  # 0 = up, 1 = down, -1 = no collapse on this frame

    @staticmethod
    def header() -> list[str]:
        return ["time_s", "p_u", "p_d", "amp_noise", "amp_up", "amp_down", "collapse_event", "outcome"]

    def rows(self):
        for m in range(self.p_u.size):
            yield [
                self.frame_times[m], self.p_u[m], self.p_d[m], self.amp_noise[m],
                self.amp_up[m], self.amp_down[m], int(self.collapse_event[m]), int(self.outcome[m]),
            ]

    def to_json(self) -> str:
        rows = [_plain(r) + [matrix_to_json(rho)] for r, rho in zip(self.rows(), self.rho)]
        return json.dumps({"columns": self.header() + ["rho"], "rows": rows})


def _plain(row):
    return [v.item() if isinstance(v, np.generic) else v for v in row]


def track_pure(
    ham: HamiltonianTrack,
    features: FeatureTracks,
    init: PhonState,
    policy: CollapsePolicy = CollapsePolicy(),
) -> StreamTrace:
    """Follow a phon through the scene, labelling every frame.

    A state is pitchy when its pitchiness is below ``threshold`` or above
    ``2 - threshold``; it is then measured along z (pitch-up selects the
    upper pitch, pitch-down the lower). Otherwise it is measured along x
    (``|r>`` selects the low noise band, ``|l>`` the high one).
    """
    n = ham.num_frames
    if features.num_frames != n:
        raise TrackingError(f"Hamiltonian has {n} frames, features have {features.num_frames}")
    rng = make_rng(policy.seed)
    upper, lower = upper_lower(features.salience.freq1, features.salience.freq2)
    thr = policy.threshold
    r_vec = basis_state("r").vector
    reset = {lab: basis_state(b) for lab, b in ((PITCH_UP, "u"), (PITCH_DOWN, "d"), (NOISE_LO, "r"), (NOISE_HI, "l"))}

    base = init.vector
    states, labels = [], []
    freq = np.zeros(n)
    collapse = np.zeros(n, dtype=bool)
    for m in range(n):
        v = ham.unitaries[m].m @ base
        v = v / np.linalg.norm(v)
        sdiff = np.linalg.norm(v - _SIGMA_Z @ v)
        if sdiff < thr or sdiff > 2 - thr:
            p = abs(v[0]) ** 2
            label = PITCH_UP if rng.random() < p else PITCH_DOWN
            freq[m] = upper[m] if label == PITCH_UP else lower[m]
        else:
            p = abs(np.vdot(r_vec, v)) ** 2
            label = NOISE_LO if rng.random() < p else NOISE_HI
            lo, hi = NOISE_LABELS[label]
            freq[m] = 0.5 * (lo + hi)
        if m % policy.hop_collapse == 0:
            base = reset[label].vector
            v = base
            collapse[m] = True
        labels.append(label)
        states.append(PhonState.from_vector(v))
    return StreamTrace(np.asarray(ham.frame_times), tuple(states), tuple(labels), freq, collapse)


def track_mixed(
    ham: HamiltonianTrack,
    init: DensityMatrix,
    policy: CollapsePolicy = CollapsePolicy(),
) -> MixTrace:
    """Evolve a density matrix, record pitch probabilities and mix weights,
    and collapse it along z every ``hop_collapse`` frames.

    Probabilities and ``rho`` are recorded before the collapse of their frame.
    """
    n = ham.num_frames
    rng = make_rng(policy.seed)
    proj = projector_pair("z")
    base = init
    rhos = []
    p_u, p_d = np.zeros(n), np.zeros(n)
    amps = np.zeros((n, 3))
    collapse = np.zeros(n, dtype=bool)
    outcome = np.full(n, -1, dtype=int)
    for m in range(n):
        u = ham.unitaries[m].m
        r = u @ base.r @ u.conj().T
        rho = DensityMatrix((r + r.conj().T) / 2)
        p_u[m] = float(np.trace(rho.r @ proj[0].m).real)
        p_d[m] = float(np.trace(rho.r @ proj[1].m).real)
        amps[m] = mix_weights(p_u[m], p_d[m])
        rhos.append(rho)
        if m % policy.hop_collapse == 0:
            outcome[m], base = measure_density(rho, proj, rng)
            collapse[m] = True
    return MixTrace(
        np.asarray(ham.frame_times), tuple(rhos), p_u, p_d,
        amps[:, 0], amps[:, 1], amps[:, 2], collapse, outcome,
    )


def continuation(trace: StreamTrace, burst: tuple[float, float], settle: float = 0.3) -> str:
    """Classify a run as ``"bounce"``, ``"cross"`` or ``"undecided"``.

    The branch held before the burst (majority pitch label) is compared with
    the majority pitch label from ``burst_end + settle`` to the end. Keeping
    the same label means returning to the same side of the X, a bounce.
    """
    t = trace.frame_times
    labels = np.array(trace.labels)

    def majority(sel):
        up = np.count_nonzero(sel & (labels == PITCH_UP))
        down = np.count_nonzero(sel & (labels == PITCH_DOWN))
        if up == down:
            return None
        return PITCH_UP if up > down else PITCH_DOWN

    before = majority(t < burst[0])
    after = majority(t >= burst[1] + settle)
    if before is None or after is None:
        return "undecided"
    return "bounce" if before == after else "cross"


def turbulent_after(trace: StreamTrace, t0: float) -> int:
    """Number of noise-labelled frames at or after ``t0``."""
    return sum(1 for t, lab in zip(trace.frame_times, trace.labels) if t >= t0 and lab in NOISE_LABELS)
