"""Time-varying, block-commutative Hamiltonians built from feature tracks.

Each field component is held constant over blocks of ``decimation`` frames
and multiplied by ``exp(-k * (m mod decimation))``, so inside a block the
Hamiltonian is ``g(m) S`` with a fixed ``S`` and commutes with itself. The
integral of H is approximated by a cumulative sum over frames (dt = 1 frame).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantum import Unitary, unitary_from_integrated_field
from .spectral import FeatureTracks


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class FieldVector:
    n_x: float  # turbulence potential
    n_y: float  # myoelastic potential
    n_z: float  # phonation potential

    def as_array(self) -> np.ndarray:
        return np.array([self.n_x, self.n_y, self.n_z])


@dataclass(frozen=True)
class ScheduleConfig:
    """``n_z`` comes from the top salience, ``n_x`` from band ``noise_band``,
    ``n_y`` from the normalized onset rate when ``use_pulsation`` is set."""

    decimation: int = 10
    k: float = 0.1
    noise_band: int = 0
    use_pulsation: bool = False

    def __post_init__(self):
        if self.decimation < 1:
            raise ScheduleError("decimation must be >= 1")
        if self.k < 0:
            raise ScheduleError("damping k must be >= 0")


@dataclass(frozen=True, eq=False)
class HamiltonianTrack:
    frame_times: np.ndarray
    field: np.ndarray  # (frames, 3) damped (n_x, n_y, n_z)
    theta: np.ndarray  # (frames, 3) cumulative sum of field
    unitaries: tuple[Unitary, ...]

    @property
    def num_frames(self) -> int:
        return self.field.shape[0]

    def hamiltonian(self, m: int) -> np.ndarray:
        nx, ny, nz = self.field[m]
        return np.array([[nz, nx - 1j * ny], [nx + 1j * ny, -nz]])

    def rows(self):
        for m in range(self.num_frames):
            yield [self.frame_times[m], *self.field[m], *self.theta[m]]

    @staticmethod
    def header() -> list[str]:
        return ["time_s", "nx", "ny", "nz", "theta_x", "theta_y", "theta_z"]


def decimate_hold(track, decimation: int) -> np.ndarray:
    """Sample-and-hold every ``decimation``-th value: ``out[m] = x[(m // d) * d]``."""
    if decimation < 1:
        raise ScheduleError("decimation must be >= 1")
    x = np.asarray(track, dtype=float)
    return np.repeat(x[::decimation], decimation)[: x.size]


def damping_envelope(num_frames: int, decimation: int, k: float) -> np.ndarray:
    """``exp(-k * (m mod decimation))`` over full blocks, zero over a trailing partial block."""
    if decimation < 1:
        raise ScheduleError("decimation must be >= 1")
    block = np.exp(-k * np.arange(decimation))
    full = num_frames // decimation
    env = np.zeros(num_frames)
    env[: full * decimation] = np.tile(block, full)
    return env


def build_hamiltonian_track(features: FeatureTracks, cfg: ScheduleConfig = ScheduleConfig()) -> HamiltonianTrack:
    sal = features.salience.sal1
    energy = features.bands.energy
    if energy.shape[0] != sal.size or features.pulsation.strength.size != sal.size:
        raise ScheduleError("feature tracks have different lengths")
    if not 0 <= cfg.noise_band < energy.shape[1]:
        raise ScheduleError(f"noise_band {cfg.noise_band} out of range")
    n = sal.size
    n_z = decimate_hold(sal, cfg.decimation)
    n_x = decimate_hold(energy[:, cfg.noise_band], cfg.decimation)
    if cfg.use_pulsation:
        rate = features.pulsation.rate
        top = rate.max() if rate.size else 0.0
        n_y = decimate_hold(rate / top if top > 0 else rate, cfg.decimation)
    else:
        n_y = np.zeros(n)
    env = damping_envelope(n, cfg.decimation, cfg.k)
    return hamiltonian_from_fields(features.frame_times, np.stack([n_x, n_y, n_z], axis=1) * env[:, None])


def hamiltonian_from_fields(frame_times, field) -> HamiltonianTrack:
    """Cumulative integral and per-frame unitaries for an already-shaped field."""
    field = np.asarray(field, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(field)):
        raise ScheduleError("field must be finite")
    theta = np.cumsum(field, axis=0)
    unitaries = tuple(unitary_from_integrated_field(t) for t in theta)
    return HamiltonianTrack(np.asarray(frame_times, dtype=float), field, theta, unitaries)
