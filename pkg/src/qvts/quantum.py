"""Exact 2x2 algebra for phon states.

A phon is a two-level system with three measurement axes: phonation (z,
pitch-up ``u`` / pitch-down ``d``), turbulence (x, ``r`` / ``l``) and slow
myoelastic pulsation (y, faster ``f`` / slower ``s``). States are stored as
coordinates in the ``{|u>, |d>}`` basis.

All value types are immutable. Sampling functions take an explicit
:class:`numpy.random.Generator`; use :func:`make_rng` to build one from a seed.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ALGEBRA_TOL = 1e-12
ACCUM_TOL = 1e-9

SQRT1_2 = 1.0 / math.sqrt(2.0)

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_IDENTITY = np.eye(2, dtype=complex)

_BASIS = {
    "u": (1.0, 0.0),
    "d": (0.0, 1.0),
    "r": (SQRT1_2, SQRT1_2),
    "l": (SQRT1_2, -SQRT1_2),
    "f": (SQRT1_2, 1j * SQRT1_2),
    "s": (SQRT1_2, -1j * SQRT1_2),
}


class QuantumError(ValueError):
    """Raised when an input violates a state or operator invariant."""


def make_rng(seed: int | None) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give identical draws on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(m, shape=(2, 2)) -> np.ndarray:
    arr = np.array(m, dtype=complex)
    if arr.shape != shape:
        raise QuantumError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise QuantumError("matrix has non-finite entries")
    arr.flags.writeable = False
    return arr


def _is_hermitian(m: np.ndarray, tol: float = ALGEBRA_TOL) -> bool:
    return bool(np.max(np.abs(m - m.conj().T)) <= tol)


@dataclass(frozen=True)
class PhonState:
    """Normalized pure state ``a_u |u> + a_d |d>``."""

    a_u: complex
    a_d: complex

    def __post_init__(self):
        a_u, a_d = complex(self.a_u), complex(self.a_d)
        if not all(map(math.isfinite, (a_u.real, a_u.imag, a_d.real, a_d.imag))):
            raise QuantumError("amplitudes must be finite")
        norm2 = abs(a_u) ** 2 + abs(a_d) ** 2
        if abs(norm2 - 1.0) > ACCUM_TOL:
            raise QuantumError(f"state is not normalized (|a_u|^2 + |a_d|^2 = {norm2!r})")
        object.__setattr__(self, "a_u", a_u)
        object.__setattr__(self, "a_d", a_d)

    @classmethod
    def from_vector(cls, v: Sequence[complex], normalize: bool = False) -> "PhonState":
        vec = np.asarray(v, dtype=complex).reshape(2)
        if normalize:
            n = np.linalg.norm(vec)
            if n == 0:
                raise QuantumError("cannot normalize the zero vector")
            vec = vec / n
        return cls(vec[0], vec[1])

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.a_u, self.a_d], dtype=complex)

    @property
    def p_u(self) -> float:
        return abs(self.a_u) ** 2

    @property
    def p_d(self) -> float:
        return abs(self.a_d) ** 2

    def canonical(self) -> "PhonState":
        """Same ray with the first nonzero amplitude rotated to be real-positive."""
        return PhonState.from_vector(_fix_phase(self.vector))

    def density(self) -> "DensityMatrix":
        v = self.vector
        return DensityMatrix(np.outer(v, v.conj()))

    def isclose(self, other: "PhonState", tol: float = ACCUM_TOL, up_to_phase: bool = False) -> bool:
        if up_to_phase:
            return abs(abs(np.vdot(self.vector, other.vector)) - 1.0) <= tol
        return bool(np.max(np.abs(self.vector - other.vector)) <= tol)


def _fix_phase(v: np.ndarray) -> np.ndarray:
    for c in v:
        if abs(c) > ALGEBRA_TOL:
            return v * (abs(c) / c)
    return v


@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian 2x2 measurement operator."""

    m: np.ndarray = field(repr=True)

    def __post_init__(self):
        arr = _frozen(self.m)
        if not _is_hermitian(arr):
            raise QuantumError("observable must be Hermitian")
        object.__setattr__(self, "m", arr)

    def __matmul__(self, other):
        return self.m @ getattr(other, "m", other)


@dataclass(frozen=True, eq=False)
class Projector:
    """Hermitian idempotent 2x2 matrix."""

    m: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.m)
        if not _is_hermitian(arr):
            raise QuantumError("projector must be Hermitian")
        if np.max(np.abs(arr @ arr - arr)) > ALGEBRA_TOL:
            raise QuantumError("projector must be idempotent")
        tr = np.trace(arr).real
        if min(abs(tr - k) for k in (0, 1, 2)) > ACCUM_TOL:
            raise QuantumError(f"projector trace {tr} is not 0, 1 or 2")
        object.__setattr__(self, "m", arr)

    @classmethod
    def onto(cls, state: PhonState) -> "Projector":
        v = state.vector
        return cls(np.outer(v, v.conj()))


@dataclass(frozen=True, eq=False)
class Unitary:
    m: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.m)
        if np.max(np.abs(arr.conj().T @ arr - _IDENTITY)) > 1e-10:
            raise QuantumError("matrix is not unitary")
        object.__setattr__(self, "m", arr)

    @property
    def dagger(self) -> "Unitary":
        return Unitary(self.m.conj().T)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, unit-trace, positive semidefinite 2x2 state."""

    r: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.r)
        if not _is_hermitian(arr):
            raise QuantumError("density matrix must be Hermitian")
        tr = np.trace(arr).real
        if abs(tr - 1.0) > ACCUM_TOL:
            raise QuantumError(f"density matrix trace is {tr}, expected 1")
        if np.linalg.eigvalsh(arr).min() < -ACCUM_TOL:
            raise QuantumError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "r", arr)

    @classmethod
    def maximally_mixed(cls) -> "DensityMatrix":
        return cls(_IDENTITY / 2)

    @property
    def p_u(self) -> float:
        return float(self.r[0, 0].real)

    @property
    def p_d(self) -> float:
        return float(self.r[1, 1].real)

    def isclose(self, other: "DensityMatrix", tol: float = ACCUM_TOL) -> bool:
        return bool(np.max(np.abs(self.r - other.r)) <= tol)


@lru_cache(maxsize=None)
def pauli(axis: str) -> Observable:
    """Pauli matrix for ``axis`` in ``{"x", "y", "z"}``."""
    try:
        return Observable(_PAULI[axis])
    except KeyError:
        raise QuantumError(f"unknown axis {axis!r}") from None


def basis_state(label: str) -> PhonState:
    """Eigenstate named by ``label``: u/d (z), r/l (x) or f/s (y)."""
    try:
        a_u, a_d = _BASIS[label]
    except KeyError:
        raise QuantumError(f"unknown basis label {label!r}") from None
    return PhonState(a_u, a_d)


def _as_direction(n) -> np.ndarray:
    vec = np.asarray(n, dtype=float).reshape(3)
    if not np.all(np.isfinite(vec)):
        raise QuantumError("direction must be finite")
    return vec


def sigma_dot(n) -> np.ndarray:
    """``n_x sx + n_y sy + n_z sz`` for any real 3-vector (no normalization check)."""
    nx, ny, nz = _as_direction(n)
    return np.array([[nz, nx - 1j * ny], [nx + 1j * ny, -nz]], dtype=complex)


def observable_along(n) -> Observable:
    """Measurement operator along the unit direction ``n = (n_x, n_y, n_z)``."""
    vec = _as_direction(n)
    if abs(vec @ vec - 1.0) > ACCUM_TOL:
        raise QuantumError(f"direction {tuple(vec)} is not a unit vector")
    return Observable(sigma_dot(vec))


def eigensystem(o: Observable | np.ndarray) -> list[tuple[float, PhonState]]:
    """Eigenpairs in descending eigenvalue order, each eigenvector phase-canonical."""
    cached = getattr(o, "_eig", None)
    if cached is not None:
        return list(cached)
    m = np.asarray(getattr(o, "m", o), dtype=complex)
    if m.shape != (2, 2) or not _is_hermitian(m):
        raise QuantumError("eigensystem requires a Hermitian 2x2 matrix")
    w, v = np.linalg.eigh(m)
    order = np.argsort(-w, kind="stable")
    pairs = [(float(w[i]), PhonState.from_vector(_fix_phase(v[:, i]), normalize=True)) for i in order]
    if isinstance(o, Observable):
        # observables are immutable, so their eigensystem can be memoized
        object.__setattr__(o, "_eig", tuple(pairs))
    return pairs


def born_probability(state: PhonState, target: PhonState) -> float:
    """``|<target|state>|^2``."""
    p = abs(np.vdot(target.vector, state.vector)) ** 2
    return float(min(max(p, 0.0), 1.0))


def expectation(o: Observable | np.ndarray, state: PhonState) -> float:
    m = getattr(o, "m", o)
    v = state.vector
    return float(np.vdot(v, m @ v).real)


def measure_and_collapse(
    state: PhonState, o: Observable, rng: np.random.Generator
) -> tuple[int, PhonState]:
    """Sample an outcome of ``o`` by the Born rule and return ``(outcome, post_state)``.

    ``o`` must have eigenvalues +1 and -1. The post state is the matching
    eigenvector with its first nonzero component real-positive.
    """
    (lam_hi, e_hi), (lam_lo, e_lo) = eigensystem(o)
    if abs(lam_hi - 1.0) > ACCUM_TOL or abs(lam_lo + 1.0) > ACCUM_TOL:
        raise QuantumError("observable must have eigenvalues +1 and -1")
    p_plus = born_probability(state, e_hi)
    if rng.random() < p_plus:
        return 1, e_hi
    return -1, e_lo


def density_from_ensemble(pairs: Iterable[tuple[float, PhonState]]) -> DensityMatrix:
    """``sum_j p_j |psi_j><psi_j|`` for a probability-weighted ensemble."""
    pairs = list(pairs)
    if not pairs:
        raise QuantumError("ensemble is empty")
    probs = np.array([p for p, _ in pairs], dtype=float)
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise QuantumError("ensemble probabilities must be non-negative")
    if abs(probs.sum() - 1.0) > ACCUM_TOL:
        raise QuantumError(f"ensemble probabilities sum to {probs.sum()}, expected 1")
    rho = np.zeros((2, 2), dtype=complex)
    for p, s in pairs:
        v = s.vector
        rho += p * np.outer(v, v.conj())
    return DensityMatrix(rho)


def purity(rho: DensityMatrix) -> float:
    """``Tr[rho^2]``; 1 for pure states, 1/2 for the maximally mixed state."""
    return float(np.trace(rho.r @ rho.r).real)


def projector_pair(label: str) -> tuple[Projector, Projector]:
    """Complete projector system of the axis owning ``label`` (``"z"``, ``"x"`` or ``"y"``)."""
    plus, minus = {"z": ("u", "d"), "x": ("r", "l"), "y": ("f", "s")}[label]
    return Projector.onto(basis_state(plus)), Projector.onto(basis_state(minus))


def measure_density(
    rho: DensityMatrix, projectors: Sequence[Projector], rng: np.random.Generator
) -> tuple[int, DensityMatrix]:
    """Sample outcome ``j`` with probability ``Tr[rho Pi_j]`` and collapse to ``Pi_j rho Pi_j / p_j``."""
    mats = [p.m for p in projectors]
    if not mats:
        raise QuantumError("projector system is empty")
    if np.max(np.abs(sum(mats) - _IDENTITY)) > 1e-10:
        raise QuantumError("projector system is not complete")
    probs = np.array([max(np.trace(rho.r @ m).real, 0.0) for m in mats])
    cum = np.cumsum(probs)
    x = rng.random() * cum[-1]
    j = int(np.searchsorted(cum, x, side="right"))
    j = min(j, len(mats) - 1)
    if probs[j] == 0.0:  # only reachable through rounding at the upper edge
        j = int(np.flatnonzero(probs)[-1])
    post = mats[j] @ rho.r @ mats[j] / probs[j]
    post = (post + post.conj().T) / 2
    return j, DensityMatrix(post)


def commutator(a, b) -> np.ndarray:
    """``ab - ba``."""
    a = np.asarray(getattr(a, "m", a), dtype=complex)
    b = np.asarray(getattr(b, "m", b), dtype=complex)
    return a @ b - b @ a


def unitary_from_integrated_field(theta) -> Unitary:
    """``exp(-i theta . sigma)`` in closed form.

    With ``t = |theta|`` and ``n = theta / t`` this is
    ``cos(t) I - i sin(t) (n . sigma)``; ``theta = 0`` gives the identity.
    ``theta`` need not be normalized.
    """
    return Unitary(_closed_form_exp(theta))


def _closed_form_exp(theta) -> np.ndarray:
    vec = _as_direction(theta)
    t = math.sqrt(float(vec @ vec))
    if t == 0.0:
        return _IDENTITY.copy()
    return math.cos(t) * _IDENTITY - 1j * math.sin(t) * sigma_dot(vec / t)


def evolve_pure(state: PhonState, u: Unitary) -> PhonState:
    v = u.m @ state.vector
    # renormalize away rounding so long chains stay inside the invariant
    return PhonState.from_vector(v / np.linalg.norm(v))


def evolve_density(rho: DensityMatrix, u: Unitary) -> DensityMatrix:
    """``U rho U^dagger``."""
    r = u.m @ rho.r @ u.m.conj().T
    return DensityMatrix((r + r.conj().T) / 2)


def matrix_to_json(m) -> list[list[list[float]]]:
    """Row-major ``[re, im]`` pairs."""
    arr = np.asarray(getattr(m, "m", getattr(m, "r", m)), dtype=complex)
    return [[[float(c.real), float(c.imag)] for c in row] for row in arr]


def matrix_from_json(data) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in data], dtype=complex)
