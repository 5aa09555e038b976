"""Truncated Fock-space states and operators for a single bosonic mode.

Everything lives on the number basis |0>, ..., |D-1> with dense complex
arrays. Constructors renormalise after truncation but first measure the
truncated tail weight, so basis-cutoff error is policed rather than
silently absorbed. Operators are plain ndarrays; states get a thin
immutable wrapper with norm bookkeeping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .exceptions import ConfigError, DimensionError, DomainError, TruncationError

DEFAULT_LEAK_TOL = 1e-8
EXPECT_NORM_TOL = 1e-9


class StateVector:
    """Complex amplitudes over the truncated number basis.

    Immutable after construction (safe to share across threads); the
    amplitude array is exposed as a read-only view.
    """

    __slots__ = ("_amps",)

    def __init__(self, amps):
        arr = np.asarray(amps, dtype=complex).copy()
        if arr.ndim != 1 or arr.size < 2:
            raise DimensionError("state needs a 1-D amplitude array of length >= 2")
        if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
            raise DomainError("non-finite amplitude in state vector")
        arr.setflags(write=False)
        self._amps = arr

    @property
    def amps(self) -> np.ndarray:
        return self._amps

    @property
    def dim(self) -> int:
        return self._amps.size

    def norm_sq(self) -> float:
        return float(np.sum(self._amps.real**2 + self._amps.imag**2))

    def leakage(self) -> float:
        """Occupation of the top retained level |D-1>."""
        return float(abs(self._amps[-1]) ** 2)

    def is_normalized(self, tol: float = 1e-12) -> bool:
        return abs(self.norm_sq() - 1.0) <= tol

    def normalized(self) -> "StateVector":
        n = math.sqrt(self.norm_sq())
        if n == 0.0:
            raise DomainError("cannot normalise the zero vector")
        return StateVector(self._amps / n)

    def fidelity(self, other: "StateVector") -> float:
        """|<self|other>|^2 for normalised inputs."""
        if other.dim != self.dim:
            raise DimensionError("dimension mismatch in fidelity")
        return float(abs(np.vdot(self._amps, other.amps)) ** 2)

    def __repr__(self) -> str:  # pragma: no cover
        return f"StateVector(dim={self.dim}, norm_sq={self.norm_sq():.6g})"


# ---------------------------------------------------------------------------
# initial-state descriptions


@dataclass(frozen=True)
class Coherent:
    alpha: complex


@dataclass(frozen=True)
class Number:
    n: int


@dataclass(frozen=True)
class Thermal:
    nbar: float


@dataclass(frozen=True)
class Squeezed:
    alpha: complex
    r: float


InitialState = Coherent | Number | Thermal | Squeezed


@dataclass(frozen=True)
class ThermalWeights:
    """Geometric number-state weights for sampling thermal mixtures.

    `weights` sums to 1 over levels 0..D-1 (renormalised after
    truncation); trajectories draw one number state per run from it.
    """

    weights: np.ndarray
    nbar: float

    @property
    def dim(self) -> int:
        return self.weights.size

    def mean(self) -> float:
        return float(np.sum(np.arange(self.dim) * self.weights))


def mean_occupation(init: InitialState) -> float:
    """Initial <n> of the ideal (untruncated) state."""
    if isinstance(init, Coherent):
        return abs(init.alpha) ** 2
    if isinstance(init, Number):
        return float(init.n)
    if isinstance(init, Thermal):
        return float(init.nbar)
    if isinstance(init, Squeezed):
        return abs(init.alpha) ** 2 + math.sinh(init.r) ** 2
    raise ConfigError(f"unknown initial state {init!r}")


# ---------------------------------------------------------------------------
# operators


def annihilation(dim: int) -> np.ndarray:
    """Lowering operator: nonzero first superdiagonal, a[k-1, k] = sqrt(k)."""
    if dim < 2:
        raise DimensionError("dimension must be >= 2")
    return np.diag(np.sqrt(np.arange(1.0, dim)), k=1).astype(complex)


def creation(dim: int) -> np.ndarray:
    return annihilation(dim).conj().T


def number_op(dim: int) -> np.ndarray:
    if dim < 2:
        raise DimensionError("dimension must be >= 2")
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def expect(state: StateVector, op: np.ndarray) -> complex:
    """<psi|O|psi> for a normalised state."""
    if op.shape != (state.dim, state.dim):
        raise DimensionError(
            f"operator shape {op.shape} does not match state dim {state.dim}"
        )
    if abs(state.norm_sq() - 1.0) > EXPECT_NORM_TOL:
        raise DomainError("expect() requires a normalised state")
    return complex(np.vdot(state.amps, op @ state.amps))


# ---------------------------------------------------------------------------
# state constructors


def coherent_amplitudes(alpha: complex, dim: int) -> np.ndarray:
    """Untruncated coherent amplitudes e^{-|a|^2/2} a^k / sqrt(k!), cut at dim."""
    c = np.zeros(dim, dtype=complex)
    c[0] = math.exp(-abs(alpha) ** 2 / 2.0)
    for k in range(1, dim):
        c[k] = c[k - 1] * alpha / math.sqrt(k)
    return c


def squeezed_vacuum_amplitudes(r: float, dim: int) -> np.ndarray:
    """Amplitudes of the squeezed vacuum: even levels only.

    Uses the stable tanh-power closed form of the disentangled squeeze
    operator; the k -> k+2 recursion avoids explicit factorials.
    """
    s = np.zeros(dim, dtype=complex)
    s[0] = 1.0 / math.sqrt(math.cosh(r))
    half_tanh = -math.tanh(r) / 2.0
    for k in range(0, dim - 2, 2):
        s[k + 2] = s[k] * half_tanh * math.sqrt((k + 1) * (k + 2)) / (k // 2 + 1)
    return s


def displacement_matrix(alpha: complex, dim: int) -> np.ndarray:
    """exp(alpha a^dag - alpha* a) at dimension dim (exact finite expm)."""
    if alpha == 0:
        return np.eye(dim, dtype=complex)
    a = annihilation(dim)
    return expm(alpha * a.conj().T - np.conj(alpha) * a)


def make_state(
    init: InitialState, dim: int, leak_tol: float = DEFAULT_LEAK_TOL
) -> StateVector | ThermalWeights:
    """Build the initial state at truncation `dim`.

    Coherent and squeezed constructors raise TruncationError when the
    weight lost to truncation (before renormalisation) exceeds
    `leak_tol`. Thermal input returns a ThermalWeights table because
    trajectories sample a pure number state per run.
    """
    if dim < 2:
        raise DimensionError("dimension must be >= 2")
    if isinstance(init, Number):
        if init.n < 0:
            raise DomainError("photon number must be non-negative")
        if init.n >= dim:
            raise TruncationError(f"number state n={init.n} needs dim > {init.n}")
        amps = np.zeros(dim, dtype=complex)
        amps[init.n] = 1.0
        return StateVector(amps)
    if isinstance(init, Coherent):
        raw = coherent_amplitudes(init.alpha, dim)
        return _checked_state(raw, leak_tol, "coherent")
    if isinstance(init, Squeezed):
        raw = displacement_matrix(init.alpha, dim) @ squeezed_vacuum_amplitudes(
            init.r, dim
        )
        return _checked_state(raw, leak_tol, "squeezed")
    if isinstance(init, Thermal):
        if init.nbar <= 0:
            raise DomainError("thermal mean occupation must be positive")
        q = init.nbar / (1.0 + init.nbar)
        w = (1.0 - q) * q ** np.arange(dim)
        return ThermalWeights(weights=w / w.sum(), nbar=init.nbar)
    raise ConfigError(f"unknown initial state {init!r}")


def _checked_state(raw: np.ndarray, leak_tol: float, label: str) -> StateVector:
    norm_sq = float(np.sum(raw.real**2 + raw.imag**2))
    leak = 1.0 - norm_sq
    if leak > leak_tol:
        raise TruncationError(
            f"{label} state loses {leak:.3e} weight to truncation "
            f"(tolerance {leak_tol:.1e}); increase dim"
        )
    return StateVector(raw / math.sqrt(norm_sq))


def default_dim(init: InitialState) -> int:
    """Default truncation dimension for an initial state.

    Base rule: max(32, ceil(4(<n>+1)) + 8 ceil(sqrt(<n>+1))). Squeezed
    states have much slower number-tails than that heuristic assumes,
    so for them the dimension is grown until the constructed state's
    truncated weight drops below 1e-9 and the top-level occupation
    below 1e-7 (headroom under the trajectory leakage guard of 1e-6).
    """
    n0 = mean_occupation(init)
    base = max(32, math.ceil(4.0 * (n0 + 1.0)) + 8 * math.ceil(math.sqrt(n0 + 1.0)))
    if isinstance(init, Number):
        return max(base, init.n + 2)
    if not isinstance(init, Squeezed):
        return base
    dim = base
    while dim <= 512:
        raw = displacement_matrix(init.alpha, dim) @ squeezed_vacuum_amplitudes(
            init.r, dim
        )
        norm_sq = float(np.sum(raw.real**2 + raw.imag**2))
        if 1.0 - norm_sq <= 1e-9 and abs(raw[-1]) ** 2 / norm_sq <= 1e-7:
            return dim
        dim += 16
    raise TruncationError(
        f"no dimension <= 512 controls truncation for {init!r}; reduce |r|"
    )
