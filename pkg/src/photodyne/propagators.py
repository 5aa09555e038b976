"""Closed-form conditional evolution between and across photocounts.

The no-count solution is a number-basis contraction times the
exponential of a pure lowering operator,

    N(t) = e^{-(i*omega + gamma/2) t n} exp[A(t) a + B(t) a^2],

where A accumulates the homodyne record against a decaying kernel and B
is deterministic. A record with m photocounts multiplies an extra a^m
and a scalar prefactor which this module keeps in log space.

All lowering exponentials terminate exactly at the truncation dimension
(a^D = 0), so they are evaluated either as a dense scaling-and-squaring
matrix exponential or, for vectors, through the coefficient recursion
k f_k = A f_{k-1} + 2 B f_{k-2} of exp[A x + B x^2]. The two routes are
cross-checked in the tests.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from .exceptions import DomainError, TruncationError
from .fock import StateVector, annihilation
from .params import SimParams

# Relative norm loss beyond which the lowering exponential is declared
# corrupted. Lowering flows never cross the truncation boundary, so this
# guard can only fire on non-finite garbage.
EXP_LOSS_TOL = 1e-6


def decay_integral(z: complex, t: float) -> complex:
    """Integral of e^{-z s} over [0, t]; t may be math.inf for Re z > 0."""
    if t == math.inf:
        if z.real <= 0:
            raise DomainError("infinite-horizon integral needs a decaying kernel")
        return 1.0 / z
    if z == 0:
        return complex(t)
    return (1.0 - cmath.exp(-z * t)) / z


def closed_form_b(t: float, params: SimParams) -> complex:
    """Deterministic quadratic-lowering coefficient B(t)."""
    z = 2j * params.omega + params.gamma
    return -0.5 * params.gamma2 * decay_integral(z, t)


@dataclass(frozen=True)
class RecordAccumulators:
    """Record integrals (A, B) at time t.

    A is the kernel-weighted sum of homodyne increments, B the closed
    form; both drive the lowering exponential of the conditional state.
    """

    A: complex
    B: complex
    t: float

    def rotated(self, params: SimParams) -> tuple[complex, complex]:
        """Grid-time-free variants (A~, B~) used by the ordered form.

        These grow like e^{gamma t/2} and e^{gamma t}; prefer the plain
        (A, B) ordering for numerics at large t.
        """
        th = params.decay_rate()
        return (
            cmath.exp(th * self.t) * self.A,
            cmath.exp((2j * params.omega + params.gamma) * self.t) * self.B,
        )


def initial_accumulators() -> RecordAccumulators:
    return RecordAccumulators(A=0.0 + 0.0j, B=0.0 + 0.0j, t=0.0)


def accumulate(
    acc: RecordAccumulators, dw: float, dt: float, params: SimParams
) -> RecordAccumulators:
    """Advance the accumulators by one record increment dw over dt.

    Left-endpoint rule for A (matches the trajectory engine exactly);
    B is recomputed from its closed form so it never drifts.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    kernel = cmath.exp(-params.decay_rate() * acc.t)
    a_new = acc.A + math.sqrt(params.gamma2) * kernel * dw
    t_new = acc.t + dt
    return RecordAccumulators(A=a_new, B=closed_form_b(t_new, params), t=t_new)


def accumulators_at(A: complex, t: float, params: SimParams) -> RecordAccumulators:
    """Accumulators with a given A value and the closed-form B(t); t may be inf."""
    return RecordAccumulators(A=complex(A), B=closed_form_b(t, params), t=t)


@dataclass(frozen=True)
class CountRecord:
    """Ordered photocount times; strictly increasing and positive."""

    times: np.ndarray

    def __post_init__(self):
        arr = np.atleast_1d(np.asarray(self.times, dtype=float))
        if arr.size and (np.any(arr <= 0) or np.any(np.diff(arr) <= 0)):
            raise DomainError("count times must be strictly increasing and positive")
        object.__setattr__(self, "times", arr)

    @property
    def m(self) -> int:
        return self.times.size


# ---------------------------------------------------------------------------
# lowering exponentials


def lowering_poly_coeffs(A: complex, B: complex, kmax: int) -> np.ndarray:
    """Taylor coefficients f_k of exp[A x + B x^2], k = 0..kmax."""
    f = np.zeros(kmax + 1, dtype=complex)
    f[0] = 1.0
    if kmax >= 1:
        f[1] = A
    for k in range(2, kmax + 1):
        f[k] = (A * f[k - 1] + 2.0 * B * f[k - 2]) / k
    return f


def lowering_exp_matrix(A: complex, B: complex, dim: int) -> np.ndarray:
    """Dense exp[A a + B a^2]; strictly upper triangular argument, so the
    exponential is an exactly terminating polynomial. scipy's
    scaling-and-squaring handles large |A| without cancellation."""
    a = annihilation(dim)
    return expm(A * a + B * (a @ a))


def apply_lowering_exp(A: complex, B: complex, amps: np.ndarray) -> np.ndarray:
    """exp[A a + B a^2] @ amps through the coefficient recursion.

    O(D^2); accurate for moderate |A|, |B| (record-scale values). The
    dense-matrix route is the arbiter for large coefficients.
    """
    d = amps.size
    f = lowering_poly_coeffs(A, B, d - 1)
    lg = gammaln(np.arange(1, d + 1))  # log k!
    out = amps.astype(complex).copy()
    for k in range(1, d):
        # weight sqrt((j+k)! / j!) maps level j+k down to j
        w = np.exp(0.5 * (lg[k:] - lg[: d - k]))
        out[: d - k] += f[k] * w * amps[k:]
    return out


def apply_lowering_power(m: int, amps: np.ndarray) -> np.ndarray:
    """a^m @ amps."""
    d = amps.size
    if m == 0:
        return amps.astype(complex).copy()
    out = np.zeros(d, dtype=complex)
    if m >= d:
        return out
    lg = gammaln(np.arange(1, d + 1))
    w = np.exp(0.5 * (lg[m:] - lg[: d - m]))
    out[: d - m] = w * amps[m:]
    return out


def _decay_phases(t: float, params: SimParams, dim: int) -> np.ndarray:
    return np.exp(-params.decay_rate() * t * np.arange(dim))


# ---------------------------------------------------------------------------
# conditional states


def no_count_propagate(
    psi0: StateVector, acc: RecordAccumulators, params: SimParams
) -> StateVector:
    """Unnormalised conditional state after a zero-count record.

    Applies exp[A a + B a^2] then the diagonal contraction. Lowering
    flows never cross the truncation boundary, so the only way to lose
    norm to artifacts is numerical corruption; that is guarded.
    """
    mid = lowering_exp_matrix(acc.A, acc.B, psi0.dim) @ psi0.amps
    out = _decay_phases(acc.t, params, psi0.dim) * mid
    if not np.all(np.isfinite(out.real)) or not np.all(np.isfinite(out.imag)):
        raise TruncationError("no-count propagator produced non-finite amplitudes")
    return StateVector(out)


def m_count_state(
    psi0: StateVector,
    counts: CountRecord,
    acc: RecordAccumulators,
    params: SimParams,
) -> tuple[StateVector, complex]:
    """Unnormalised m-count conditional state and its scalar log-prefactor.

    Returns (vector, log_prefactor) with

        vector = e^{-(i w + G/2) t n} a^m exp[A a + B a^2] |psi0>
        log_prefactor = (m/2) log gamma1 - (i w + G/2) sum_j t_j

    The prefactor spans many orders of magnitude for large m or t, so it
    never touches the vector. A count number exceeding the available
    excitation yields the exact zero vector, not an error.
    """
    m = counts.m
    if counts.times.size and counts.times[-1] > acc.t + 1e-12:
        raise DomainError("count times must lie within the record horizon")
    if m > 0 and params.gamma1 == 0:
        raise DomainError("photocounts recorded with gamma1 = 0")
    mid = lowering_exp_matrix(acc.A, acc.B, psi0.dim) @ psi0.amps
    mid = apply_lowering_power(m, mid)
    out = _decay_phases(acc.t, params, psi0.dim) * mid
    log_pref = 0.0 + 0.0j
    if m > 0:
        log_pref = 0.5 * m * math.log(params.gamma1) - params.decay_rate() * float(
            np.sum(counts.times)
        )
    if not np.all(np.isfinite(out.real)) or not np.all(np.isfinite(out.imag)):
        raise TruncationError("m-count propagator produced non-finite amplitudes")
    return StateVector(out), log_pref
