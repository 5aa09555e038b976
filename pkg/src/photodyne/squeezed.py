"""Squeezed-state calculus: Q-function, operator reordering, and the
Gaussian-integral closed form of the normally-ordered expectation.

Three independent evaluation routes are kept alive on purpose:

1. the closed-form expression `squeezed_normal_expectation`,
2. Gauss-Hermite quadrature of the Q-function against the
   anti-normally reordered exponential,
3. dense Fock-space evaluation of the normally-ordered matrix.

The tests require all three to agree; disagreement names the term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .exceptions import DomainError, TruncationError
from .fock import annihilation, creation, squeezed_vacuum_amplitudes


def squeeze_factorization(r: float, dim: int) -> np.ndarray:
    """Squeeze operator as the disentangled three-factor product.

    (cosh r)^{-1/2} exp[-(a')^2 tanh(r)/2] exp[-n ln cosh r]
    exp[a^2 tanh(r)/2], evaluated as dense matrices. The raising and
    lowering factors are nilpotent, so their exponentials terminate
    exactly.
    """
    if abs(r) > 2.0:
        raise DomainError("squeeze factorization validated for |r| <= 2")
    if dim < 2:
        raise DomainError("dimension must be >= 2")
    tail = squeezed_vacuum_amplitudes(r, dim + 2)
    if abs(tail[-1]) ** 2 + abs(tail[-2]) ** 2 > 1e-10:
        raise TruncationError(
            f"squeeze series at r={r} needs weight beyond dim={dim}"
        )
    a = annihilation(dim)
    ad = creation(dim)
    th = math.tanh(r)
    up = expm(-0.5 * th * (ad @ ad))
    mid = np.diag(np.exp(-np.arange(dim) * math.log(math.cosh(r)))).astype(complex)
    down = expm(0.5 * th * (a @ a))
    return (up @ mid @ down) / math.sqrt(math.cosh(r))


@dataclass(frozen=True)
class GaussianQState:
    """Displaced-squeezed Gaussian in the coherent-state representation."""

    alpha: complex
    r: float

    @property
    def widths(self) -> tuple[float, float]:
        """Inverse quadratic coefficients along the Re and Im axes:
        2/(1+e^{-2r}) and 2/(1+e^{2r})."""
        return (2.0 / (1.0 + math.exp(-2.0 * self.r)),
                2.0 / (1.0 + math.exp(2.0 * self.r)))


def q_function(state: GaussianQState, beta: complex) -> float:
    """Coherent-state quasi-probability of the displaced squeezed state."""
    d = beta - state.alpha
    th = math.tanh(state.r)
    expo = -abs(d) ** 2 - 0.5 * th * ((d * d).real * 2.0)
    return math.exp(expo) / (math.pi * math.cosh(state.r))


@dataclass(frozen=True)
class ReorderedExponential:
    """Anti-normal image of : exp[k a + k* a' + nu a'a] :."""

    kappa_p: complex
    nu_p: complex
    log_prefactor: complex


def antinormal_reorder(kappa: complex, nu: float) -> ReorderedExponential:
    """Reorder the normally-ordered exponential into anti-normal form.

    kappa' = kappa/(1+nu), nu' = nu/(1+nu), with the scalar
    e^{-|kappa|^2/(1+nu)}/(1+nu) kept in log space.
    """
    if np.real(1 + nu) <= 0:
        raise DomainError("reordering requires nu > -1")
    one = 1.0 + nu
    return ReorderedExponential(
        kappa_p=kappa / one,
        nu_p=nu / one,
        log_prefactor=-abs(kappa) ** 2 / one - np.log(complex(one)),
    )


def squeezed_normal_expectation(
    alpha: complex, r: float, kappa: complex, nu: float
) -> complex:
    """<alpha, r| : exp[kappa a + kappa* a' + nu a'a] : |alpha, r>.

    Closed Gaussian-integral result; both quadratic terms enter squared
    (required already by the r -> 0 coherent limit) and the whole
    expression is real and positive on its domain.
    """
    if 1.0 + nu <= 0:
        raise DomainError("expectation requires nu > -1")
    em, ep = math.exp(-2.0 * r), math.exp(2.0 * r)
    bracket_m = 1.0 + 0.5 * nu * (1.0 - em)
    bracket_p = 1.0 + 0.5 * nu * (1.0 - ep)
    if bracket_m <= 0 or bracket_p <= 0:
        raise DomainError(
            f"Gaussian integral diverges: bracket factors {bracket_m:.4g}, "
            f"{bracket_p:.4g} must be positive"
        )
    re_a, im_a = complex(alpha).real, complex(alpha).imag
    re_k, im_k = complex(kappa).real, complex(kappa).imag
    one = 1.0 + nu
    d_re = 2.0 / (1.0 + em) - nu / one
    d_im = 2.0 / (1.0 + ep) - nu / one
    expo = (
        -(re_k**2 + im_k**2) / one
        + (re_k / one + 2.0 * re_a / (1.0 + em)) ** 2 / d_re
        - 2.0 * re_a**2 / (1.0 + em)
        + (-im_k / one + 2.0 * im_a / (1.0 + ep)) ** 2 / d_im
        - 2.0 * im_a**2 / (1.0 + ep)
    )
    return complex(math.exp(expo) / math.sqrt(bracket_m * bracket_p))


# ---------------------------------------------------------------------------
# quadrature and dense-matrix reference routes


def gauss_hermite_grid(
    state: GaussianQState, nodes: int = 80
) -> tuple[np.ndarray, np.ndarray]:
    """Complex-plane nodes and weights such that sum(w * f(beta))
    approximates the integral of Q(beta) f(beta) over the plane.

    Affine change of variables along the Gaussian's principal axes; the
    weights absorb Q itself, so f is sampled bare.
    """
    x, w = np.polynomial.hermite.hermgauss(nodes)
    c_re, c_im = state.widths
    xs = state.alpha.real + x / math.sqrt(c_re)
    ys = state.alpha.imag + x / math.sqrt(c_im)
    beta = xs[:, None] + 1j * ys[None, :]
    # Q * jacobian / (e^{-s^2 - u^2}) = 1/pi after the rescaling
    weights = (w[:, None] * w[None, :]) / math.pi
    return beta.ravel(), weights.ravel()


def q_expectation(
    state: GaussianQState, f, nodes: int = 80
) -> complex:
    """Integral of Q(beta) f(beta, beta*) by tensor Gauss-Hermite."""
    beta, w = gauss_hermite_grid(state, nodes)
    return complex(np.sum(w * f(beta, np.conj(beta))))


def normally_ordered_matrix(kappa: complex, nu: float, dim: int) -> np.ndarray:
    """Dense : exp[kappa a + kappa* a' + nu a'a] : (creation leftmost)."""
    if 1.0 + nu <= 0:
        raise DomainError("matrix form requires nu > -1")
    a = annihilation(dim)
    left = expm(np.conj(kappa) * creation(dim))
    mid = np.diag((1.0 + nu) ** np.arange(dim)).astype(complex)
    right = expm(kappa * a)
    return left @ mid @ right


def antinormally_ordered_matrix(
    kappa_p: complex, nu_p: complex, dim: int
) -> np.ndarray:
    """Dense anti-normal exp: annihilation leftmost, built from
    A[e^{x a a'}] = (1-x)^{-n-1}."""
    a = annihilation(dim)
    left = expm(kappa_p * a)
    mid = np.diag((1.0 - nu_p) ** (-np.arange(dim) - 1.0)).astype(complex)
    right = expm(np.conj(kappa_p) * creation(dim))
    return left @ mid @ right


def squeezed_state_dense(alpha: complex, r: float, dim: int) -> np.ndarray:
    """Brute-force displaced squeezed vector via matrix exponentials."""
    a = annihilation(dim)
    ad = creation(dim)
    sq = expm(0.5 * r * (a @ a - ad @ ad))
    disp = expm(alpha * ad - np.conj(alpha) * a)
    vac = np.zeros(dim, dtype=complex)
    vac[0] = 1.0
    return disp @ (sq @ vac)
