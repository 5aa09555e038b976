"""Closed-form record statistics: densities, generating functionals,
and photocount-conditioned homodyne expectations.

Conventions pinned here (the numerics depend on them):

* Densities are Radon-Nikodym derivatives with respect to the Wiener
  measure of the raw record times the Lebesgue measure of ordered count
  times; the m-count density therefore carries a 1/m! from the ordered
  time integral.
* Every exponential kernel decays, e^{-(2i omega + gamma) t} and
  e^{-gamma t}; all closed forms below are derived from the record
  integrals with that convention and cross-checked by quadrature.
* Generating-functional arguments are piecewise constant, so every
  integral is an exact sum of exponential segments.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .exceptions import (
    ConsistencyError,
    DivergenceError,
    DomainError,
    UndefinedConditionalError,
)
from .fock import (
    Coherent,
    InitialState,
    Number,
    Squeezed,
    StateVector,
    Thermal,
    make_state,
)
from .params import SimParams
from .propagators import (
    CountRecord,
    RecordAccumulators,
    apply_lowering_power,
    decay_integral,
    lowering_exp_matrix,
    lowering_poly_coeffs,
    m_count_state,
)
from .squeezed import squeezed_normal_expectation

CLOSED_FORM_RTOL = 1e-8


# ---------------------------------------------------------------------------
# generating functional machinery


@dataclass(frozen=True)
class GFQuery:
    """Piecewise-constant test functions against the two records.

    xi weighs the kernel-filtered homodyne increments (complex), eta the
    photocounts (real). Pieces are (start, end, value) with
    non-overlapping ordered intervals inside [0, horizon]; the horizon
    may be math.inf.
    """

    xi_pieces: tuple[tuple[float, float, complex], ...]
    eta_pieces: tuple[tuple[float, float, float], ...]
    horizon: float

    def __post_init__(self):
        for name, pieces in (("xi", self.xi_pieces), ("eta", self.eta_pieces)):
            prev_end = 0.0
            for a, b, _ in pieces:
                if a < prev_end - 1e-15 or b <= a:
                    raise DomainError(f"{name} pieces must be ordered and disjoint")
                if b > self.horizon + 1e-15:
                    raise DomainError(f"{name} piece exceeds the horizon")
                prev_end = b

    @classmethod
    def scalar(cls, xi: complex, eta: float, t: float) -> "GFQuery":
        """Constant xi and eta on (0, t); t may be math.inf."""
        return cls(
            xi_pieces=((0.0, t, complex(xi)),),
            eta_pieces=((0.0, t, float(eta)),),
            horizon=t,
        )


@dataclass(frozen=True)
class KappaNu:
    """Reduced arguments of the normally-ordered expectation."""

    kappa: complex
    nu: complex


def kappa_nu(q: GFQuery, params: SimParams) -> KappaNu:
    """Exact piecewise integrals of the reduced-argument definitions."""
    z_fast = 2j * params.omega + params.gamma
    z_slow = complex(params.gamma)
    kap = 0.0 + 0.0j
    for a, b, xi in q.xi_pieces:
        seg_fast = decay_integral(z_fast, b) - decay_integral(z_fast, a)
        seg_slow = decay_integral(z_slow, b) - decay_integral(z_slow, a)
        kap += params.gamma2 * (xi * seg_fast + np.conj(xi) * seg_slow)
    nu = 0.0 + 0.0j
    for a, b, eta in q.eta_pieces:
        seg = decay_integral(z_slow, b) - decay_integral(z_slow, a)
        nu += params.gamma1 * seg * (cmath.exp(eta) - 1.0)
    return KappaNu(kappa=kap, nu=nu)


def gaussian_log_prefactor(q: GFQuery, params: SimParams) -> complex:
    """Record-noise part of the generating functional (log scale).

    (gamma2/2) * integral of |xi e^{-(i w + G/2)t} + xi* e^{-(-i w + G/2)t}|^2,
    expanded into three decaying segments per piece.
    """
    z_fast = 2j * params.omega + params.gamma
    z_slow = complex(params.gamma)
    total = 0.0 + 0.0j
    for a, b, xi in q.xi_pieces:
        seg_fast = decay_integral(z_fast, b) - decay_integral(z_fast, a)
        seg_conj = decay_integral(np.conj(z_fast), b) - decay_integral(
            np.conj(z_fast), a
        )
        seg_slow = decay_integral(z_slow, b) - decay_integral(z_slow, a)
        total += (
            xi * xi * seg_fast
            + np.conj(xi) * np.conj(xi) * seg_conj
            + 2.0 * abs(xi) ** 2 * seg_slow
        )
    return 0.5 * params.gamma2 * total


def laguerre(n: int, x: float) -> float:
    """Laguerre polynomial by the three-term recurrence."""
    if n < 0:
        raise DomainError("laguerre order must be non-negative")
    if n == 0:
        return 1.0
    lm, lc = 1.0, 1.0 - x
    for k in range(1, n):
        lm, lc = lc, ((2 * k + 1 - x) * lc - k * lm) / (k + 1)
    return lc


def normal_ordered_expectation(
    init: InitialState, kn: KappaNu, params: SimParams
) -> complex:
    """<: exp[kappa a + kappa* a' + nu a'a] :> on the initial state."""
    kap, nu = kn.kappa, kn.nu
    if isinstance(init, Coherent):
        al = init.alpha
        return cmath.exp(
            kap * al + np.conj(kap) * np.conj(al) + nu * abs(al) ** 2
        )
    if isinstance(init, Number):
        if (1 + nu).real <= 0 and abs((1 + nu).imag) < 1e-300:
            raise DomainError("number-state expectation needs 1 + nu > 0")
        arg = -abs(kap) ** 2 / (1 + nu)
        if abs(nu.imag) < 1e-300 and abs(arg.imag) < 1e-300:
            return (1 + nu.real) ** init.n * laguerre(init.n, arg.real)
        return (1 + nu) ** init.n * _laguerre_complex(init.n, arg)
    if isinstance(init, Thermal):
        # pole at nu = 1/nbar (= e^{beta w} - 1)
        pole = 1.0 / init.nbar
        if nu.real >= pole:
            raise DivergenceError(
                f"thermal expectation diverges for nu >= {pole:.6g}"
            )
        denom = 1.0 - init.nbar * nu
        return cmath.exp(init.nbar * abs(kap) ** 2 / denom) / denom
    if isinstance(init, Squeezed):
        if abs(nu.imag) > 1e-12 * max(1.0, abs(nu)):
            raise DomainError("squeezed expectation implemented for real nu")
        return squeezed_normal_expectation(init.alpha, init.r, kap, nu.real)
    raise DomainError(f"unknown initial state {init!r}")


def _laguerre_complex(n: int, x: complex) -> complex:
    if n == 0:
        return 1.0 + 0.0j
    lm, lc = 1.0 + 0.0j, 1.0 - x
    for k in range(1, n):
        lm, lc = lc, ((2 * k + 1 - x) * lc - k * lm) / (k + 1)
    return lc


def generating_function(
    init: InitialState, q: GFQuery, params: SimParams
) -> complex:
    """Joint generating functional of the filtered homodyne record and
    the photocounts, for piecewise-constant arguments."""
    kn = kappa_nu(q, params)
    return cmath.exp(gaussian_log_prefactor(q, params)) * normal_ordered_expectation(
        init, kn, params
    )


def count_moments(
    init: InitialState, t: float, params: SimParams, h: float = 1e-4
) -> tuple[float, float]:
    """Mean and variance of the photocount total N_t.

    Fourth-order central differences of log M(eta) at eta = 0.
    """

    def log_m(eta: float) -> float:
        q = GFQuery.scalar(0.0, eta, t)
        val = generating_function(init, q, params)
        return math.log(val.real)

    vals = [log_m(j * h) for j in (-2, -1, 0, 1, 2)]
    mean = (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h)
    var = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (
        12 * h * h
    )
    return mean, var


def number_count_pmf(n: int, t: float, params: SimParams) -> np.ndarray:
    """Count distribution for an initial |n>, derived from the
    generating function by exact polynomial extraction in z = e^eta."""
    zs = np.linspace(0.15, 1.85, n + 1)
    vals = [
        generating_function(
            Number(n), GFQuery.scalar(0.0, math.log(z), t), params
        ).real
        for z in zs
    ]
    coeffs = np.linalg.solve(np.vander(zs, n + 1, increasing=True), np.array(vals))
    pmf = np.clip(coeffs, 0.0, None)
    return pmf / pmf.sum()


# ---------------------------------------------------------------------------
# coherent record moments


def coherent_homodyne_moments(
    alpha: complex, params: SimParams, t: float
) -> tuple[complex, complex, float]:
    """First and second moments of the filtered record integral at time t.

    Returns (mean, squared-centred second moment, absolute second
    moment). The squared-centred moment carries no extra 1/2: the
    generating-function prefactor fixes the normalisation, and Monte
    Carlo agrees.
    """
    z_fast = 2j * params.omega + params.gamma
    z_slow = complex(params.gamma)
    seg_fast = decay_integral(z_fast, t)
    seg_slow = decay_integral(z_slow, t)
    mean = params.gamma2 * (alpha * seg_fast + np.conj(alpha) * seg_slow)
    second = params.gamma2 * seg_fast
    absolute = params.gamma2 * seg_slow.real
    return mean, second, float(absolute)


# ---------------------------------------------------------------------------
# joint densities


def _count_factor_log(m: int, t: float, params: SimParams) -> float:
    """log of (1/m!) (gamma1 (1 - e^{-G t}) / G)^m, the ordered-time integral."""
    if m == 0:
        return 0.0
    c = params.gamma1 * decay_integral(complex(params.gamma), t).real
    if c <= 0.0:
        return -math.inf
    return m * math.log(c) - float(gammaln(m + 1))


def _log_norm_sq_conditional(
    amps: np.ndarray, m: int, t: float, acc: RecordAccumulators, params: SimParams
) -> float:
    """log || e^{-(i w + G/2) t n} a^m exp[A a + B a^2] amps ||^2."""
    mid = lowering_exp_matrix(acc.A, acc.B, amps.size) @ amps
    mid = apply_lowering_power(m, mid)
    if t == math.inf:
        out = np.zeros_like(mid)
        out[0] = mid[0]
    else:
        out = np.exp(-0.5 * params.gamma * t * np.arange(amps.size)) * mid
    nsq = float(np.sum(out.real**2 + out.imag**2))
    return math.log(nsq) if nsq > 0 else -math.inf


def _number_norm_terms(
    n: int, m: int, t: float, acc: RecordAccumulators, params: SimParams
) -> float:
    """Closed-form squared norm for |n>: sum over surviving levels."""
    if m > n:
        return 0.0
    f = lowering_poly_coeffs(acc.A, acc.B, n - m)
    ks = np.arange(n - m + 1)
    lg_fall = gammaln(n + 1) - gammaln(n - m - ks + 1)
    if t == math.inf:
        weights = np.where(n - m - ks == 0, 1.0, 0.0)
        return float(np.sum(np.abs(f) ** 2 * np.exp(lg_fall) * weights))
    expo = lg_fall - params.gamma * t * (n - m - ks)
    return float(np.sum(np.abs(f) ** 2 * np.exp(expo)))


def joint_density_pm(
    init: InitialState,
    m: int,
    t: float,
    acc: RecordAccumulators,
    params: SimParams,
) -> float:
    """log joint density of (m counts in (0,t), homodyne record).

    Density w.r.t. Wiener measure x ordered-times Lebesgue measure; the
    record enters through acc.A (and the deterministic acc.B). Number
    and thermal inputs are also evaluated through their closed forms and
    the two routes must agree to CLOSED_FORM_RTOL.
    """
    if m < 0:
        raise DomainError("count number must be non-negative")
    base = _count_factor_log(m, t, params)
    if base == -math.inf:
        return -math.inf
    if isinstance(init, Number):
        generic = base + _log_norm_sq_conditional(
            make_state(init, max(init.n + 2, 4)).amps, m, t, acc, params
        ) if m <= init.n else -math.inf
        closed = joint_density_pm_closed(init, m, t, acc, params)
        _require_close(generic, closed, "number-state density")
        return generic
    if isinstance(init, Thermal):
        generic = _thermal_generic_log_density(init.nbar, m, t, acc, params)
        closed = joint_density_pm_closed(init, m, t, acc, params)
        _require_close(generic, closed, "thermal density")
        return generic
    if isinstance(init, (Coherent, Squeezed)):
        from .fock import default_dim

        state = make_state(init, default_dim(init))
        return base + _log_norm_sq_conditional(state.amps, m, t, acc, params)
    raise DomainError(f"unknown initial state {init!r}")


def joint_density_pm_closed(
    init: Number | Thermal,
    m: int,
    t: float,
    acc: RecordAccumulators,
    params: SimParams,
) -> float:
    """Specialised closed forms (log scale).

    For |n>, the level sum over surviving excitation; for thermal input,
    the geometric-series resummation. Both carry the 1/m! of the
    ordered-time integral (the level-sum display usually quoted omits
    it, which breaks normalisation against the generating function).
    """
    if m < 0:
        raise DomainError("count number must be non-negative")
    base = _count_factor_log(m, t, params)
    if base == -math.inf:
        return -math.inf
    if isinstance(init, Number):
        nsq = _number_norm_terms(init.n, m, t, acc, params)
        return base + math.log(nsq) if nsq > 0 else -math.inf
    if not isinstance(init, Thermal):
        raise DomainError("closed forms exist for Number and Thermal inputs")
    nbar = init.nbar
    q = nbar / (1.0 + nbar)  # e^{-beta omega}
    x = q * (0.0 if t == math.inf else math.exp(-params.gamma * t))
    log_q = math.log(q)
    total = 0.0
    k = 0
    f_prev2 = f_prev1 = None
    fk = 1.0 + 0.0j
    while True:
        # f_k of exp[A x + B x^2] via the recursion
        if k == 1:
            fk = acc.A
        elif k >= 2:
            fk = (acc.A * f_prev1 + 2.0 * acc.B * f_prev2) / k
        term = (
            abs(fk) ** 2
            * math.exp(
                k * log_q
                + gammaln(k + m + 1)
                - (k + m + 1) * math.log1p(-x)
            )
        )
        total += term
        if k > 4 and term < 1e-18 * max(total, 1e-300) and abs(fk) < 1.0:
            break
        if k > 4000:  # pragma: no cover - defensive
            raise ConsistencyError("thermal closed-form series did not converge")
        f_prev2, f_prev1 = f_prev1, fk
        k += 1
    if total <= 0:
        return -math.inf
    return base + m * log_q + math.log(1.0 - q) + math.log(total)


def _thermal_generic_log_density(
    nbar: float, m: int, t: float, acc: RecordAccumulators, params: SimParams
) -> float:
    """Mixture of number-branch densities with untruncated geometric weights."""
    q = nbar / (1.0 + nbar)
    base = _count_factor_log(m, t, params)
    total = 0.0
    n = m
    while True:
        w = (1.0 - q) * q**n
        branch = _number_norm_terms(n, m, t, acc, params)
        total += w * branch
        # geometric weight decay beats the polynomial branch growth
        if n > m + 8 and w * max(branch, 1.0) < 1e-18 * max(total, 1e-300):
            break
        if n > m + 4000:  # pragma: no cover - defensive
            raise ConsistencyError("thermal branch sum did not converge")
        n += 1
    if total <= 0:
        return -math.inf
    return base + math.log(total)


def _require_close(a: float, b: float, label: str):
    if a == -math.inf and b == -math.inf:
        return
    if not math.isfinite(a) or not math.isfinite(b):
        raise ConsistencyError(f"{label}: generic={a!r} closed={b!r}")
    # log densities: compare in log space (relative on the density)
    if abs(a - b) > CLOSED_FORM_RTOL:
        raise ConsistencyError(
            f"{label}: generic log {a:.12g} vs closed log {b:.12g}"
        )


# ---------------------------------------------------------------------------
# photocount-conditioned quadrature expectations


def _conditional_branches(
    init: InitialState,
    m: int,
    acc: RecordAccumulators,
    params: SimParams,
    dim: int | None = None,
    a_shift: complex = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted unnormalised conditional vectors (branches, weights).

    For pure inputs one branch; for thermal input one branch per number
    state with geometric weights. `a_shift` perturbs the record integral
    (used by the derivative oracle).
    """
    from .fock import ThermalWeights, default_dim

    if dim is None:
        dim = init.n + 2 if isinstance(init, Number) else default_dim(init)
    if acc.t == math.inf:
        decay = np.zeros(dim)
        decay[0] = 1.0
    else:
        decay = np.exp(-params.decay_rate() * acc.t * np.arange(dim))
    basis = lowering_exp_matrix(acc.A + a_shift, acc.B, dim)
    if isinstance(init, Thermal):
        table = make_state(init, dim)
        assert isinstance(table, ThermalWeights)
        branches = np.array(
            [decay * apply_lowering_power(m, basis[:, n]) for n in range(dim)]
        )
        return branches, table.weights
    state = make_state(init, dim)
    assert isinstance(state, StateVector)
    vec = decay * apply_lowering_power(m, basis @ state.amps)
    return vec[None, :], np.ones(1)


def conditioned_quadrature(
    init: InitialState,
    m: int,
    acc: RecordAccumulators,
    params: SimParams,
    side: str,
    dim: int | None = None,
) -> float:
    """<a + a'> on the conditional state just before ("before") or just
    after ("after") a photocount at the record (acc, m).

    Direct Fock-basis expectation; see log_derivative_quadrature for the
    independent derivative-form evaluation.
    """
    if side not in ("before", "after"):
        raise DomainError("side must be 'before' or 'after'")
    branches, weights = _conditional_branches(init, m, acc, params, dim)
    if side == "after":
        branches = np.array([_lower(v) for v in branches])
    num = 0.0
    den = 0.0
    for w, v in zip(weights, branches):
        den += w * float(np.sum(v.real**2 + v.imag**2))
        num += w * 2.0 * float(np.vdot(v, _lower(v)).real)
    if den <= 0 or not math.isfinite(num / den if den else math.inf):
        raise UndefinedConditionalError(
            "conditional state vanishes for this record"
        )
    return num / den


def _lower(v: np.ndarray) -> np.ndarray:
    out = np.zeros_like(v)
    out[:-1] = np.sqrt(np.arange(1.0, v.size)) * v[1:]
    return out


def log_derivative_quadrature(
    init: InitialState,
    m: int,
    acc: RecordAccumulators,
    params: SimParams,
    side: str,
    dim: int | None = None,
) -> float:
    """Derivative-form evaluation of the conditioned quadrature.

    The quadrature equals d/ds log N(s) at s = 0, where N(s) is the
    squared norm (for side="after": the <n>-weighted norm) of the
    conditional state with the record integral shifted by
    s * e^{-(i omega + gamma/2) t}. With a real-arithmetic base point
    (omega = 0, real record and state) the derivative is taken by a
    complex step of 1e-20; otherwise by central differences.
    """
    if side not in ("before", "after"):
        raise DomainError("side must be 'before' or 'after'")
    if acc.t == math.inf:
        raise DomainError("derivative oracle needs a finite horizon")
    direction = cmath.exp(-params.decay_rate() * acc.t)

    order = 1 if side == "after" else 0

    def weighted_norm(a_shift: complex) -> complex:
        branches, weights = _conditional_branches(
            init, m, acc, params, dim, a_shift=a_shift
        )
        total = 0.0 + 0.0j
        for w, v in zip(weights, branches):
            u = _lower(v) if order else v
            total += w * np.sum(u * u)  # holomorphic square, not |.|^2
        return total

    def weighted_norm_real(a_shift: complex) -> float:
        branches, weights = _conditional_branches(
            init, m, acc, params, dim, a_shift=a_shift
        )
        total = 0.0
        for w, v in zip(weights, branches):
            u = _lower(v) if order else v
            total += w * float(np.sum(u.real**2 + u.imag**2))
        return total

    base_real = (
        params.omega == 0.0
        and abs(complex(acc.A).imag) < 1e-300
        and abs(complex(acc.B).imag) < 1e-300
        and _init_is_real(init)
    )
    if base_real:
        h = 1e-20
        val = weighted_norm(1j * h * direction)
        if val.real <= 0:
            raise UndefinedConditionalError("conditional state vanishes")
        return float(val.imag / (h * val.real))
    h = 1e-6 * max(1.0, abs(acc.A))
    g0 = weighted_norm_real(0.0)
    if g0 <= 0:
        raise UndefinedConditionalError("conditional state vanishes")
    gp = weighted_norm_real(h * direction)
    gm = weighted_norm_real(-h * direction)
    return (math.log(gp) - math.log(gm)) / (2 * h)


def _init_is_real(init: InitialState) -> bool:
    if isinstance(init, (Number, Thermal)):
        return True
    if isinstance(init, Coherent):
        return abs(complex(init.alpha).imag) < 1e-300
    if isinstance(init, Squeezed):
        return abs(complex(init.alpha).imag) < 1e-300
    return False


# ---------------------------------------------------------------------------
# Gaussian record marginals (Wick machinery)


@lru_cache(maxsize=None)
def _cg_moment_cached(p: int, q: int, s: complex, v: float) -> complex:
    if p < 0 or q < 0:
        return 0.0
    if p == 0 and q == 0:
        return 1.0
    if p == 0:
        return np.conj(_cg_moment_cached(q, 0, s, v))
    # Stein recursion: E[A f] = E[A^2] E[df/dA] + E[|A|^2] E[df/dA*]
    return (p - 1) * s * _cg_moment_cached(p - 2, q, s, v) + q * v * _cg_moment_cached(
        p - 1, q - 1, s, v
    )


def complex_gaussian_moment(p: int, q: int, s: complex, v: float) -> complex:
    """E[A^p (A*)^q] for a zero-mean complex Gaussian with E[A^2] = s,
    E[|A|^2] = v."""
    return _cg_moment_cached(p, q, complex(s), float(v))


def record_gaussian_params(t: float, params: SimParams) -> tuple[complex, float]:
    """(E[A^2], E[|A|^2]) of the record integral under the reference
    (driftless) Wiener measure."""
    s = params.gamma2 * decay_integral(2j * params.omega + params.gamma, t)
    v = params.gamma2 * decay_integral(complex(params.gamma), t).real
    return s, v


def number_count_marginal(n: int, m: int, t: float, params: SimParams) -> float:
    """P(N_t = m) for |n>: the m-count density integrated over records
    by Wick's theorem (independent of the trajectory engine).

    Requires a finite horizon; the record integral is Gaussian under the
    reference measure, so E|f_k|^2 expands into monomial moments.
    """
    if m > n:
        return 0.0
    if t == math.inf:
        raise DomainError("count marginal implemented for finite horizons")
    s, v = record_gaussian_params(t, params)
    b = -0.5 * s  # closed-form B(t)
    c_log = _count_factor_log(m, t, params)
    if c_log == -math.inf:
        return 1.0 if m == 0 else 0.0
    total = 0.0
    for k in range(n - m + 1):
        lg_fall = float(gammaln(n + 1) - gammaln(n - m - k + 1))
        acc = 0.0 + 0.0j
        for l in range(k // 2 + 1):
            for lp in range(k // 2 + 1):
                coef = (
                    b**l
                    * np.conj(b) ** lp
                    / (
                        math.factorial(k - 2 * l)
                        * math.factorial(l)
                        * math.factorial(k - 2 * lp)
                        * math.factorial(lp)
                    )
                )
                acc += coef * complex_gaussian_moment(k - 2 * l, k - 2 * lp, s, v)
        total += acc.real * math.exp(lg_fall - params.gamma * t * (n - m - k))
    return math.exp(c_log) * total


# ---------------------------------------------------------------------------
# thermal conditional moments (vectorised over events)


def thermal_conditional_moments(
    a_vals: np.ndarray,
    m_vals: np.ndarray,
    t_vals: np.ndarray,
    nbar: float,
    params: SimParams,
    depth: int = 72,
) -> tuple[np.ndarray, np.ndarray]:
    """Record-conditioned (<n>, Var n) for a thermal input, per event.

    The observer's state given the record (A, B(t), m, t) is the
    posterior mixture over the initial level. Reindexing branches by the
    surviving level j and the extra relaxation depth k gives

        weight(j, k) ~ q^{j+k} |f_k|^2 (j+k+m)!/j! e^{-gamma t j},

    with event-independent factors cancelled; sums run to `depth` in
    j and k (geometric convergence in q).
    """
    a_vals = np.asarray(a_vals, dtype=complex)
    m_vals = np.asarray(m_vals, dtype=np.int64)
    t_vals = np.asarray(t_vals, dtype=float)
    z = 2j * params.omega + params.gamma
    b_vals = np.array([-0.5 * params.gamma2 * decay_integral(z, t) for t in t_vals])
    q = nbar / (1.0 + nbar)
    e = a_vals.size
    f = np.zeros((e, depth + 1), dtype=complex)
    f[:, 0] = 1.0
    if depth >= 1:
        f[:, 1] = a_vals
    for k in range(2, depth + 1):
        f[:, k] = (a_vals * f[:, k - 1] + 2.0 * b_vals * f[:, k - 2]) / k
    with np.errstate(divide="ignore"):
        log_af2 = np.log(f.real**2 + f.imag**2)  # (e, depth+1), -inf at zeros
    lg = gammaln(np.arange(2 * depth + int(m_vals.max(initial=0)) + 3))
    js = np.arange(depth + 1)
    log_q = math.log(q)
    # streaming log-sum-exp over (k, j); factorials overflow plain floats
    run_max = np.full(e, -np.inf)
    den = np.zeros(e)
    s1 = np.zeros(e)
    s2 = np.zeros(e)
    for k in range(depth + 1):
        lterm = (
            log_af2[:, k][:, None]
            + (lg[js[None, :] + k + m_vals[:, None] + 1] - lg[js + 1][None, :])
            + (js[None, :] + k) * log_q
            - params.gamma * np.outer(t_vals, js)
        )
        chunk_max = lterm.max(axis=1)
        new_max = np.maximum(run_max, chunk_max)
        scale = np.where(np.isfinite(run_max), np.exp(run_max - new_max), 0.0)
        den *= scale
        s1 *= scale
        s2 *= scale
        w = np.exp(lterm - np.where(np.isfinite(new_max), new_max, 0.0)[:, None])
        den += w.sum(axis=1)
        s1 += (w * js[None, :]).sum(axis=1)
        s2 += (w * (js * js)[None, :]).sum(axis=1)
        run_max = new_max
    out_mean = np.full(e, np.nan)
    out_var = np.full(e, np.nan)
    good = den > 0
    out_mean[good] = s1[good] / den[good]
    out_var[good] = s2[good] / den[good] - out_mean[good] ** 2
    return out_mean, out_var
