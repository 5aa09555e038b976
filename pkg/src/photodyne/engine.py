"""Stochastic trajectory integrator for the hybrid jump-diffusion process.

One step of duration dt does one of two things, mutually exclusively:

* photocount (probability gamma1 <n> dt): psi -> a psi, renormalised.
  The step consumes no Wiener increment and contributes dw = 0 to the
  homodyne record; the count time is logged at the end of the step.
* diffusive update: the record increment is dw = sqrt(gamma2)<a+a'>dt + dW
  with dW ~ Normal(0, dt), after which the measurement operator
  1 - (i omega + gamma/2) n dt + sqrt(gamma2) a dw is applied
  (kernel "euler") and the state renormalised. Kernel "exact" instead
  applies the exact one-step conditional propagator
  e^{-(i omega+gamma/2) dt n} exp[sqrt(gamma2) dw a + B(dt) a^2];
  its composition over steps reproduces the closed-form conditional
  state for the discrete record to machine precision.

Randomness convention: each trajectory owns an independent generator
derived from (seed, trajectory index). A trajectory consumes its random
tape as two blocks, first all per-step uniforms (jump decisions, with
one extra leading uniform to sample a thermal initial level), then all
per-step standard normals. Jump steps leave their normal unused. The
fixed tape makes results bit-identical across batch sizes and worker
counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, StepSizeError, TruncationError
from .fock import StateVector
from .params import JUMP_PROB_CAP, SimParams
from .propagators import CountRecord, decay_integral

# Top-level occupation beyond this trips the truncation guard (checked
# at every snapshot).
LEAK_GUARD = 1e-6


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, deterministically derived stream for one trajectory."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,)))
    )


@dataclass(frozen=True)
class MeasurementRecord:
    """Per-step homodyne increments plus ordered photocount times."""

    dw: np.ndarray
    jumps: CountRecord


@dataclass
class Trajectory:
    """Snapshots and record of a single run."""

    times: np.ndarray
    n_expect: np.ndarray
    a_expect: np.ndarray
    record: MeasurementRecord
    states: np.ndarray | None = None
    jump_deltas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_amps: np.ndarray | None = None


class _BatchResult:
    """Raw per-batch output of the step loop."""

    __slots__ = (
        "snap_steps", "snap_n", "snap_a", "final_amps", "a_record",
        "jump_counts", "ev_step", "ev_traj", "ev_n_before", "ev_n_after",
        "ev_var_before", "ev_a_acc", "ev_m_before", "dw", "states", "path_n",
        "path_dw",
    )


def _tape(rng: np.random.Generator, n_steps: int, lead: int = 0):
    """Block random tape: `lead`+n_steps uniforms then n_steps normals."""
    u = rng.random(n_steps + lead)
    z = rng.standard_normal(n_steps)
    return u[lead:], z, u[:lead]


def _exact_decay(params: SimParams, dim: int) -> np.ndarray:
    k = np.arange(dim)
    return np.exp(-params.decay_rate() * params.dt * k)


def _apply_step_exp(
    u: np.ndarray, b_dt: complex, psi: np.ndarray, sqk1: np.ndarray
) -> np.ndarray:
    """exp[u_i a + b_dt a^2] row-wise, via a masked terminating series.

    The number of summed terms for a row depends only on that row's
    coefficient bound, never on its batchmates, preserving bit-identical
    results under any batching.
    """
    b, d = psi.shape
    scale = math.sqrt(d)
    bound = np.abs(u) * scale + abs(b_dt) * d
    out = psi.copy()
    term = psi
    tail = bound.copy()  # bound on the next term's norm ratio
    j = 0
    active = tail > 1e-17
    while np.any(active):
        j += 1
        low = np.empty_like(term)
        low[:, :-1] = term[:, 1:] * sqk1
        low[:, -1] = 0.0
        low2 = np.empty_like(term)
        low2[:, :-1] = low[:, 1:] * sqk1
        low2[:, -1] = 0.0
        term = (u[:, None] * low + b_dt * low2) / j
        out[active] += term[active]
        tail *= bound / (j + 1)
        active = tail > 1e-17
        if j > d + 2:
            break
    return out


def _simulate_batch(
    amps0: np.ndarray,
    params: SimParams,
    u_tape: np.ndarray,
    z_tape: np.ndarray,
    *,
    kernel: str = "euler",
    snapshot_stride: int = 1,
    store_states: bool = False,
    store_dw: bool = False,
    n_paths: int = 0,
) -> _BatchResult:
    """Advance a batch of trajectories in lockstep over the full horizon.

    Rows are independent: every reduction runs along the level axis only,
    so row results do not depend on the batch composition.
    """
    psi = np.array(amps0, dtype=complex, order="C", copy=True)
    b, d = psi.shape
    steps = params.n_steps
    dt = params.dt
    k = np.arange(d, dtype=float)
    k2 = k * k
    sqk1 = np.sqrt(k[1:])  # sqrt(1..d-1), weights of the lowering shift
    theta = params.decay_rate()
    dcoef = 1.0 - theta * dt * k  # euler diagonal
    exact = kernel == "exact"
    if exact:
        exact_diag = _exact_decay(params, d)
        b_dt = -0.5 * params.gamma2 * decay_integral(
            2j * params.omega + params.gamma, dt
        )
    elif kernel != "euler":
        raise DomainError(f"unknown kernel {kernel!r}")
    sg2 = math.sqrt(params.gamma2)
    sqrt_dt = math.sqrt(dt)
    g1dt = params.gamma1 * dt
    phases = np.exp(-theta * dt * np.arange(steps))  # record kernel e^{-theta t_i}

    res = _BatchResult()
    res.a_record = np.zeros(b, dtype=complex)
    res.jump_counts = np.zeros(b, dtype=np.int64)
    res.snap_steps = []
    res.snap_n = []
    res.snap_a = []
    res.ev_step = []
    res.ev_traj = []
    res.ev_n_before = []
    res.ev_n_after = []
    res.ev_var_before = []
    res.ev_a_acc = []
    res.ev_m_before = []
    res.dw = np.zeros((b, steps)) if store_dw else None
    res.states = np.zeros((steps + 1, d), dtype=complex) if store_states else None
    res.path_n = np.zeros((min(n_paths, b), steps + 1)) if n_paths else None
    res.path_dw = np.zeros((min(n_paths, b), steps)) if n_paths else None

    if store_states and b != 1:
        raise DomainError("state storage is a single-trajectory feature")

    def snapshot(i: int, n_exp: np.ndarray):
        re, im = psi.real, psi.imag
        top = re[:, -1] ** 2 + im[:, -1] ** 2
        if np.any(top > LEAK_GUARD):
            row = int(np.argmax(top))
            raise TruncationError(
                f"truncation leakage {top[row]:.2e} at t={i * dt:.6g} "
                f"(batch row {row}); increase dim"
            )
        a_exp = np.einsum(
            "bd,bd,d->b", re[:, :-1], re[:, 1:], sqk1
        ) + np.einsum("bd,bd,d->b", im[:, :-1], im[:, 1:], sqk1)
        a_imag = np.einsum(
            "bd,bd,d->b", re[:, :-1], im[:, 1:], sqk1
        ) - np.einsum("bd,bd,d->b", im[:, :-1], re[:, 1:], sqk1)
        res.snap_steps.append(i)
        res.snap_n.append(n_exp.copy())
        res.snap_a.append(a_exp + 1j * a_imag)

    a_psi = np.zeros_like(psi)
    new = np.empty_like(psi)
    scratch = np.empty_like(psi)
    for i in range(steps):
        re, im = psi.real, psi.imag
        n_exp = np.einsum("bd,bd,d->b", re, re, k) + np.einsum(
            "bd,bd,d->b", im, im, k
        )
        if i % snapshot_stride == 0:
            snapshot(i, n_exp)
        if store_states:
            res.states[i] = psi[0]
        if res.path_n is not None:
            res.path_n[:, i] = n_exp[: res.path_n.shape[0]]

        p_jump = g1dt * n_exp
        pmax = float(p_jump.max())
        if pmax > JUMP_PROB_CAP:
            raise StepSizeError(
                f"jump probability {pmax:.3g} exceeds {JUMP_PROB_CAP} at "
                f"t={i * dt:.6g}; reduce dt"
            )
        jump_rows = (
            np.nonzero(u_tape[:, i] < p_jump)[0] if params.gamma1 > 0 else None
        )

        np.multiply(psi[:, 1:], sqk1, out=a_psi[:, :-1])
        x_exp = 2.0 * (
            np.einsum("bd,bd,d->b", re[:, :-1], re[:, 1:], sqk1)
            + np.einsum("bd,bd,d->b", im[:, :-1], im[:, 1:], sqk1)
        )

        dwt = (sg2 * dt) * x_exp + sqrt_dt * z_tape[:, i]
        if exact:
            out = _apply_step_exp(sg2 * dwt, b_dt, psi, sqk1)
            np.multiply(out, exact_diag, out=new)
        else:
            np.multiply(psi, dcoef, out=new)
            np.multiply(a_psi, (sg2 * dwt)[:, None], out=scratch)
            new += scratch
        nre, nim = new.real, new.imag
        norm2 = np.einsum("bd,bd->b", nre, nre) + np.einsum("bd,bd->b", nim, nim)
        new *= (1.0 / np.sqrt(norm2))[:, None]

        if jump_rows is not None and jump_rows.size:
            jr = jump_rows
            rows = a_psi[jr]
            rn2 = np.sum(rows.real**2 + rows.imag**2, axis=1)
            rows = rows / np.sqrt(rn2)[:, None]
            new[jr] = rows
            dwt[jr] = 0.0
            r_abs2 = rows.real**2 + rows.imag**2
            abs2_jr = np.abs(psi[jr]) ** 2
            res.ev_step.append(np.full(jr.size, i))
            res.ev_traj.append(jr.copy())
            res.ev_n_before.append(n_exp[jr])
            res.ev_n_after.append(r_abs2 @ k)
            res.ev_var_before.append(abs2_jr @ k2 - n_exp[jr] ** 2)
            res.ev_a_acc.append(res.a_record[jr].copy())
            res.ev_m_before.append(res.jump_counts[jr].copy())
            res.jump_counts[jr] += 1

        res.a_record += (sg2 * phases[i]) * dwt
        if res.dw is not None:
            res.dw[:, i] = dwt
        if res.path_dw is not None:
            res.path_dw[:, i] = dwt[: res.path_dw.shape[0]]
        psi, new = new, psi

    re, im = psi.real, psi.imag
    n_exp = np.einsum("bd,bd,d->b", re, re, k) + np.einsum("bd,bd,d->b", im, im, k)
    snapshot(steps, n_exp)
    if store_states:
        res.states[steps] = psi[0]
    if res.path_n is not None:
        res.path_n[:, steps] = n_exp[: res.path_n.shape[0]]
    res.final_amps = psi

    for name in ("ev_step", "ev_traj", "ev_n_before", "ev_n_after",
                 "ev_var_before", "ev_a_acc", "ev_m_before"):
        parts = getattr(res, name)
        setattr(
            res,
            name,
            np.concatenate(parts) if parts else np.zeros(0, dtype=float),
        )
    res.ev_traj = res.ev_traj.astype(np.int64)
    res.ev_step = res.ev_step.astype(np.int64)
    res.ev_m_before = res.ev_m_before.astype(np.int64)
    res.snap_steps = np.asarray(res.snap_steps)
    res.snap_n = np.stack(res.snap_n, axis=1)  # (b, n_snap)
    res.snap_a = np.stack(res.snap_a, axis=1)
    return res


def run_trajectory(
    init: StateVector,
    params: SimParams,
    rng: np.random.Generator | None = None,
    *,
    kernel: str = "euler",
    store_states: bool = False,
) -> Trajectory:
    """Integrate one trajectory over ceil(T/dt) steps.

    Records <n>, <a> and the measurement record on the full step grid.
    The top-level occupation is checked against the leakage guard at
    every snapshot. With the same (seed-derived) generator, parameters
    and kernel, the result is bit-identical to the corresponding row of
    an ensemble run.
    """
    if abs(init.norm_sq() - 1.0) > 1e-9:
        raise DomainError("initial state must be normalised")
    if rng is None:
        rng = trajectory_rng(params.seed, 0)
    steps = params.n_steps
    u, z, _ = _tape(rng, steps)
    res = _simulate_batch(
        init.amps[None, :],
        params,
        u[None, :],
        z[None, :],
        kernel=kernel,
        snapshot_stride=1,
        store_states=store_states,
        store_dw=True,
    )
    jump_times = (res.ev_step + 1) * params.dt
    deltas = res.ev_n_after - res.ev_n_before
    return Trajectory(
        times=res.snap_steps * params.dt,
        n_expect=res.snap_n[0],
        a_expect=res.snap_a[0],
        record=MeasurementRecord(dw=res.dw[0], jumps=CountRecord(jump_times)),
        states=res.states,
        jump_deltas=deltas,
        final_amps=res.final_amps[0],
    )


def step(
    psi: StateVector,
    params: SimParams,
    rng: np.random.Generator,
    *,
    kernel: str = "euler",
) -> tuple[StateVector, float, bool]:
    """One measurement interval applied to a normalised state.

    Draws one uniform then one normal (the normal is discarded on a
    jump). Returns (new state, record increment, jumped flag).
    """
    if abs(psi.norm_sq() - 1.0) > 1e-9:
        raise DomainError("step requires a normalised state")
    u = rng.random()
    zn = rng.standard_normal()
    amps = psi.amps
    d = amps.size
    k = np.arange(d, dtype=float)
    sqk1 = np.sqrt(k[1:])
    abs2 = amps.real**2 + amps.imag**2
    n_exp = float(abs2 @ k)
    p = params.gamma1 * n_exp * params.dt
    if p > JUMP_PROB_CAP:
        raise StepSizeError(
            f"jump probability {p:.3g} exceeds {JUMP_PROB_CAP}; reduce dt"
        )
    a_psi = np.zeros(d, dtype=complex)
    a_psi[:-1] = amps[1:] * sqk1
    if u < p:
        out = a_psi / math.sqrt(float(np.sum(a_psi.real**2 + a_psi.imag**2)))
        return StateVector(out), 0.0, True
    x_exp = 2.0 * float(np.sum((amps[:-1].conj() * amps[1:] * sqk1).real))
    dwt = math.sqrt(params.gamma2) * x_exp * params.dt + zn * math.sqrt(params.dt)
    if kernel == "exact":
        b_dt = -0.5 * params.gamma2 * decay_integral(
            2j * params.omega + params.gamma, params.dt
        )
        new = _apply_step_exp(
            np.array([math.sqrt(params.gamma2) * dwt]),
            b_dt,
            amps[None, :],
            sqk1,
        )[0]
        new *= _exact_decay(params, d)
    elif kernel == "euler":
        new = amps * (1.0 - params.decay_rate() * params.dt * k) + (
            math.sqrt(params.gamma2) * dwt
        ) * a_psi
    else:
        raise DomainError(f"unknown kernel {kernel!r}")
    new /= math.sqrt(float(np.sum(new.real**2 + new.imag**2)))
    return StateVector(new), dwt, False


# ---------------------------------------------------------------------------
# conditional moment updates (diagnostics)


def jump_update_moments(
    n_mean: float, n_sq: float, a_mean: complex, na_mean: complex
) -> tuple[float, complex]:
    """Moments immediately after a photocount.

    <n>+ = <n> - 1 + Var(n)/<n> and <a>+ = <a> + Cov(n, a)/<n>, both
    exact consequences of psi -> a psi.
    """
    if n_mean <= 0:
        raise DomainError("jump update undefined at <n> = 0")
    var = n_sq - n_mean * n_mean
    n_plus = n_mean - 1.0 + var / n_mean
    a_plus = a_mean + (na_mean - n_mean * a_mean) / n_mean
    return n_plus, a_plus


def nocount_drift_check(psi: StateVector, params: SimParams) -> tuple[float, float]:
    """Residuals of the no-count drift equations over one dW = 0 step.

    Applies the euler kernel with the noise zeroed and compares the
    measured changes of <n> and <a> against

        d<n> = -(gamma2 <n> + gamma1 Var(n)) dt
        d<a> = -[(i omega + gamma/2) <a> + gamma1 Cov(n, a)] dt

    Both residuals are O(dt^2). The covariance term in the <a> equation
    carries the photodetector coupling, as re-derivation from the
    measurement operators requires.
    """
    amps = psi.amps
    d = amps.size
    k = np.arange(d, dtype=float)
    sqk1 = np.sqrt(k[1:])
    abs2 = amps.real**2 + amps.imag**2
    n_exp = float(abs2 @ k)
    var = float(abs2 @ (k * k)) - n_exp**2
    a_psi = np.zeros(d, dtype=complex)
    a_psi[:-1] = amps[1:] * sqk1
    a_exp = complex(np.vdot(amps, a_psi))
    na_exp = complex(np.vdot(amps, k * a_psi))  # <n a>
    cov_na = na_exp - n_exp * a_exp

    dwt = math.sqrt(params.gamma2) * 2.0 * a_exp.real * params.dt
    new = amps * (1.0 - params.decay_rate() * params.dt * k) + (
        math.sqrt(params.gamma2) * dwt
    ) * a_psi
    new /= math.sqrt(float(np.sum(new.real**2 + new.imag**2)))
    nabs2 = new.real**2 + new.imag**2
    dn_meas = float(nabs2 @ k) - n_exp
    na_psi = np.zeros(d, dtype=complex)
    na_psi[:-1] = new[1:] * sqk1
    da_meas = complex(np.vdot(new, na_psi)) - a_exp

    dn_pred = -(params.gamma2 * n_exp + params.gamma1 * var) * params.dt
    da_pred = -(params.decay_rate() * a_exp + params.gamma1 * cov_na) * params.dt
    return abs(dn_meas - dn_pred), abs(da_meas - da_pred)
