"""Batch trajectory execution, aggregation, and oracle comparison.

Trajectories are independent rows advanced in lockstep; each derives its
random tape from (seed, global trajectory index) alone, so results are
bit-identical for any batch size and worker count. Reduction over
batches happens in batch-index order.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2 as chi2_dist

from . import analytics
from .engine import _simulate_batch, _tape, trajectory_rng
from .exceptions import ConfigError
from .fock import (
    Coherent,
    InitialState,
    Number,
    Squeezed,
    StateVector,
    Thermal,
    ThermalWeights,
    make_state,
    mean_occupation,
)
from .params import SimParams


@dataclass(frozen=True)
class RunConfig:
    """One ensemble run: physics, initial state, and batching knobs."""

    params: SimParams
    init: InitialState
    trajectories: int
    snapshot_stride: int = 20
    kernel: str = "euler"
    batch_size: int = 1024
    workers: int = 1
    store_dw: bool = False
    sample_paths: int = 0

    def __post_init__(self):
        if self.trajectories < 1:
            raise ConfigError("need at least one trajectory")
        if self.snapshot_stride < 1:
            raise ConfigError("snapshot stride must be >= 1")
        if self.snapshot_stride * self.params.dt > self.params.t_final + 1e-12:
            raise ConfigError("snapshot stride exceeds the horizon")
        if self.batch_size < 1 or self.workers < 1:
            raise ConfigError("batch size and workers must be >= 1")
        if self.store_dw and self.trajectories * self.params.n_steps > 2 * 10**7:
            raise ConfigError(
                "record dump limited to trajectories * steps <= 2e7"
            )


@dataclass
class JumpEvents:
    """Flattened photocount events across the ensemble."""

    traj: np.ndarray
    step: np.ndarray
    n_before: np.ndarray
    n_after: np.ndarray
    var_before: np.ndarray
    a_acc: np.ndarray
    m_before: np.ndarray

    @property
    def count(self) -> int:
        return self.traj.size

    def deltas(self) -> np.ndarray:
        return self.n_after - self.n_before


@dataclass
class EnsembleStats:
    """Aggregated ensemble output."""

    times: np.ndarray
    mean_n: np.ndarray
    sem_n: np.ndarray
    count_histogram: np.ndarray
    final_n: np.ndarray
    a_final: np.ndarray
    jumps_per_traj: np.ndarray
    events: JumpEvents
    sampled_n: np.ndarray | None = None
    mixture_jump_deltas: np.ndarray | None = None
    dw: np.ndarray | None = None
    path_n: np.ndarray | None = None
    path_dw: np.ndarray | None = None
    elapsed: float = 0.0

    @property
    def trajectories(self) -> int:
        return self.final_n.size

    def jump_times(self, traj: int, dt: float) -> np.ndarray:
        mask = self.events.traj == traj
        return (self.events.step[mask] + 1) * dt


def _initial_rows(
    cfg: RunConfig, start: int, stop: int
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray, np.ndarray]:
    """Initial amplitudes plus tapes for trajectories [start, stop)."""
    params = cfg.params
    steps = params.n_steps
    b = stop - start
    thermal = isinstance(cfg.init, Thermal)
    base = make_state(cfg.init, params.dim)
    u = np.empty((b, steps))
    z = np.empty((b, steps))
    sampled = np.empty(b, dtype=np.int64) if thermal else None
    if thermal:
        assert isinstance(base, ThermalWeights)
        cumw = np.cumsum(base.weights)
        amps = np.zeros((b, params.dim), dtype=complex)
        for row, idx in enumerate(range(start, stop)):
            rng = trajectory_rng(params.seed, idx)
            uu, zz, lead = _tape(rng, steps, lead=1)
            u[row] = uu
            z[row] = zz
            n = int(np.searchsorted(cumw, lead[0], side="right"))
            n = min(n, params.dim - 1)
            sampled[row] = n
            amps[row, n] = 1.0
    else:
        assert isinstance(base, StateVector)
        amps = np.broadcast_to(base.amps, (b, params.dim)).copy()
        for row, idx in enumerate(range(start, stop)):
            rng = trajectory_rng(params.seed, idx)
            uu, zz, _ = _tape(rng, steps)
            u[row] = uu
            z[row] = zz
    return amps, sampled, u, z


def _run_batch_range(cfg: RunConfig, start: int, stop: int, first: bool) -> dict:
    amps, sampled, u, z = _initial_rows(cfg, start, stop)
    res = _simulate_batch(
        amps,
        cfg.params,
        u,
        z,
        kernel=cfg.kernel,
        snapshot_stride=cfg.snapshot_stride,
        store_dw=cfg.store_dw,
        n_paths=cfg.sample_paths if first else 0,
    )
    k = np.arange(cfg.params.dim, dtype=float)
    return {
        "start": start,
        "snap_steps": res.snap_steps,
        "sum_n": res.snap_n.sum(axis=0),
        "sumsq_n": (res.snap_n**2).sum(axis=0),
        "final_n": res.snap_n[:, -1],
        "a_final": res.a_record,
        "jumps": res.jump_counts,
        "ev_traj": res.ev_traj + start,
        "ev_step": res.ev_step,
        "ev_n_before": res.ev_n_before,
        "ev_n_after": res.ev_n_after,
        "ev_var_before": res.ev_var_before,
        "ev_a_acc": res.ev_a_acc,
        "ev_m_before": res.ev_m_before,
        "sampled": sampled,
        "dw": res.dw,
        "path_n": res.path_n,
        "path_dw": res.path_dw,
    }


def run_ensemble(cfg: RunConfig) -> EnsembleStats:
    """Execute the configured ensemble and aggregate statistics.

    Deterministic for a fixed RunConfig; the worker count only changes
    wall time. Numerical guard errors propagate with the offending
    batch's trajectory range attached.
    """
    t0 = time.monotonic()
    m_total = cfg.trajectories
    bounds = list(range(0, m_total, cfg.batch_size)) + [m_total]
    jobs = [
        (lo, hi, lo == 0)
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [
                pool.submit(_run_batch_range, cfg, lo, hi, first)
                for lo, hi, first in jobs
            ]
            parts = [f.result() for f in futures]
    else:
        parts = [_run_batch_range(cfg, lo, hi, first) for lo, hi, first in jobs]
    parts.sort(key=lambda p: p["start"])

    snap_steps = parts[0]["snap_steps"]
    sum_n = np.zeros_like(parts[0]["sum_n"])
    sumsq_n = np.zeros_like(parts[0]["sumsq_n"])
    for p in parts:
        sum_n += p["sum_n"]
        sumsq_n += p["sumsq_n"]
    mean_n = sum_n / m_total
    if m_total > 1:
        var = np.maximum(sumsq_n / m_total - mean_n**2, 0.0) * (
            m_total / (m_total - 1)
        )
        sem_n = np.sqrt(var / m_total)
    else:
        sem_n = np.zeros_like(mean_n)

    jumps = np.concatenate([p["jumps"] for p in parts])
    events = JumpEvents(
        traj=np.concatenate([p["ev_traj"] for p in parts]).astype(np.int64),
        step=np.concatenate([p["ev_step"] for p in parts]).astype(np.int64),
        n_before=np.concatenate([p["ev_n_before"] for p in parts]),
        n_after=np.concatenate([p["ev_n_after"] for p in parts]),
        var_before=np.concatenate([p["ev_var_before"] for p in parts]),
        a_acc=np.concatenate([p["ev_a_acc"] for p in parts]),
        m_before=np.concatenate([p["ev_m_before"] for p in parts]).astype(np.int64),
    )
    stats = EnsembleStats(
        times=snap_steps * cfg.params.dt,
        mean_n=mean_n,
        sem_n=sem_n,
        count_histogram=np.bincount(jumps),
        final_n=np.concatenate([p["final_n"] for p in parts]),
        a_final=np.concatenate([p["a_final"] for p in parts]),
        jumps_per_traj=jumps,
        events=events,
        sampled_n=(
            np.concatenate([p["sampled"] for p in parts])
            if parts[0]["sampled"] is not None
            else None
        ),
        dw=(
            np.concatenate([p["dw"] for p in parts], axis=0)
            if cfg.store_dw
            else None
        ),
        path_n=parts[0]["path_n"],
        path_dw=parts[0]["path_dw"],
    )
    if isinstance(cfg.init, Thermal) and events.count:
        stats.mixture_jump_deltas = thermal_mixture_deltas(cfg, events)
    stats.elapsed = time.monotonic() - t0
    return stats


def thermal_mixture_deltas(cfg: RunConfig, events: JumpEvents) -> np.ndarray:
    """Change of the record-conditioned <n> at each thermal photocount.

    The observer conditions on the record, not on the latent sampled
    level, so the conditional state is the posterior mixture; counting a
    photon re-weights it toward higher occupation.
    """
    assert isinstance(cfg.init, Thermal)
    t_ev = events.step * cfg.params.dt
    before, _ = analytics.thermal_conditional_moments(
        events.a_acc, events.m_before, t_ev, cfg.init.nbar, cfg.params
    )
    after, _ = analytics.thermal_conditional_moments(
        events.a_acc, events.m_before + 1, t_ev, cfg.init.nbar, cfg.params
    )
    return after - before


# ---------------------------------------------------------------------------
# oracle comparison


@dataclass
class OracleEntry:
    name: str
    value: float
    reference: float
    z: float | None = None
    ok: bool = True

    def line(self) -> str:
        ztxt = "" if self.z is None else f"  z={self.z:+.2f}"
        flag = "ok" if self.ok else "FAIL"
        return (
            f"{self.name:40s} value={self.value:+.6g} "
            f"ref={self.reference:+.6g}{ztxt}  [{flag}]"
        )


@dataclass
class OracleReport:
    entries: list[OracleEntry] = field(default_factory=list)

    def add(self, name, value, reference, z=None, ok=True):
        self.entries.append(OracleEntry(name, float(value), float(reference), z, ok))

    @property
    def passed(self) -> bool:
        return all(e.ok for e in self.entries)

    def max_abs_z(self) -> float:
        zs = [abs(e.z) for e in self.entries if e.z is not None]
        return max(zs) if zs else 0.0

    def to_text(self) -> str:
        return "\n".join(e.line() for e in self.entries)


def compare_oracle(
    stats: EnsembleStats, cfg: RunConfig, z_max: float = 4.0
) -> OracleReport:
    """Score the ensemble against the closed-form oracles.

    Decay curve against <n>_0 e^{-gamma t}, count moments against the
    generating function, record moments (coherent input) against the
    Gaussian closed forms, and the jump-sign audit appropriate to the
    input class.
    """
    params = cfg.params
    report = OracleReport()
    n0 = mean_occupation(cfg.init)
    analytic = n0 * np.exp(-params.gamma * stats.times)
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(
            stats.sem_n > 0,
            (stats.mean_n - analytic) / stats.sem_n,
            np.where(np.abs(stats.mean_n - analytic) < 1e-9, 0.0, np.inf),
        )
    worst = int(np.argmax(np.abs(zs)))
    report.add(
        f"decay curve max |z| (t={stats.times[worst]:.3g})",
        stats.mean_n[worst],
        analytic[worst],
        z=float(zs[worst]),
        ok=bool(np.abs(zs).max() <= z_max),
    )

    mean_ref, var_ref = analytics.count_moments(cfg.init, params.t_final, params)
    m = stats.trajectories
    emp_mean = float(stats.jumps_per_traj.mean())
    emp_var = float(stats.jumps_per_traj.var(ddof=1)) if m > 1 else 0.0
    se_mean = math.sqrt(max(var_ref, 1e-300) / m)
    z_mean = (emp_mean - mean_ref) / se_mean if se_mean else 0.0
    report.add(
        "count mean vs generating function",
        emp_mean,
        mean_ref,
        z=z_mean,
        ok=abs(z_mean) <= z_max,
    )
    if m > 1 and var_ref > 0:
        se_var = var_ref * math.sqrt(2.0 / (m - 1))
        z_var = (emp_var - var_ref) / se_var
        report.add(
            "count variance vs generating function",
            emp_var,
            var_ref,
            z=z_var,
            ok=abs(z_var) <= z_max,
        )

    if isinstance(cfg.init, Coherent):
        _coherent_record_entries(stats, cfg, report, z_max)
    _jump_audit_entries(stats, cfg, report)
    return report


def _coherent_record_entries(stats, cfg, report, z_max):
    params = cfg.params
    mean_ref, second_ref, abs_ref = analytics.coherent_homodyne_moments(
        cfg.init.alpha, params, params.t_final
    )
    a = stats.a_final
    m = a.size
    var_re_ref = 0.5 * (abs_ref + second_ref.real)
    var_im_ref = 0.5 * (abs_ref - second_ref.real)
    for label, emp, ref, spread in (
        ("E[Re A]", a.real.mean(), mean_ref.real, math.sqrt(max(var_re_ref, 1e-300) / m)),
        ("E[Im A]", a.imag.mean(), mean_ref.imag, math.sqrt(max(var_im_ref, 1e-300) / m)),
    ):
        z = (emp - ref) / spread if spread > 0 else 0.0
        report.add(f"record moment {label}", emp, ref, z=z, ok=abs(z) <= z_max)
    for label, emp, ref in (
        ("Var[Re A]", float(a.real.var(ddof=1)), var_re_ref),
        ("Var[Im A]", float(a.imag.var(ddof=1)), var_im_ref),
    ):
        if ref <= 1e-12:
            ok = emp <= 1e-6
            report.add(f"record moment {label}", emp, ref, ok=ok)
            continue
        se = ref * math.sqrt(2.0 / (m - 1))
        z = (emp - ref) / se
        report.add(f"record moment {label}", emp, ref, z=z, ok=abs(z) <= z_max)


def _jump_audit_entries(stats, cfg, report):
    ev = stats.events
    if not ev.count:
        report.add("jump events", 0, 0)
        return
    deltas = ev.deltas()
    predicted = -1.0 + ev.var_before / ev.n_before
    ident = float(np.max(np.abs(deltas - predicted)))
    report.add(
        "jump size vs moment-update identity (max dev)",
        ident,
        0.0,
        ok=ident <= 1e-9,
    )
    if isinstance(cfg.init, Number):
        report.add(
            "number input: max jump delta (all negative)",
            float(deltas.max()),
            -1.0,
            ok=bool(np.all(deltas < 0)),
        )
        report.add(
            "number input: max |delta + 1|",
            float(np.max(np.abs(deltas + 1.0))),
            0.0,
        )
    elif isinstance(cfg.init, Thermal):
        mix = stats.mixture_jump_deltas
        report.add(
            "thermal input: min record-conditioned jump delta (> 0)",
            float(mix.min()),
            0.0,
            ok=bool(np.all(mix > 0)),
        )
    elif isinstance(cfg.init, Squeezed):
        report.add(
            "squeezed input: min jump delta (> 0)",
            float(deltas.min()),
            0.0,
            ok=bool(np.all(deltas > 0)),
        )
    elif isinstance(cfg.init, Coherent):
        report.add(
            "coherent input: max |jump delta|",
            float(np.max(np.abs(deltas))),
            0.0,
            ok=bool(np.max(np.abs(deltas)) <= 1e-8),
        )


def chi_square_counts(
    observed: np.ndarray, pmf: np.ndarray
) -> tuple[float, float]:
    """Pearson chi-square of observed count frequencies against pmf.

    Returns (statistic, p-value) with dof = bins - 1.
    """
    m = observed.sum()
    k = max(observed.size, pmf.size)
    obs = np.zeros(k)
    obs[: observed.size] = observed
    exp = np.zeros(k)
    exp[: pmf.size] = pmf * m
    live = exp > 0
    if np.any(obs[~live] > 0):
        return math.inf, 0.0
    stat = float(np.sum((obs[live] - exp[live]) ** 2 / exp[live]))
    dof = int(live.sum()) - 1
    return stat, float(chi2_dist.sf(stat, dof))


# ---------------------------------------------------------------------------
# output files


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_ensemble_csv(stats: EnsembleStats, cfg: RunConfig, path) -> None:
    n0 = mean_occupation(cfg.init)
    with open(path, "w") as fh:
        fh.write("t,mean_n,sem_n,analytic_mean\n")
        for t, mn, se in zip(stats.times, stats.mean_n, stats.sem_n):
            fh.write(
                f"{_fmt(t)},{_fmt(mn)},{_fmt(se)},"
                f"{_fmt(n0 * math.exp(-cfg.params.gamma * t))}\n"
            )


def write_trajectories_jsonl(stats: EnsembleStats, cfg: RunConfig, path) -> None:
    order = np.argsort(stats.events.step, kind="stable")
    ev_traj = stats.events.traj[order]
    ev_time = (stats.events.step[order] + 1) * cfg.params.dt
    with open(path, "w") as fh:
        for i in range(stats.trajectories):
            jumps = ev_time[ev_traj == i]
            rec = {
                "traj": i,
                "jumps": [float(t) for t in np.sort(jumps)],
                "final_n": float(stats.final_n[i]),
            }
            if stats.dw is not None:
                rec["dw"] = [float(x) for x in stats.dw[i]]
            fh.write(json.dumps(rec) + "\n")


def write_histogram_csv(stats: EnsembleStats, path) -> None:
    m_total = stats.trajectories
    with open(path, "w") as fh:
        fh.write("m,count,probability\n")
        for m, c in enumerate(stats.count_histogram):
            fh.write(f"{m},{int(c)},{_fmt(c / m_total)}\n")


def write_sample_paths_csv(stats: EnsembleStats, cfg: RunConfig, path) -> None:
    if stats.path_n is None:
        raise ConfigError("no sample paths were collected")
    n_paths, n_pts = stats.path_n.shape
    dt = cfg.params.dt
    mix = None
    if isinstance(cfg.init, Thermal) and stats.path_dw is not None:
        mix = _mixture_paths(stats, cfg)
    with open(path, "w") as fh:
        cols = [f"n_{i}" for i in range(n_paths)]
        if mix is not None:
            cols += [f"mix_n_{i}" for i in range(n_paths)]
        fh.write("t," + ",".join(cols) + "\n")
        for j in range(n_pts):
            row = [_fmt(j * dt)] + [_fmt(stats.path_n[i, j]) for i in range(n_paths)]
            if mix is not None:
                row += [_fmt(mix[i, j]) for i in range(n_paths)]
            fh.write(",".join(row) + "\n")


def _mixture_paths(stats: EnsembleStats, cfg: RunConfig) -> np.ndarray:
    """Record-conditioned <n> curves for the collected thermal paths."""
    params = cfg.params
    n_paths, steps = stats.path_dw.shape
    theta = params.decay_rate()
    kern = np.sqrt(params.gamma2) * np.exp(-theta * params.dt * np.arange(steps))
    out = np.zeros((n_paths, steps + 1))
    for i in range(n_paths):
        a_run = np.concatenate(
            [[0.0 + 0.0j], np.cumsum(kern * stats.path_dw[i])]
        )
        jumps_steps = np.sort(
            stats.events.step[stats.events.traj == i]
        )
        m_at = np.searchsorted(jumps_steps + 1, np.arange(steps + 1), side="right")
        t_at = np.arange(steps + 1) * params.dt
        mean, _ = analytics.thermal_conditional_moments(
            a_run, m_at, t_at, cfg.init.nbar, params
        )
        out[i] = mean
    return out
