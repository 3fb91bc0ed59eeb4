"""Headline experiments as library functions; the CLI is a thin layer on top."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from .config import ExperimentConfig, build_sampler
from .errors import InvalidArgument
from .metrics import EmpiricalMeasure, MetricParams, default_eta, wasserstein
from .samplers import ArraySampler

__all__ = [
    "ConvergenceRow",
    "ConvergenceTable",
    "cmd_convergence",
    "StationaryRow",
    "StationaryTable",
    "cmd_stationary_convergence",
    "stationary_limit_ensemble",
    "stationary_full_ensemble",
    "contraction_probe",
    "fit_slope",
    "metric_params",
]


def fit_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if lx.size < 2:
        return math.nan
    return float(np.polyfit(lx, ly, 1)[0])


def _strictly_decreasing_in(x, y) -> bool:
    order = np.argsort(x)
    ys = np.asarray(y)[order]
    return bool(np.all(np.diff(ys) > 0))


def metric_params(cfg: ExperimentConfig) -> MetricParams:
    eta = cfg.eta if cfg.eta is not None else default_eta(cfg.params, cfg.noise)
    return MetricParams(eta, cfg.n_quad)


# --------------------------------------------------------------------------
# finite-time convergence
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    eps: float
    delta: float
    theta_sup: float
    theta_sup_se: float
    h1_integral: float
    h1_integral_se: float


@dataclass
class ConvergenceTable:
    rows: list
    theta_slope: float
    h1_slope: float

    @property
    def theta_decreasing(self) -> bool:
        return _strictly_decreasing_in([r.eps + r.delta for r in self.rows], [r.theta_sup for r in self.rows])

    @property
    def h1_decreasing(self) -> bool:
        return _strictly_decreasing_in([r.eps + r.delta for r in self.rows], [r.h1_integral for r in self.rows])


def _mean_se(x):
    x = np.asarray(x, float)
    se = x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else math.nan
    return float(x.mean()), float(se)


def cmd_convergence(cfg: ExperimentConfig, eps_delta_list, p: float = 1.0) -> ConvergenceTable:
    """Full against limit on shared noise for each ``(eps, delta)``.

    Records ``E sup_t ||Theta - theta||^p`` and the time-integrated H1 error of
    the velocity and magnetic field, then fits log-log slopes in ``eps + delta``.
    The initial data come from ``cfg.sampler`` (with its mismatch, if any).

    Raises:
        BlowUp: tagged with ``(eps, delta)``.
    """
    if not eps_delta_list:
        raise InvalidArgument("need at least one (eps, delta) pair")
    sampler = build_sampler(cfg)
    rows = []
    for eps, delta in eps_delta_list:
        params = cfg.params.replace(eps=eps, delta=delta)
        rec = dyn.run_coupled(
            sampler, params, cfg.step, cfg.horizon, cfg.n_traj, cfg.noise, cfg.batch_size, tag=(eps, delta)
        )
        m_t, se_t = _mean_se(rec.sup_theta_err**p)
        m_h, se_h = _mean_se(rec.h1_err_integral)
        rows.append(ConvergenceRow(float(eps), float(delta), m_t, se_t, m_h, se_h))
    x = [r.eps + r.delta for r in rows]
    return ConvergenceTable(rows, fit_slope(x, [r.theta_sup for r in rows]), fit_slope(x, [r.h1_integral for r in rows]))


# --------------------------------------------------------------------------
# stationary convergence and contraction
# --------------------------------------------------------------------------


def stationary_limit_ensemble(cfg: ExperimentConfig, n_samples: int, burn_in: float | None = None, traj_offset: int = 0):
    """Terminal states of ``n_samples`` limit trajectories after the burn-in."""
    burn = cfg.burn_in_time if burn_in is None else burn_in
    rec = dyn.run_ensemble(
        "limit", build_sampler(cfg), cfg.params, cfg.step, burn, n_samples, cfg.noise,
        observables=["theta_l2sq"], record_every=max(1, int(round(burn / cfg.step.dt))),
        batch_size=cfg.batch_size, workers=cfg.workers, traj_offset=traj_offset,
    )
    return EmpiricalMeasure.from_state(rec.terminal)


def stationary_full_ensemble(cfg: ExperimentConfig, params, n_samples: int, burn_in: float | None = None, traj_offset: int = 0):
    burn = cfg.burn_in_time if burn_in is None else burn_in
    rec = dyn.run_ensemble(
        "full", build_sampler(cfg), params, cfg.step, burn, n_samples, cfg.noise,
        observables=["Theta_l2sq"], record_every=max(1, int(round(burn / cfg.step.dt))),
        batch_size=cfg.batch_size, workers=cfg.workers, traj_offset=traj_offset,
    )
    return EmpiricalMeasure.from_state(rec.terminal)


@dataclass(frozen=True)
class StationaryRow:
    eps: float
    delta: float
    lower: float
    upper: float


@dataclass
class StationaryTable:
    rows: list
    self_lower: float
    self_upper: float
    eta: float

    @property
    def monotone(self) -> bool:
        """Upper bracket strictly decreasing as ``eps + delta`` decreases."""
        return _strictly_decreasing_in([r.eps + r.delta for r in self.rows], [r.upper for r in self.rows])


def cmd_stationary_convergence(cfg: ExperimentConfig, eps_delta_list, n_samples: int | None = None) -> StationaryTable:
    """Wasserstein bracket between lifted limit and full stationary ensembles.

    The limit ensemble and each full ensemble use the same trajectory indices
    ``[0, n)``: sample ``i`` of either side starts from the same temperature and
    sees the same forcing path, so the assignment picks up the difference of
    the laws rather than the sampling spread.  A split-half comparison of an
    independent limit ensemble (indices ``[n, 2n)``) gives the sampling floor.
    """
    n = cfg.n_traj if n_samples is None else n_samples
    mp = metric_params(cfg)
    limit = stationary_limit_ensemble(cfg, n).lifted(cfg.params)
    floor_src = stationary_limit_ensemble(cfg, 2 * (n // 2), traj_offset=n).lifted(cfg.params)
    a, b = floor_src.split()
    floor = wasserstein(a, b, "rho-tilde", mp)
    rows = []
    for eps, delta in eps_delta_list:
        params = cfg.params.replace(eps=eps, delta=delta)
        full = stationary_full_ensemble(cfg, params, n)
        res = wasserstein(limit, full, "rho-tilde", mp)
        rows.append(StationaryRow(float(eps), float(delta), res.lower, res.upper))
    return StationaryTable(rows, floor.lower, floor.upper, mp.eta)


@dataclass
class ContractionResult:
    checkpoints: list
    lower: list
    upper: list
    eta: float

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.upper) < 0))


def contraction_probe(cfg: ExperimentConfig, sampler_a, sampler_b, checkpoints, n_samples: int | None = None) -> ContractionResult:
    """``W_rho`` bracket between two limit ensembles at increasing times.

    Both ensembles are driven by the same noise keys; sample ``i`` of each
    sees the same forcing path.
    """
    cps = sorted(float(t) for t in checkpoints)
    if not cps or cps[0] <= 0:
        raise InvalidArgument("checkpoints must be positive")
    n = cfg.n_traj if n_samples is None else n_samples
    mp = metric_params(cfg)
    dt = cfg.step.dt
    states = [sampler_a, sampler_b]
    lows, ups = [], []
    t_prev, step_prev = 0.0, 0
    for t in cps:
        steps = int(round((t - t_prev) / dt))
        new = []
        for smp in states:
            rec = dyn.run_ensemble(
                "limit", smp, cfg.params, cfg.step, steps * dt, n, cfg.noise,
                observables=["theta_l2sq"], record_every=max(1, steps),
                batch_size=cfg.batch_size, workers=cfg.workers, step_offset=step_prev,
            )
            new.append(rec.terminal.theta)
        res = wasserstein(EmpiricalMeasure(new[0]), EmpiricalMeasure(new[1]), "rho", mp)
        lows.append(res.lower)
        ups.append(res.upper)
        states = [ArraySampler(cfg.grid, th.coeffs) for th in new]
        t_prev, step_prev = t, step_prev + steps
    return ContractionResult(cps, lows, ups, mp.eta)
