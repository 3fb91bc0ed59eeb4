"""Checks of energy identities, martingale tails, moment bounds and the
Grönwall-type series used in the finite-time convergence estimate.

Every inequality check is one-sided and carries an explicit statistical slack
of three standard errors.  Constants that the analysis only proves to exist are
fitted on the data and reported ("fit and report"), never assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .dynamics import EnsembleRecord, LimitPath
from .errors import InvalidArgument
from .noise import NoiseConfig, sigma_norm
from .spectral import PhysParams, norm

__all__ = [
    "EnergyResidual",
    "EnergyLedger",
    "energy_residual",
    "energy_ledger",
    "stationary_balance",
    "TailRow",
    "brownian_paths",
    "brownian_tail_probability",
    "temperature_martingale",
    "temperature_gamma_max",
    "martingale_tail_test",
    "SeriesResult",
    "gronwall_series",
    "gronwall_series_bound",
    "gronwall_constant",
    "MomentCheck",
    "MomentReport",
    "moment_report",
    "ETA0",
]

ETA0 = 0.05
EXP_LIMIT = 700.0


# --------------------------------------------------------------------------
# energy balance
# --------------------------------------------------------------------------


@dataclass
class EnergyResidual:
    """Per-step residual of the discrete Itô balance for the temperature.

    ``series`` has shape ``(n_traj, n_steps)``.
    """

    series: np.ndarray
    dt: float

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.series))) if self.series.size else 0.0

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.series))) if self.series.size else 0.0


def _record_series(record: EnsembleRecord, names):
    missing = [n for n in names if n not in record.observables]
    if missing:
        raise InvalidArgument(f"record lacks observables {missing}")
    if not np.allclose(np.diff(record.times), record.cfg.dt):
        raise InvalidArgument("energy residuals need observables recorded at every step")
    return [record.observables[n] for n in names]


def energy_residual(traj, noise: NoiseConfig | None = None) -> EnergyResidual:
    """Residual ``1/2 d||T||^2 + kappa ||grad T||^2 dt - 1/2 ||sigma||^2 dt - <sigma dW, T>``.

    ``traj`` is a :class:`LimitPath` with stored increments or an
    :class:`EnsembleRecord` holding the squared norms and ``noise_work`` at
    every step.  Dissipation and noise work are evaluated at the left end of
    each step.

    Raises:
        InvalidArgument: if noise increments are missing.
    """
    if isinstance(traj, LimitPath):
        if traj.increments is None:
            raise InvalidArgument("the path carries no noise increments")
        noise = traj.noise if noise is None else noise
        dt = traj.cfg.dt
        kappa = traj.params.kappa
        s2 = sigma_norm(noise) ** 2 if noise is not None else 0.0
        th = [s.theta for s in traj.states]
        l2 = np.array([norm(t) ** 2 for t in th])
        h1 = np.array([norm(t, "Hs", 1.0) ** 2 for t in th])
        from .spectral import inner

        work = np.array([float(inner(dw, t)) for dw, t in zip(traj.increments, th[:-1])])
        res = 0.5 * np.diff(l2) + kappa * h1[:-1] * dt - 0.5 * s2 * dt - work
        return EnergyResidual(res[None, :], dt)
    if isinstance(traj, EnsembleRecord):
        if "noise_work" not in traj.observables:
            raise InvalidArgument("the record carries no noise work; record 'noise_work'")
        pre = "theta" if traj.system == "limit" else "Theta"
        l2, h1, work = _record_series(traj, [f"{pre}_l2sq", f"grad_{pre}_l2sq", "noise_work"])
        dt = traj.cfg.dt
        s2 = sigma_norm(traj.noise) ** 2
        res = 0.5 * np.diff(l2, axis=1) + traj.params.kappa * h1[:, :-1] * dt - 0.5 * s2 * dt - work[:, 1:]
        return EnergyResidual(res, dt)
    raise InvalidArgument("energy_residual needs a LimitPath or an EnsembleRecord")


@dataclass
class EnergyLedger:
    """Per-step energy bookkeeping of a full-system ensemble.

    Array attributes have shape ``(n_traj, n_rec)``; the step quantities at
    record ``r`` refer to the step ending there (column 0 is zero).
    """

    times: np.ndarray
    eps_U: np.ndarray
    delta_B: np.ndarray
    Theta_sq: np.ndarray
    visc_U: np.ndarray
    diss_B: np.ndarray
    diss_Theta: np.ndarray
    injected: float
    martingale: np.ndarray
    mechanical_residual: np.ndarray = field(repr=False, default=None)
    thermal_residual: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgument("ledger times must be strictly increasing")


def energy_ledger(record: EnsembleRecord) -> EnergyLedger:
    """Energy bookkeeping and balance residuals from a full-system record.

    Needs ``U_l2sq``, ``B_l2sq``, ``Theta_l2sq``, the three gradient norms,
    ``buoyancy_work`` and ``noise_work`` at every step.  The mechanical residual
    is ``1/2 d(eps ||U||^2 + delta ||B||^2) + (nu ||grad U||^2 + ||grad B||^2) dt
    - <Theta, U_3> dt``.
    """
    if record.system != "full":
        raise InvalidArgument("energy_ledger needs a full-system record")
    names = ["U_l2sq", "B_l2sq", "Theta_l2sq", "grad_U_l2sq", "grad_B_l2sq", "grad_Theta_l2sq", "buoyancy_work", "noise_work"]
    U, B, T, gU, gB, gT, buoy, work = _record_series(record, names)
    p = record.params
    dt = record.cfg.dt

    def stepwise(x):
        out = np.zeros_like(x)
        out[:, 1:] = x[:, :-1] * dt
        return out

    mech = np.zeros_like(U)
    mech[:, 1:] = (
        0.5 * np.diff(p.eps * U + p.delta * B, axis=1)
        + (p.nu * gU[:, :-1] + gB[:, :-1]) * dt
        - buoy[:, :-1] * dt
    )
    therm = np.zeros_like(T)
    s2 = sigma_norm(record.noise) ** 2
    therm[:, 1:] = 0.5 * np.diff(T, axis=1) + p.kappa * gT[:, :-1] * dt - 0.5 * s2 * dt - work[:, 1:]
    return EnergyLedger(
        record.times,
        p.eps * U,
        p.delta * B,
        T,
        p.nu * stepwise(gU),
        stepwise(gB),
        p.kappa * stepwise(gT),
        0.5 * s2 * dt,
        work,
        mech,
        therm,
    )


def stationary_balance(record: EnsembleRecord, burn_in: float) -> dict:
    """Compare ``kappa * <||grad theta||^2>`` with ``||sigma||^2 / 2`` after burn-in.

    The time average is taken per trajectory; the standard error treats the
    trajectory averages as independent.
    """
    pre = "theta" if record.system == "limit" else "Theta"
    name = f"grad_{pre}_l2sq"
    if name not in record.observables:
        raise InvalidArgument(f"record lacks {name}")
    keep = record.times >= burn_in
    if keep.sum() < 2:
        raise InvalidArgument("burn-in leaves fewer than two records")
    per_traj = record.params.kappa * record.observables[name][:, keep].mean(axis=1)
    lhs = float(per_traj.mean())
    se = float(per_traj.std(ddof=1) / math.sqrt(per_traj.size)) if per_traj.size > 1 else float("nan")
    rhs = 0.5 * sigma_norm(record.noise) ** 2
    return {"lhs": lhs, "rhs": rhs, "rel_err": abs(lhs - rhs) / rhs, "stderr": se}


# --------------------------------------------------------------------------
# exponential martingale tails
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TailRow:
    K: float
    empirical: float
    stderr: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound + 3 * self.stderr

    @property
    def margin(self) -> float:
        return self.bound + 3 * self.stderr - self.empirical


def brownian_paths(n_traj: int, horizon: float, n_steps: int, seed: int = 0):
    """Standard Brownian paths on a uniform grid and their quadratic variation.

    Returns:
        ``(N, QV)`` with ``N`` of shape ``(n_traj, n_steps + 1)``.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    dt = horizon / n_steps
    inc = rng.standard_normal((n_traj, n_steps)) * math.sqrt(dt)
    N = np.concatenate([np.zeros((n_traj, 1)), np.cumsum(inc, axis=1)], axis=1)
    QV = np.broadcast_to(np.arange(n_steps + 1) * dt, N.shape)
    return N, QV


def brownian_tail_probability(gamma: float, K: float, horizon: float) -> float:
    """``P(sup_{t <= T} (W_t - gamma t / 2) >= K)`` for standard Brownian motion."""
    if K <= 0:
        return 1.0
    s = math.sqrt(horizon)
    a = gamma / 2
    first = math.exp(log_ndtr((-K - a * horizon) / s))
    second = math.exp(-gamma * K + log_ndtr((-K + a * horizon) / s))
    return first + second


def temperature_gamma_max(params: PhysParams, noise: NoiseConfig, C: float = 1.0) -> float:
    """Largest admissible ``gamma``: ``kappa^2 nu / (4 C ||sigma||^2)``."""
    s2 = sigma_norm(noise) ** 2
    if s2 == 0:
        return math.inf
    return params.kappa**2 * params.nu / (4 * C * s2)


def temperature_martingale(record: EnsembleRecord, C: float = 1.0):
    """``N_t = (2C / (kappa nu)) int <sigma, Theta> dW`` and its quadratic variation.

    Needs ``noise_work`` and ``noise_qv`` in the record.
    """
    for name in ("noise_work", "noise_qv"):
        if name not in record.observables:
            raise InvalidArgument(f"record lacks {name}")
    p = record.params
    scale = 2 * C / (p.kappa * p.nu)
    N = scale * np.cumsum(record.observables["noise_work"], axis=1)
    QV = scale**2 * np.cumsum(record.observables["noise_qv"], axis=1)
    return N, QV


def martingale_tail_test(gamma: float, K_grid, N: np.ndarray, QV: np.ndarray, gamma_max: float | None = None) -> list[TailRow]:
    """Empirical ``P(sup_t (N_t - gamma/2 <N>_t) >= K)`` against ``exp(-gamma K)``.

    Args:
        gamma: Exponent, positive.
        K_grid: Levels.
        N, QV: Martingale paths and their quadratic variation, shape
            ``(n_traj, n_times)``.
        gamma_max: Optional admissibility cap on ``gamma``.

    Raises:
        InvalidArgument: if ``gamma`` is not positive or exceeds ``gamma_max``.
    """
    if not gamma > 0:
        raise InvalidArgument(f"gamma must be positive, got {gamma}")
    if gamma_max is not None and gamma > gamma_max * (1 + 1e-12):
        raise InvalidArgument(f"gamma={gamma} exceeds the admissible bound {gamma_max}")
    sup = np.max(N - 0.5 * gamma * QV, axis=1)
    n = sup.size
    rows = []
    for K in K_grid:
        p_hat = float(np.mean(sup >= K))
        se = math.sqrt(max(p_hat * (1 - p_hat), 1.0 / n) / n)
        rows.append(TailRow(float(K), p_hat, se, math.exp(-gamma * K)))
    return rows


# --------------------------------------------------------------------------
# Grönwall series
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SeriesResult:
    value: float
    tail_bound: float
    n_terms: int


def _check_series(C, eta, t, gamma):
    if not (eta > 0 and C >= 0 and t >= 0):
        raise InvalidArgument("need eta > 0, C >= 0 and t >= 0")
    limit = eta / (eta + C * t)
    if not (0 < gamma < limit):
        raise InvalidArgument(f"the series needs 0 < gamma < eta/(eta + C t) = {limit}, got {gamma}")


def _geometric_sum(term, rate: float, gamma: float, rtol: float, max_terms: int):
    """Sum ``term(k)`` for ``k >= 1`` whose ratio is at most ``rate ((k+1)/k)^(2 gamma)``."""
    total = 0.0
    k = 0
    while k < max_terms:
        k += 1
        a = term(k)
        total += a
        rho = rate * ((k + 1) / k) ** (2 * gamma)
        if rho < 1:
            tail = a * rho / (1 - rho)
            if tail <= rtol * total or total == 0 and a == 0 and k > 1:
                return total, tail, k
    raise InvalidArgument("series did not converge within the term limit")


def gronwall_series(
    T_const: float,
    C: float,
    eps_plus_delta: float,
    sigma_sq_t: float,
    eta: float,
    t: float,
    gamma: float,
    rtol: float = 1e-12,
    max_terms: int = 10_000_000,
) -> SeriesResult:
    """``sum_{k>=1} [k T' + C k^2 (eps + delta)(1 + ||sigma||^2 t)]^gamma exp(gamma C t k - (1 - gamma) eta k)``.

    ``sigma_sq_t`` is the product ``||sigma||^2 t``.  Terms are summed until a
    geometric majorant of the remainder drops below ``rtol`` times the partial
    sum.

    Raises:
        InvalidArgument: unless ``0 < gamma < eta / (eta + C t)``.
    """
    _check_series(C, eta, t, gamma)
    if T_const < 0 or eps_plus_delta < 0:
        raise InvalidArgument("T' and eps + delta must be nonnegative")
    rate = math.exp(gamma * C * t - (1 - gamma) * eta)
    a = T_const
    b = C * eps_plus_delta * (1 + sigma_sq_t)
    if a == 0 and b == 0:
        return SeriesResult(0.0, 0.0, 0)

    def term(k):
        return (k * a + k * k * b) ** gamma * rate**k

    value, tail, n = _geometric_sum(term, rate, gamma, rtol, max_terms)
    return SeriesResult(value, tail, n)


def gronwall_series_bound(T_const, C, eps_plus_delta, sigma_sq_t, eta, t, gamma) -> float:
    """Value of :func:`gronwall_series`."""
    return gronwall_series(T_const, C, eps_plus_delta, sigma_sq_t, eta, t, gamma).value


def gronwall_constant(C: float, sigma_sq_t: float, eta: float, t: float, gamma: float) -> float:
    """``C1`` with ``series <= C1 (T'^gamma + (eps + delta)^gamma)`` for all ``T', eps + delta``.

    Uses ``(x + y)^gamma <= x^gamma + y^gamma`` for ``gamma <= 1``, which splits
    the series into ``S1 = sum k^gamma r^k`` and ``S2 = sum k^(2 gamma) r^k``.
    """
    _check_series(C, eta, t, gamma)
    rate = math.exp(gamma * C * t - (1 - gamma) * eta)
    s1, _, _ = _geometric_sum(lambda k: k**gamma * rate**k, rate, gamma, 1e-13, 10_000_000)
    s2, _, _ = _geometric_sum(lambda k: k ** (2 * gamma) * rate**k, rate, gamma, 1e-13, 10_000_000)
    return max(s1, (C * (1 + sigma_sq_t)) ** gamma * s2)


# --------------------------------------------------------------------------
# exponential moments
# --------------------------------------------------------------------------


@dataclass
class MomentCheck:
    """One exponential moment: ``log E exp(lhs)`` against ``log E exp(rhs)``.

    The bound has the form ``E exp(lhs) <= C E exp(rhs)``; ``fitted_constant``
    is the smallest admissible ``C`` on this ensemble.
    """

    name: str
    log_lhs: float
    log_rhs: float
    stderr: float
    saturated: bool

    @property
    def fitted_constant(self) -> float:
        if self.saturated:
            return math.nan
        return math.exp(self.log_lhs - self.log_rhs)

    def passes(self, constant: float) -> bool:
        """One-sided check with a given constant and three-standard-error slack."""
        if self.saturated:
            return False
        lhs = math.exp(self.log_lhs)
        return lhs <= constant * math.exp(self.log_rhs) + 3 * self.stderr

    def margin(self, constant: float) -> float:
        return constant * math.exp(self.log_rhs) + 3 * self.stderr - math.exp(self.log_lhs)


@dataclass
class MomentReport:
    eta: float
    p: float
    checks: list

    def by_name(self, name: str) -> MomentCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self):
        for c in self.checks:
            yield {
                "check": c.name,
                "log_lhs": c.log_lhs,
                "log_rhs": c.log_rhs,
                "fitted_constant": c.fitted_constant,
                "stderr": c.stderr,
                "saturated": c.saturated,
            }


def _log_mean_exp(x: np.ndarray):
    x = np.asarray(x, float)
    lme = float(logsumexp(x) - math.log(x.size))
    saturated = bool(np.max(x) > EXP_LIMIT)
    if saturated:
        return lme, math.nan, True
    vals = np.exp(x)
    se = float(vals.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return lme, se, False


def _trapezoid_in_time(values, times):
    return np.trapezoid(values, times, axis=1)


def moment_report(record: EnsembleRecord, eta: float, p: float = 2.0, C: float = 1.0) -> MomentReport:
    """Empirical exponential moments of an ensemble against their bounds.

    Limit records (observables ``theta_l2sq``, ``grad_theta_l2sq`` and, for
    ``p = 3``, ``theta_l3sq``) give the supremum moments and the decay moment
    at the final time.  Full records additionally give the weighted-energy
    functional with decay rates ``alpha = nu/(2 eps) ^ 1/delta`` and
    ``beta = kappa / C``, and the uniform combination
    ``eps ||U||^2 + delta ||B||^2 + ||Theta||_{L3}^2`` at the final time.

    Overflowing moments are reported as saturated, not raised.

    Raises:
        InvalidArgument: if ``eta`` exceeds the policy cap or ``p`` is not 2 or 3.
    """
    if not (0 < eta <= ETA0):
        raise InvalidArgument(f"eta must lie in (0, {ETA0}], got {eta}")
    if p not in (2, 3, 2.0, 3.0):
        raise InvalidArgument("moment_report supports p = 2 and p = 3")
    pre = "theta" if record.system == "limit" else "Theta"
    obs = record.observables
    t = record.times
    T = float(t[-1])
    par = record.params
    s2 = sigma_norm(record.noise) ** 2
    sp2 = sigma_norm(record.noise, float(p)) ** 2
    lp_name = f"{pre}_l2sq" if p == 2 else f"{pre}_l3sq"
    need = [f"{pre}_l2sq", f"grad_{pre}_l2sq", lp_name]
    missing = [n for n in need if n not in obs]
    if missing:
        raise InvalidArgument(f"record lacks {missing}")
    lp = obs[lp_name]
    l2 = obs[f"{pre}_l2sq"]
    h1 = obs[f"grad_{pre}_l2sq"]
    checks = []

    def add(name, lhs, rhs):
        a, se, sat = _log_mean_exp(lhs)
        b, _, sat_b = _log_mean_exp(rhs)
        checks.append(MomentCheck(name, a, b, se, sat or sat_b))

    add(
        "sup_Lp",
        eta * (lp.max(axis=1) + _trapezoid_in_time(lp, t)),
        eta * (lp[:, 0] + T * sp2),
    )
    add(
        "sup_L2_dissipation",
        eta * (l2.max(axis=1) + par.kappa * _trapezoid_in_time(h1, t)),
        eta * (l2[:, 0] + T * s2),
    )
    decay = par.kappa  # slowest heat decay rate on the torus
    add("decay_Lp", eta * lp[:, -1], eta * (math.exp(-decay * T) * lp[:, 0] + C * sp2))
    if record.system == "full":
        need = ["U_l2sq", "B_l2sq", "grad_U_l2sq", "grad_B_l2sq"]
        missing = [n for n in need if n not in obs]
        if missing:
            raise InvalidArgument(f"record lacks {missing}")
        U, B, gU, gB = (obs[n] for n in need)
        alpha = min(par.nu / (2 * par.eps), 1 / par.delta)
        beta = par.kappa / C
        w = C / (par.kappa * par.nu)
        lhs = eta * (
            0.5 * par.eps * U[:, -1]
            + 0.5 * par.delta * B[:, -1]
            + w * l2[:, -1]
            + math.exp(-alpha * T) * _trapezoid_in_time(0.5 * par.nu * gU + gB, t)
            + math.exp(-beta * T) * C / (2 * par.nu) * _trapezoid_in_time(h1, t)
        )
        rhs = eta * (
            0.5 * par.eps * math.exp(-alpha * T) * U[:, 0]
            + 0.5 * par.delta * math.exp(-alpha * T) * B[:, 0]
            + w * math.exp(-beta * T) * l2[:, 0]
            + C * s2 / (beta * par.kappa * par.nu)
        )
        add("weighted_energy", lhs, rhs)
        if "Theta_l3sq" in obs:
            comb = eta * (par.eps * U[:, -1] + par.delta * B[:, -1] + obs["Theta_l3sq"][:, -1])
            a, se, sat = _log_mean_exp(comb)
            checks.append(MomentCheck("uniform_combination", a, 0.0, se, sat))
    return MomentReport(eta, float(p), checks)
