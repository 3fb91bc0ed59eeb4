"""Time integration of the full system, the limit equation and its variations.

All linear terms are integrated exactly: ``exp(-kappa |k|^2 dt)`` for the
temperature of the limit equation, and a per-mode matrix exponential of the
coupled (U, B, Theta) block for the full system.  Nonlinear terms enter through
first-order exponential Euler with the 2/3 rule.  The additive noise increment
is propagated over half a step, which makes the stationary variance of the
linear problem second-order accurate in ``dt`` and keeps the velocity on the
slow manifold when ``eps`` is far below ``dt``.

Internally the steppers work in the half-spectrum layout (last lattice axis
``k3 = 0..n/2``, see :func:`spectral.to_half`).  Full-system modes are stored
in a per-mode solenoidal basis: ``X[..., m, :] = (U_a, U_b, B_a, B_b, Theta)``
over the nonzero half-layout modes ``m``.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from .errors import BlowUp, InvalidArgument
from .noise import NoiseConfig, sample_half_sparse
from .spectral import (
    PARSEVAL,
    Grid,
    PhysParams,
    SpectralScalar,
    SpectralVector,
    _q_blocks,
    from_half,
    make_grid,
    multiplier_tables,
    to_half,
    to_physical,
    to_spectral_half,
)

__all__ = [
    "StepConfig",
    "LimitState",
    "FullState",
    "LimitStepper",
    "FullStepper",
    "limit_stepper",
    "full_stepper",
    "step_limit",
    "step_full",
    "LimitPath",
    "simulate_limit_path",
    "first_variation",
    "second_variation",
    "EnsembleRecord",
    "run_ensemble",
    "CoupledRecord",
    "run_coupled",
    "etd_tables",
    "phi1",
]


@dataclass(frozen=True)
class StepConfig:
    """Time-stepping options.

    Attributes:
        dt: Step size.
        scheme: Integrator tag; only ``"etd1"`` is implemented.
        nonlinear: Whether advection terms are included.
        check_finite: Whether every step is screened for NaN/Inf.
    """

    dt: float = 1e-3
    scheme: str = "etd1"
    nonlinear: bool = True
    check_finite: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidArgument(f"dt must be positive, got {self.dt}")
        if self.scheme != "etd1":
            raise InvalidArgument(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "dt", float(self.dt))


@dataclass(frozen=True, eq=False)
class LimitState:
    theta: SpectralScalar
    time: float = 0.0


@dataclass(frozen=True, eq=False)
class FullState:
    U: SpectralVector
    B: SpectralVector
    Theta: SpectralScalar
    time: float = 0.0


def phi1(z: np.ndarray) -> np.ndarray:
    """``(exp(z) - 1)/z`` with the removable singularity filled."""
    z = np.asarray(z, dtype=float)
    safe = np.where(z == 0, 1.0, z)
    return np.where(z == 0, 1.0, np.expm1(safe) / safe)


def _screen(arr: np.ndarray, step: int, traj_start: int = 0, tag=None, core_ndim: int = 3):
    """Raise :class:`BlowUp` if any trajectory in ``arr`` is not finite.

    ``core_ndim`` is the number of trailing per-trajectory axes (3 for
    lattice arrays, 2 for mode-coordinate arrays).
    """
    batched = arr.ndim > core_ndim
    axes = tuple(range(arr.ndim - core_ndim, arr.ndim))
    bad = ~np.all(np.isfinite(arr), axis=axes)
    if np.any(bad):
        ids = (np.flatnonzero(np.atleast_1d(bad)) + traj_start).tolist() if batched else []
        raise BlowUp(step, ids, tag)


def _add_sparse(arr: np.ndarray, noise, scale_flat: np.ndarray) -> np.ndarray:
    """Add sparse half-layout increments ``(cols, vals)`` scaled per column."""
    cols, vals = noise
    if cols.size:
        flat = arr.reshape(arr.shape[:-3] + (-1,))
        flat[..., cols] += scale_flat[cols] * vals
    return arr


# --------------------------------------------------------------------------
# limit equation
# --------------------------------------------------------------------------


class LimitStepper:
    """Exponential Euler stepper for the active scalar on half-layout arrays."""

    def __init__(self, grid: Grid, params: PhysParams, cfg: StepConfig):
        self.grid, self.params, self.cfg = grid, params, cfg
        h = grid.nh
        k2 = np.ascontiguousarray(grid.k2[..., :h])
        z = -params.kappa * k2 * cfg.dt
        self.E = np.exp(z)
        self.E_half = np.exp(0.5 * z)
        self.E_half_flat = self.E_half.reshape(-1)
        self.Phi = cfg.dt * phi1(z)
        self.Mu = np.ascontiguousarray(multiplier_tables(grid, params).Mu[..., :h])
        self.ik = np.ascontiguousarray(grid.ik[..., :h])
        self.mask = np.ascontiguousarray(grid.mask[..., :h])

    def bilinear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Dealiased half-layout coefficients of ``M_u(a) . grad b``."""
        n = self.grid.n
        u = to_physical(self.Mu * a[..., None, :, :, :], n)
        g = to_physical(self.ik * b[..., None, :, :, :], n)
        prod = u[..., 0, :, :, :] * g[..., 0, :, :, :]
        prod += u[..., 1, :, :, :] * g[..., 1, :, :, :]
        prod += u[..., 2, :, :, :] * g[..., 2, :, :, :]
        return to_spectral_half(prod) * self.mask

    def drift(self, theta: np.ndarray) -> np.ndarray:
        if not self.cfg.nonlinear:
            return np.zeros_like(theta)
        return -self.bilinear(theta, theta)

    def step(self, theta: np.ndarray, noise=None) -> np.ndarray:
        """One step; ``noise`` is a sparse pair or a dense half-layout array."""
        out = self.E * theta
        if self.cfg.nonlinear:
            out -= self.Phi * self.bilinear(theta, theta)
        if noise is None:
            return out
        if isinstance(noise, tuple):
            return _add_sparse(out, noise, self.E_half_flat)
        return out + self.E_half * noise


@lru_cache(maxsize=16)
def _limit_stepper(n: int, params: PhysParams, cfg: StepConfig) -> LimitStepper:
    return LimitStepper(make_grid(n), params, cfg)


def limit_stepper(grid: Grid, params: PhysParams, cfg: StepConfig) -> LimitStepper:
    return _limit_stepper(grid.n, params, cfg)


def step_limit(
    s: LimitState, params: PhysParams, cfg: StepConfig, dW: SpectralScalar | None = None
) -> LimitState:
    """Advance the limit equation by one step.

    Raises:
        BlowUp: if the new state is not finite.
    """
    g = s.theta.grid
    st = limit_stepper(g, params, cfg)
    noise = None if dW is None else to_half(dW.coeffs)
    new = st.step(to_half(s.theta.coeffs), noise)
    if cfg.check_finite:
        _screen(new, 0)
    return LimitState(SpectralScalar(from_half(new, g.n), g), s.time + cfg.dt)


# --------------------------------------------------------------------------
# per-mode exponential tables
# --------------------------------------------------------------------------


def etd_tables(L: np.ndarray, dt: float):
    """Propagators of ``X' = -L X + N`` over one step, batched over modes.

    Returns:
        ``(E, Phi, E_half)`` with ``E = exp(-L dt)``,
        ``Phi = int_0^dt exp(-L s) ds`` and ``E_half = exp(-L dt / 2)``.
    """
    m, d, _ = L.shape
    aug = np.zeros((m, 2 * d, 2 * d), complex)
    aug[:, :d, :d] = -L * dt
    aug[:, :d, d:] = np.eye(d)
    big = expm(aug)
    E = np.ascontiguousarray(big[:, :d, :d])
    Phi = dt * big[:, :d, d:]
    E_half = expm(-0.5 * dt * L)
    return E, Phi, E_half


class ModeFrame:
    """Nonzero half-layout modes of a grid with their solenoidal basis.

    Attributes:
        flat: Flat half-layout index of every mode, shape ``(M,)``.
        V: Basis vectors, shape ``(M, 3, 2)``.
        k2, beta, weight: Per-mode ``|k|^2``, ``B0.k`` and full-lattice
            multiplicity.
        W: Rotation block ``e_i . (Omega x e_j)``, shape ``(M, 2, 2)``.
        drive: Components of ``e3`` in the basis, shape ``(M, 2)``.
        c: ``nu |k|^2 + (B0.k)^2/|k|^2``.
        mu_basis: Basis components of ``M_u(k)``, shape ``(M, 2)``.
    """

    def __init__(self, grid: Grid, params: PhysParams):
        self.grid = grid
        h = grid.nh
        self.half_shape = (grid.n, grid.n, h)
        k2h = grid.k2[..., :h].reshape(-1)
        self.flat = np.flatnonzero(k2h > 0)
        self.k2 = k2h[self.flat]
        self.weight = grid.half_weight.reshape(-1)[self.flat]
        k = np.moveaxis(grid.kvec[..., :h], 0, -1).reshape(-1, 3)[self.flat]
        self.kvec = k
        self.beta = k @ np.array(params.b0_hat)
        self.V = grid.solenoidal_basis[..., :h, :, :].reshape(-1, 3, 2)[self.flat]
        Q, drive = _q_blocks(grid.n, params)
        Q = Q[..., :h, :, :].reshape(-1, 2, 2)[self.flat]
        self.drive = drive[..., :h, :].reshape(-1, 2)[self.flat]
        self.c = params.nu * self.k2 + self.beta**2 / self.k2
        self.W = Q - self.c[:, None, None] * np.eye(2)
        Mu = multiplier_tables(grid, params).Mu[..., :h].reshape(3, -1)[:, self.flat]
        self.mu_basis = self.to_basis_flat(Mu)
        self.mask = grid.mask[..., :h].reshape(-1)[self.flat]

    @property
    def size(self) -> int:
        return self.flat.size

    def to_basis_flat(self, f: np.ndarray) -> np.ndarray:
        """``(..., 3, M)`` Cartesian mode values to ``(..., M, 2)``."""
        V = self.V
        return (
            f[..., 0, :, None] * V[:, 0, :]
            + f[..., 1, :, None] * V[:, 1, :]
            + f[..., 2, :, None] * V[:, 2, :]
        )

    def to_basis(self, vec_h: np.ndarray) -> np.ndarray:
        """``(..., 3, n, n, nh)`` half-layout vectors to ``(..., M, 2)``."""
        f = vec_h.reshape(vec_h.shape[:-3] + (-1,))[..., self.flat]
        return self.to_basis_flat(f)

    def from_basis(self, coef: np.ndarray) -> np.ndarray:
        batch = coef.shape[:-2]
        out = np.zeros(batch + (3, int(np.prod(self.half_shape))), complex)
        V = self.V
        for i in range(3):
            out[..., i, self.flat] = V[:, i, 0] * coef[..., 0] + V[:, i, 1] * coef[..., 1]
        return out.reshape(batch + (3,) + self.half_shape)

    def scalar_to_modes(self, s_h: np.ndarray) -> np.ndarray:
        return s_h.reshape(s_h.shape[:-3] + (-1,))[..., self.flat]

    def scalar_from_modes(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(v.shape[:-1] + (int(np.prod(self.half_shape)),), complex)
        out[..., self.flat] = v
        return out.reshape(v.shape[:-1] + self.half_shape)

    def sq(self, modes: np.ndarray, power: float = 0.0, vector: bool = False) -> np.ndarray:
        """Weighted sums ``(2 pi)^3 sum |.|^2 |k|^(2 power)`` over modes."""
        a = np.abs(modes) ** 2
        if vector:
            a = a.sum(axis=-1)
        w = self.weight if power == 0 else self.weight * self.k2**power
        return PARSEVAL * (a @ w)


def _matvec(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-mode product ``(M, d, d) @ (..., M, d)``."""
    return np.matmul(A, x[..., None])[..., 0]


# --------------------------------------------------------------------------
# full system
# --------------------------------------------------------------------------


class FullStepper:
    """Exponential Euler stepper for the full system in mode coordinates."""

    SYM = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
    ANTI = ((0, 1), (0, 2), (1, 2))

    def __init__(self, grid: Grid, params: PhysParams, cfg: StepConfig):
        self.grid, self.params, self.cfg = grid, params, cfg
        fr = ModeFrame(grid, params)
        self.frame = fr
        self.L = full_generator(fr, params)
        self.E, self.Phi, E_half = etd_tables(self.L, cfg.dt)
        self.noise_col = np.ascontiguousarray(E_half[:, :, 4])
        # half-layout flat index -> mode index, for sparse noise
        self.mode_of_flat = np.full(int(np.prod(fr.half_shape)), -1, dtype=np.int64)
        self.mode_of_flat[fr.flat] = np.arange(fr.size)
        self.ik_modes = 1j * np.where(
            np.abs(fr.kvec) == grid.n // 2, 0.0, fr.kvec
        )  # (M, 3)

    # conversions ---------------------------------------------------------
    def pack(self, U: np.ndarray, B: np.ndarray, Theta: np.ndarray) -> np.ndarray:
        """Half-layout Cartesian fields to mode coordinates."""
        fr = self.frame
        return np.concatenate(
            [fr.to_basis(U), fr.to_basis(B), fr.scalar_to_modes(Theta)[..., None]], axis=-1
        )

    def unpack(self, X: np.ndarray):
        fr = self.frame
        return fr.from_basis(X[..., :2]), fr.from_basis(X[..., 2:4]), fr.scalar_from_modes(X[..., 4])

    def pack_full(self, U, B, Theta) -> np.ndarray:
        return self.pack(to_half(U), to_half(B), to_half(Theta))

    def unpack_full(self, X):
        n = self.grid.n
        U, B, T = self.unpack(X)
        return from_half(U, n), from_half(B, n), from_half(T, n)

    # nonlinear terms -----------------------------------------------------
    def drift(self, X: np.ndarray) -> np.ndarray:
        """Mode coordinates of the dealiased, projected nonlinear terms."""
        if not self.cfg.nonlinear:
            return np.zeros_like(X)
        fr = self.frame
        n = self.grid.n
        U, B, Th = self.unpack(X)
        ph = to_physical(np.concatenate([U, B, Th[..., None, :, :, :]], axis=-4), n)
        u = [ph[..., i, :, :, :] for i in range(3)]
        b = [ph[..., 3 + i, :, :, :] for i in range(3)]
        t = ph[..., 6, :, :, :]
        ratio = self.params.delta / self.params.eps
        prods = [ratio * b[i] * b[j] - u[i] * u[j] for i, j in self.SYM]
        prods += [u[j] * b[i] - b[j] * u[i] for i, j in self.ANTI]
        prods += [u[j] * t for j in range(3)]
        P = to_spectral_half(np.stack(prods, axis=-4))
        P = P.reshape(P.shape[:-3] + (-1,))[..., fr.flat]  # (..., 12, M)
        ik = self.ik_modes
        T = {}
        for idx, (i, j) in enumerate(self.SYM):
            T[i, j] = T[j, i] = P[..., idx, :]
        A = {}
        for idx, (i, j) in enumerate(self.ANTI):
            A[i, j] = P[..., 6 + idx, :]
            A[j, i] = -A[i, j]
        NU = np.stack([sum(ik[:, j] * T[i, j] for j in range(3)) for i in range(3)], axis=-2)
        NB = np.stack(
            [-sum(ik[:, j] * A[i, j] for j in range(3) if j != i) for i in range(3)], axis=-2
        )
        NT = -sum(ik[:, j] * P[..., 9 + j, :] for j in range(3))
        out = np.concatenate(
            [fr.to_basis_flat(NU), fr.to_basis_flat(NB), NT[..., None]], axis=-1
        )
        return out * fr.mask[:, None]

    def step(self, X: np.ndarray, noise=None) -> np.ndarray:
        """One step; ``noise`` is a sparse half-layout pair or dense mode values."""
        out = _matvec(self.E, X)
        if self.cfg.nonlinear:
            out += _matvec(self.Phi, self.drift(X))
        if noise is None:
            return out
        if isinstance(noise, tuple):
            cols, vals = noise
            if cols.size:
                m = self.mode_of_flat[cols]
                out[..., m, :] += self.noise_col[m] * vals[..., None]
            return out
        return out + self.noise_col * noise[..., None]


def full_generator(fr: ModeFrame, params: PhysParams) -> np.ndarray:
    """Per-mode generator ``L`` with ``X' = -L X`` for the linear full system."""
    eps, delta = params.eps, params.delta
    L = np.zeros((fr.size, 5, 5), complex)
    I2 = np.eye(2)
    L[:, :2, :2] = (params.nu * fr.k2[:, None, None] * I2 + fr.W) / eps
    L[:, :2, 2:4] = (-1j * fr.beta / eps)[:, None, None] * I2
    L[:, :2, 4] = -fr.drive / eps
    L[:, 2:4, :2] = (-1j * fr.beta / delta)[:, None, None] * I2
    L[:, 2:4, 2:4] = (fr.k2 / delta)[:, None, None] * I2
    L[:, 4, 4] = params.kappa * fr.k2
    return L


@lru_cache(maxsize=16)
def _full_stepper(n: int, params: PhysParams, cfg: StepConfig) -> FullStepper:
    return FullStepper(make_grid(n), params, cfg)


def full_stepper(grid: Grid, params: PhysParams, cfg: StepConfig) -> FullStepper:
    return _full_stepper(grid.n, params, cfg)


def step_full(
    s: FullState, params: PhysParams, cfg: StepConfig, dW: SpectralScalar | None = None
) -> FullState:
    """Advance the full system by one step.

    Raises:
        BlowUp: if the new state is not finite.
    """
    g = s.Theta.grid
    st = full_stepper(g, params, cfg)
    X = st.pack_full(s.U.coeffs, s.B.coeffs, s.Theta.coeffs)
    noise = None if dW is None else st.frame.scalar_to_modes(to_half(dW.coeffs))
    X = st.step(X, noise)
    if cfg.check_finite:
        _screen(X, 0, core_ndim=2)
    U, B, T = st.unpack_full(X)
    return FullState(
        SpectralVector(U, g, True), SpectralVector(B, g, True), SpectralScalar(T, g), s.time + cfg.dt
    )


# --------------------------------------------------------------------------
# stored paths and variations
# --------------------------------------------------------------------------


@dataclass(eq=False)
class LimitPath(Sequence):
    """Sequence of limit states on a uniform time grid with its noise path."""

    states: list
    params: PhysParams
    cfg: StepConfig
    noise: NoiseConfig | None = None
    increments: list | None = None

    def __getitem__(self, i):
        return self.states[i]

    def __len__(self):
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    def index_of(self, t: float) -> int:
        t0 = self.states[0].time
        pos = (t - t0) / self.cfg.dt
        i = int(round(pos))
        if abs(pos - i) > 1e-6 or i < 0 or i >= len(self.states):
            raise InvalidArgument(f"time {t} is not covered by the stored path")
        return i


def simulate_limit_path(
    theta0: SpectralScalar,
    params: PhysParams,
    cfg: StepConfig,
    n_steps: int,
    noise: NoiseConfig | None = None,
    traj: int = 0,
    t0: float = 0.0,
    step_offset: int = 0,
) -> LimitPath:
    """Run one trajectory and keep every state and increment."""
    g = theta0.grid
    n = g.n
    st = limit_stepper(g, params, cfg)
    states = [LimitState(theta0, t0)]
    incs = []
    th = to_half(theta0.coeffs)
    for i in range(n_steps):
        dW = np.zeros((n, n, g.nh), complex)
        if noise is not None and noise.entries:
            cols, vals = sample_half_sparse(noise, g, cfg.dt, step_offset + i, traj, 1)
            _add_sparse(dW, (cols, vals[0]), np.ones(dW.size))
        th = st.step(th, dW)
        if cfg.check_finite:
            _screen(th, i)
        incs.append(SpectralScalar(from_half(dW, n), g))
        states.append(LimitState(SpectralScalar(from_half(th, n), g), t0 + (i + 1) * cfg.dt))
    return LimitPath(states, params, cfg, noise, incs)


def _variation_range(path: LimitPath, s: float, t: float):
    if not t > s:
        raise InvalidArgument(f"need s < t, got s={s}, t={t}")
    return path.index_of(s), path.index_of(t)


def first_variation(path: LimitPath, xi: SpectralScalar, s: float, t: float) -> SpectralScalar:
    """Tangent-linear response at time ``t`` to a perturbation ``xi`` at ``s``.

    Integrates the linearisation of the discrete limit-equation map along the
    stored path, so it is the exact derivative of the numerical flow.

    Raises:
        InvalidArgument: if ``[s, t]`` is not covered by ``path``.
    """
    i0, i1 = _variation_range(path, s, t)
    g = xi.grid
    st = limit_stepper(g, path.params, path.cfg)
    z = to_half(xi.coeffs)
    for i in range(i0, i1):
        th = to_half(path[i].theta.coeffs)
        nxt = st.E * z
        if path.cfg.nonlinear:
            nxt -= st.Phi * (st.bilinear(z, th) + st.bilinear(th, z))
        z = nxt
    return SpectralScalar(from_half(z, g.n), g)


def second_variation(
    path: LimitPath, xi: SpectralScalar, xi2: SpectralScalar, s: float, t: float
) -> SpectralScalar:
    """Second derivative of the discrete flow in directions ``xi``, ``xi2``.

    Raises:
        InvalidArgument: if ``[s, t]`` is not covered by ``path``.
    """
    i0, i1 = _variation_range(path, s, t)
    g = xi.grid
    st = limit_stepper(g, path.params, path.cfg)
    z1, z2 = to_half(xi.coeffs), to_half(xi2.coeffs)
    w = np.zeros_like(z1)
    for i in range(i0, i1):
        if not path.cfg.nonlinear:
            break
        th = to_half(path[i].theta.coeffs)
        bl = st.bilinear
        src = bl(z1, z2) + bl(z2, z1)
        w = st.E * w - st.Phi * (bl(w, th) + bl(th, w) + src)
        z1 = st.E * z1 - st.Phi * (bl(z1, th) + bl(th, z1))
        z2 = st.E * z2 - st.Phi * (bl(z2, th) + bl(th, z2))
    return SpectralScalar(from_half(w, g.n), g)


# --------------------------------------------------------------------------
# ensembles
# --------------------------------------------------------------------------


LIMIT_OBSERVABLES = ("theta_l2sq", "grad_theta_l2sq")
FULL_OBSERVABLES = (
    "U_l2sq",
    "B_l2sq",
    "Theta_l2sq",
    "grad_U_l2sq",
    "grad_B_l2sq",
    "grad_Theta_l2sq",
)
STEP_OBSERVABLES = ("noise_work", "noise_qv")


def _half_sq(c_h: np.ndarray, grid: Grid, power: float = 0.0) -> np.ndarray:
    w = grid.half_weight
    if power:
        w = w * grid.k2[..., : grid.nh] ** power
    return PARSEVAL * np.sum(np.abs(c_h) ** 2 * w, axis=(-3, -2, -1))


def l3_squared(theta_h: np.ndarray, grid: Grid) -> np.ndarray:
    """``||theta||_{L3}^2`` by quadrature, from half-layout coefficients."""
    phys = to_physical(theta_h, grid.n)
    with np.errstate(over="ignore"):
        return (grid.cell_volume * np.sum(np.abs(phys) ** 3, axis=(-3, -2, -1))) ** (2.0 / 3.0)


def _coef_observable(name: str, grid: Grid):
    parts = name.split("_")[1:]
    k = tuple(int(v) for v in parts[:3])
    m = int(parts[3])
    if k[2] < 0:
        k, sign = tuple(-c for c in k), (1.0 if m == 0 else -1.0)
    else:
        sign = 1.0
    idx = grid.index_of(k)
    return idx, m, sign


def _limit_observables(names, grid: Grid, th: np.ndarray) -> dict:
    out = {}
    for name in names:
        if name == "theta_l2sq":
            out[name] = _half_sq(th, grid)
        elif name == "grad_theta_l2sq":
            out[name] = _half_sq(th, grid, 1.0)
        elif name == "theta_l3sq":
            out[name] = l3_squared(th, grid)
        elif name.startswith("coef_"):
            idx, m, sign = _coef_observable(name, grid)
            c = th[(...,) + idx]
            out[name] = 2 * c.real if m == 0 else -2 * sign * c.imag
        else:
            raise InvalidArgument(f"unknown observable {name!r} for the limit system")
    return out


def _full_observables(names, st: FullStepper, X: np.ndarray) -> dict:
    fr = st.frame
    out = {}
    for name in names:
        if name == "U_l2sq":
            out[name] = fr.sq(X[..., :2], 0, True)
        elif name == "B_l2sq":
            out[name] = fr.sq(X[..., 2:4], 0, True)
        elif name == "Theta_l2sq":
            out[name] = fr.sq(X[..., 4])
        elif name == "grad_U_l2sq":
            out[name] = fr.sq(X[..., :2], 1, True)
        elif name == "grad_B_l2sq":
            out[name] = fr.sq(X[..., 2:4], 1, True)
        elif name == "grad_Theta_l2sq":
            out[name] = fr.sq(X[..., 4], 1)
        elif name == "Theta_l3sq":
            out[name] = l3_squared(fr.scalar_from_modes(X[..., 4]), st.grid)
        elif name == "buoyancy_work":
            u3 = fr.V[:, 2, 0] * X[..., 0] + fr.V[:, 2, 1] * X[..., 1]
            out[name] = PARSEVAL * ((np.conj(u3) * X[..., 4]).real @ fr.weight)
        elif name.startswith("coef_"):
            idx, m, sign = _coef_observable(name, st.grid)
            th = fr.scalar_from_modes(X[..., 4])
            c = th[(...,) + idx]
            out[name] = 2 * c.real if m == 0 else -2 * sign * c.imag
        else:
            raise InvalidArgument(f"unknown observable {name!r} for the full system")
    return out


@dataclass(eq=False)
class EnsembleRecord:
    """Output of :func:`run_ensemble`.

    Attributes:
        system: ``"limit"`` or ``"full"``.
        times: Record times, shape ``(n_rec,)``.
        observables: Name to array of shape ``(n_traj, n_rec)``.  Step-based
            quantities (``noise_work``, ``noise_qv``) hold sums over the steps
            since the previous record.
        terminal: Batched final state.
        stopped_step: Step index at which each trajectory was stopped, or -1.
        params, noise, cfg: Run configuration.
    """

    system: str
    times: np.ndarray
    observables: dict
    terminal: object
    stopped_step: np.ndarray
    params: PhysParams
    noise: NoiseConfig
    cfg: StepConfig
    traj_offset: int = 0

    @property
    def n_traj(self) -> int:
        return self.stopped_step.size


def _check_noise_support(noise: NoiseConfig, grid: Grid):
    for e in noise.entries:
        if not grid.mask[grid.index_of(e.k)]:
            raise InvalidArgument(f"forced mode {e.k} lies outside the dealiased band of {grid}")


def _noise_pairing(noise: NoiseConfig, grid: Grid):
    """Per-entry (half index, parity, alpha) for projections onto forced modes."""
    out = []
    for e in noise.entries:
        k = e.k if e.k[2] >= 0 else tuple(-c for c in e.k)
        sign = 1.0 if (e.k[2] >= 0 or e.m == 0) else -1.0
        out.append((grid.index_of(k), e.m, e.alpha * sign))
    return out


def _projections(pairing, th_h: np.ndarray) -> np.ndarray:
    """``alpha_e <sigma_e, theta>`` for every entry; shape ``(..., entries)``."""
    vals = []
    for idx, m, a in pairing:
        c = th_h[(...,) + idx]
        vals.append(a * PARSEVAL * (c.real if m == 0 else -c.imag))
    return np.stack(vals, axis=-1)


def _noise_work(noise_pair, th_h: np.ndarray, grid: Grid) -> np.ndarray:
    """``<sigma dW, theta>`` from the sparse increment."""
    cols, vals = noise_pair
    if not cols.size:
        return np.zeros(th_h.shape[:-3])
    flat = th_h.reshape(th_h.shape[:-3] + (-1,))[..., cols]
    w = grid.half_weight.reshape(-1)[cols]
    return PARSEVAL * np.sum(w * (np.conj(vals) * flat).real, axis=-1)


def _run_batch(system, sampler, params, cfg, n_steps, noise, start, count, names, record_every, stop_level, step_offset):
    grid = sampler.grid
    n = grid.n
    state_names = [s for s in names if s not in STEP_OBSERVABLES]
    want_steps = [s for s in names if s in STEP_OBSERVABLES]
    n_rec = n_steps // record_every + 1
    rec = {s: np.zeros((count, n_rec)) for s in names}
    stopped = np.full(count, -1, dtype=np.int64)
    acc = {s: np.zeros(count) for s in want_steps}
    pairing = _noise_pairing(noise, grid) if "noise_qv" in acc else None

    if system == "limit":
        st = limit_stepper(grid, params, cfg)
        state = to_half(sampler.sample_theta(start, count))
        core_ndim = 3

        def observe(s):
            return _limit_observables(state_names, grid, s)

        def temperature(s):
            return s

        def finish(s):
            return LimitState(SpectralScalar(from_half(s, n), grid), n_steps * cfg.dt)

    elif system == "full":
        st = full_stepper(grid, params, cfg)
        U, B, Th = sampler.sample_full(start, count, params)
        state = st.pack_full(U, B, Th)
        core_ndim = 2

        def observe(X):
            return _full_observables(state_names, st, X)

        def temperature(X):
            return st.frame.scalar_from_modes(X[..., 4])

        def finish(X):
            U, B, T = st.unpack_full(X)
            return FullState(
                SpectralVector(U, grid, True), SpectralVector(B, grid, True), SpectralScalar(T, grid), n_steps * cfg.dt
            )

    else:
        raise InvalidArgument(f"unknown system {system!r}")

    def store(r, values, step):
        live = (stopped < 0) | (stopped == step)
        for s, v in values.items():
            rec[s][:, r] = np.where(live, v, rec[s][:, max(r - 1, 0)])
        for s in want_steps:
            rec[s][:, r] = np.where(live, acc[s], 0.0)
            acc[s][:] = 0.0

    if stop_level is not None:
        stopped[l3_squared(temperature(state), grid) >= stop_level] = 0
    store(0, observe(state), 0)
    for i in range(n_steps):
        dW = sample_half_sparse(noise, grid, cfg.dt, step_offset + i, start, count)
        if want_steps:
            th = temperature(state)
            if "noise_work" in acc:
                acc["noise_work"] += _noise_work(dW, th, grid)
            if "noise_qv" in acc:
                acc["noise_qv"] += np.sum(_projections(pairing, th) ** 2, axis=-1) * cfg.dt
        # overflow on the way to a blow-up is reported by the screen
        with np.errstate(over="ignore", invalid="ignore"):
            state = st.step(state, dW)
        if cfg.check_finite:
            _screen(state, step_offset + i, start, core_ndim=core_ndim)
        if stop_level is not None:
            hit = (l3_squared(temperature(state), grid) >= stop_level) & (stopped < 0)
            stopped[hit] = i + 1
        if (i + 1) % record_every == 0:
            store((i + 1) // record_every, observe(state), i + 1)
    return rec, finish(state), stopped


def _concat_states(parts):
    first = parts[0]
    if isinstance(first, LimitState):
        th = np.concatenate([p.theta.coeffs for p in parts])
        return LimitState(SpectralScalar(th, first.theta.grid), first.time)
    g = first.Theta.grid
    return FullState(
        SpectralVector(np.concatenate([p.U.coeffs for p in parts]), g, True),
        SpectralVector(np.concatenate([p.B.coeffs for p in parts]), g, True),
        SpectralScalar(np.concatenate([p.Theta.coeffs for p in parts]), g),
        first.time,
    )


def run_ensemble(
    system: str,
    sampler,
    params: PhysParams,
    cfg: StepConfig,
    horizon: float,
    n_traj: int,
    noise: NoiseConfig,
    observables=None,
    record_every: int = 1,
    stop_level: float | None = None,
    batch_size: int = 256,
    workers: int = 1,
    traj_offset: int = 0,
    step_offset: int = 0,
) -> EnsembleRecord:
    """Simulate ``n_traj`` independent trajectories and record observables.

    Trajectory ``i`` uses noise key ``(noise.seed, step, traj_offset + i)`` and
    the initial sample with the same index, so records do not depend on the
    batch size or on the number of workers.

    Args:
        system: ``"limit"`` or ``"full"``.
        sampler: Initial-condition sampler (see :mod:`magnetostrophic.samplers`).
        params: Physical parameters.
        cfg: Step configuration.
        horizon: Final time; rounded to a whole number of steps.
        n_traj: Number of trajectories.
        noise: Forcing configuration and seed.
        observables: Names to record; defaults depend on ``system``.  Besides
            the defaults, ``theta_l3sq`` / ``Theta_l3sq``, ``noise_work``,
            ``noise_qv``, ``buoyancy_work`` (full system, ``<Theta, U_3>``) and
            real-basis coordinates ``coef_k1_k2_k3_m`` are available.
        record_every: Record stride in steps.
        stop_level: Optional level ``K`` of the discrete stopping time on
            ``||theta||_{L3}^2``.
        batch_size: Trajectories advanced together.
        workers: Threads used to process batches.
        traj_offset: Global index of the first trajectory.
        step_offset: Global index of the first step (for continuing runs).

    Raises:
        InvalidArgument: on bad arguments.
        BlowUp: if a trajectory produces non-finite values.
    """
    if n_traj < 1:
        raise InvalidArgument("n_traj must be at least 1")
    if horizon < 0:
        raise InvalidArgument("horizon must be nonnegative")
    if system not in ("limit", "full"):
        raise InvalidArgument(f"unknown system {system!r}")
    n_steps = int(round(horizon / cfg.dt))
    if record_every < 1:
        raise InvalidArgument("record_every must be positive")
    if n_steps % record_every:
        raise InvalidArgument("record_every must divide the number of steps")
    _check_noise_support(noise, sampler.grid)
    if observables is None:
        observables = LIMIT_OBSERVABLES if system == "limit" else FULL_OBSERVABLES
    names = list(dict.fromkeys(observables))
    starts = list(range(0, n_traj, batch_size))
    jobs = [
        (system, sampler, params, cfg, n_steps, noise, traj_offset + s, min(batch_size, n_traj - s), names, record_every, stop_level, step_offset)
        for s in starts
    ]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _run_batch(*a), jobs))
    else:
        results = [_run_batch(*a) for a in jobs]
    obs = {s: np.concatenate([r[0][s] for r in results]) for s in names}
    terminal = _concat_states([r[1] for r in results])
    stopped = np.concatenate([r[2] for r in results])
    times = np.arange(n_steps // record_every + 1) * record_every * cfg.dt
    return EnsembleRecord(system, times, obs, terminal, stopped, params, noise, cfg, traj_offset)


# --------------------------------------------------------------------------
# coupled full / limit runs
# --------------------------------------------------------------------------


@dataclass(eq=False)
class CoupledRecord:
    """Per-trajectory error statistics of a full run against its limit.

    Attributes:
        sup_theta_err: ``sup_n ||Theta_n - theta_n||`` per trajectory.
        h1_err_integral: Time integral of ``||U - M_u theta||_{H1}^2 +
            ||B - M_b theta||_{H1}^2`` (trapezoid rule) per trajectory.
        theta_err_path: ``||Theta_n - theta_n||`` at every step, shape
            ``(n_traj, n_steps + 1)``.
    """

    sup_theta_err: np.ndarray
    h1_err_integral: np.ndarray
    theta_err_path: np.ndarray
    terminal_full: FullState
    terminal_limit: LimitState


def run_coupled(
    sampler,
    params: PhysParams,
    cfg: StepConfig,
    horizon: float,
    n_traj: int,
    noise: NoiseConfig,
    batch_size: int = 64,
    tag=None,
) -> CoupledRecord:
    """Run the full system and the limit equation on one shared noise path.

    The limit equation starts from the temperature of the full initial state.

    Raises:
        BlowUp: tagged with ``tag`` if either system blows up.
    """
    grid = sampler.grid
    n = grid.n
    _check_noise_support(noise, grid)
    n_steps = int(round(horizon / cfg.dt))
    fs = full_stepper(grid, params, cfg)
    ls = limit_stepper(grid, params, cfg)
    fr = fs.frame
    mu_b = fr.mu_basis  # (M, 2)
    mb_factor = 1j * fr.beta / fr.k2

    def errors(X, th_modes):
        e_t = np.sqrt(fr.sq(X[..., 4] - th_modes))
        u_lim = mu_b * th_modes[..., None]
        b_lim = mb_factor[:, None] * u_lim
        e_h1 = fr.sq(X[..., :2] - u_lim, 1, True) + fr.sq(X[..., 2:4] - b_lim, 1, True)
        return e_t, e_h1

    sups, ints, paths, fulls, lims = [], [], [], [], []
    for start in range(0, n_traj, batch_size):
        count = min(batch_size, n_traj - start)
        U, B, Th = sampler.sample_full(start, count, params)
        X = fs.pack_full(U, B, Th)
        th = to_half(Th)
        e_t, prev_h = errors(X, fr.scalar_to_modes(th))
        path = [e_t]
        integral = np.zeros(count)
        for i in range(n_steps):
            dW = sample_half_sparse(noise, grid, cfg.dt, i, start, count)
            with np.errstate(over="ignore", invalid="ignore"):
                X = fs.step(X, dW)
                th = ls.step(th, dW)
            if cfg.check_finite:
                _screen(X, i, start, tag, core_ndim=2)
                _screen(th, i, start, tag)
            e_t, e_h = errors(X, fr.scalar_to_modes(th))
            path.append(e_t)
            integral += 0.5 * cfg.dt * (prev_h + e_h)
            prev_h = e_h
        path = np.stack(path, axis=1)
        paths.append(path)
        sups.append(path.max(axis=1))
        ints.append(integral)
        U, B, T = fs.unpack_full(X)
        fulls.append(
            FullState(SpectralVector(U, grid, True), SpectralVector(B, grid, True), SpectralScalar(T, grid), n_steps * cfg.dt)
        )
        lims.append(LimitState(SpectralScalar(from_half(th, n), grid), n_steps * cfg.dt))
    return CoupledRecord(
        np.concatenate(sups),
        np.concatenate(ints),
        np.concatenate(paths),
        _concat_states(fulls),
        _concat_states(lims),
    )
