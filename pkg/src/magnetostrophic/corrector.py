"""Boundary-layer corrector systems for the singular limit.

Stage one keeps the velocity layer that relaxes on the fast time scale
``t/eps``::

    u = Q^{-1} P e3 theta + exp(-t Q/eps) (U(0) - Q^{-1} P e3 Theta(0))
    b = (-Lap)^{-1} (B0 . grad) u
    d theta = (-u . grad theta + kappa Lap theta) dt + sigma dW

Stage two evolves the velocity with inertia and keeps the magnetic layer
relaxing on ``t/delta``::

    eps (u' + u . grad u) = -A u + (B0 . grad) b + P e3 theta
    b = exp(t Lap/delta) (B(0) - (-Lap)^{-1} (B0 . grad) U(0)) + (-Lap)^{-1} (B0 . grad) u
    d theta = (-u . grad theta + kappa Lap theta) dt + sigma dW

The magnetic layer ``l = b - (-Lap)^{-1}(B0 . grad) u`` is carried as an extra
linear variable so that a single per-mode exponential integrates the stiff
part of stage two.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .dynamics import (
    FullState,
    ModeFrame,
    StepConfig,
    _matvec,
    _screen,
    etd_tables,
    full_stepper,
    limit_stepper,
)
from .errors import InvalidArgument
from .spectral import (
    PhysParams,
    SpectralScalar,
    SpectralVector,
    from_half,
    make_grid,
    to_half,
    to_physical,
    to_spectral_half,
)

__all__ = ["CorrectorState", "init_corrector", "step_corrector"]

STAGES = ("one", "two")


@dataclass(frozen=True, eq=False)
class CorrectorState:
    """Corrector fields plus the initial data that feeds the layer terms.

    ``time`` is measured from the initial instant of the layer.
    """

    stage: str
    u: SpectralVector
    b: SpectralVector
    theta: SpectralScalar
    time: float
    U0: SpectralVector
    B0: SpectralVector
    Theta0: SpectralScalar


def _check_stage(stage: str):
    if stage not in STAGES:
        raise InvalidArgument(f"stage must be 'one' or 'two', got {stage!r}")


class _Corrector:
    def __init__(self, n: int, params: PhysParams, cfg: StepConfig):
        if params.eps <= 0 or params.delta <= 0:
            raise InvalidArgument("eps and delta must be positive")
        self.grid = make_grid(n)
        self.params, self.cfg = params, cfg
        self.limit = limit_stepper(self.grid, params, cfg)
        self.full = full_stepper(self.grid, params, cfg)
        fr = self.frame = self.full.frame
        self.slow = fr.mu_basis  # Q^{-1} P e3 per mode
        self.mb = 1j * fr.beta / fr.k2
        # W = w [[0, 1], [-1, 0]] because the rotation block is skew
        self.w = fr.W[:, 0, 1].real
        L = np.zeros((fr.size, 5, 5), complex)
        eps, delta = params.eps, params.delta
        L[:, :2, :2] = (fr.c[:, None, None] * np.eye(2) + fr.W) / eps
        L[:, :2, 2:4] = (-1j * fr.beta / eps)[:, None, None] * np.eye(2)
        L[:, :2, 4] = -fr.drive / eps
        L[:, 2:4, 2:4] = (fr.k2 / delta)[:, None, None] * np.eye(2)
        L[:, 4, 4] = params.kappa * fr.k2
        self.E, self.Phi, E_half = etd_tables(L, cfg.dt)
        self.noise_col = np.ascontiguousarray(E_half[:, :, 4])

    def layer_velocity(self, layer0: np.ndarray, t: float) -> np.ndarray:
        """``exp(-t Q/eps) layer0`` in mode coordinates, shape ``(..., M, 2)``."""
        eps = self.params.eps
        decay = np.exp(-self.frame.c * t / eps)
        cos, sin = np.cos(self.w * t / eps), np.sin(self.w * t / eps)
        a, b = layer0[..., 0], layer0[..., 1]
        return np.stack([decay * (cos * a - sin * b), decay * (sin * a + cos * b)], axis=-1)

    def stage_one_velocity(self, theta_modes, layer0, t):
        return self.slow * theta_modes[..., None] + self.layer_velocity(layer0, t)

    def advect_theta(self, u_modes: np.ndarray, theta_h: np.ndarray) -> np.ndarray:
        st = self.limit
        n = self.grid.n
        u = to_physical(self.frame.from_basis(u_modes), n)
        g = to_physical(st.ik * theta_h[..., None, :, :, :], n)
        prod = u[..., 0, :, :, :] * g[..., 0, :, :, :]
        prod += u[..., 1, :, :, :] * g[..., 1, :, :, :]
        prod += u[..., 2, :, :, :] * g[..., 2, :, :, :]
        return to_spectral_half(prod) * st.mask


@lru_cache(maxsize=8)
def _corrector(n: int, params: PhysParams, cfg: StepConfig) -> _Corrector:
    return _Corrector(n, params, cfg)


def init_corrector(stage: str, s: FullState, params: PhysParams) -> CorrectorState:
    """Corrector state matching ``s`` at time zero.

    Stage one reproduces ``U(0)`` exactly and slaves ``b`` to it; stage two
    reproduces both ``U(0)`` and ``B(0)``.
    """
    _check_stage(stage)
    g = s.Theta.grid
    tab_u = s.U
    if stage == "one":
        from .spectral import multiplier_tables

        b = SpectralVector(multiplier_tables(g, params).Mb_factor * s.U.coeffs, g, True)
    else:
        b = s.B
    return CorrectorState(stage, tab_u, b, s.Theta, 0.0, s.U, s.B, s.Theta)


def step_corrector(
    stage: str,
    state: CorrectorState,
    params: PhysParams,
    cfg: StepConfig,
    dW: SpectralScalar | None = None,
) -> CorrectorState:
    """Advance a corrector system by one step.

    Raises:
        InvalidArgument: on an unknown stage, a stage mismatch, or
            nonpositive ``eps``/``delta``.
        BlowUp: if the new state is not finite.
    """
    _check_stage(stage)
    if stage != state.stage:
        raise InvalidArgument(f"state was initialised for stage {state.stage!r}")
    g = state.theta.grid
    n = g.n
    cor = _corrector(n, params, cfg)
    fr: ModeFrame = cor.frame
    lim = cor.limit
    th = to_half(state.theta.coeffs)
    noise = None if dW is None else fr.scalar_to_modes(to_half(dW.coeffs))
    t = state.time

    if stage == "one":
        theta0 = fr.scalar_to_modes(to_half(state.Theta0.coeffs))
        layer0 = fr.to_basis(to_half(state.U0.coeffs)) - cor.slow * theta0[..., None]
        u_now = cor.stage_one_velocity(fr.scalar_to_modes(th), layer0, t)
        new = lim.E * th
        if cfg.nonlinear:
            new -= lim.Phi * cor.advect_theta(u_now, th)
        if noise is not None:
            new += lim.E_half * fr.scalar_from_modes(noise)
        if cfg.check_finite:
            _screen(new, 0)
        u_new = cor.stage_one_velocity(fr.scalar_to_modes(new), layer0, t + cfg.dt)
        b_new = cor.mb[:, None] * u_new
    else:
        u = fr.to_basis(to_half(state.u.coeffs))
        ell = fr.to_basis(to_half(state.b.coeffs)) - cor.mb[:, None] * u
        X = np.concatenate([u, ell, fr.scalar_to_modes(th)[..., None]], axis=-1)
        out = _matvec(cor.E, X)
        if cfg.nonlinear:
            Y = X.copy()
            Y[..., 2:4] = 0.0
            out += _matvec(cor.Phi, cor.full.drift(Y) * np.array([1, 1, 0, 0, 1]))
        if noise is not None:
            out += cor.noise_col * noise[..., None]
        if cfg.check_finite:
            _screen(out, 0, core_ndim=2)
        u_new = out[..., :2]
        b_new = out[..., 2:4] + cor.mb[:, None] * u_new
        new = fr.scalar_from_modes(out[..., 4])

    return replace(
        state,
        u=SpectralVector(from_half(fr.from_basis(u_new), n), g, True),
        b=SpectralVector(from_half(fr.from_basis(b_new), n), g, True),
        theta=SpectralScalar(from_half(new, n), g),
        time=t + cfg.dt,
    )
