"""Degenerate additive forcing with counter-based, stateless sampling.

The forcing is ``sum_e alpha_e sigma_e dW_e`` over a finite set of entries
``e = (k, m, alpha)`` where ``sigma_{k,0} = cos(k.x)`` and
``sigma_{k,1} = sin(k.x)``.

Every standard normal is a pure function of ``(seed, step, k, m, traj)``: a
Philox generator is keyed on ``(seed, step)`` and its 256-bit counter is set
to ``(traj, mode code, 0, 0)``.  One counter block yields four 64-bit words,
of which the first two feed a Box-Muller transform.  Consecutive trajectories
therefore occupy consecutive counter blocks, so a whole batch of trajectories
is drawn with a single generator call and the result does not depend on how
the ensemble is split into batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument
from .spectral import PARSEVAL, Grid, SpectralScalar, make_grid

__all__ = [
    "NoiseEntry",
    "NoiseConfig",
    "default_noise",
    "sigma_norm",
    "standard_normals",
    "sample_increment",
    "sample_increments",
    "forcing_projections",
    "sigma_field",
    "sample_half_sparse",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class NoiseEntry:
    """One forced direction ``alpha * sigma_k^m``."""

    k: tuple
    m: int
    alpha: float = 1.0

    def __post_init__(self):
        k = tuple(int(c) for c in self.k)
        if len(k) != 3:
            raise InvalidArgument(f"noise wavevector must have 3 components, got {self.k}")
        if k == (0, 0, 0) or k[0] < 0:
            raise InvalidArgument(f"noise wavevector must be nonzero with k1 >= 0, got {k}")
        if self.m not in (0, 1):
            raise InvalidArgument(f"parity must be 0 or 1, got {self.m}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def code(self) -> int:
        """Injective 64-bit label of (k, m) used as a counter word."""
        k1, k2, k3 = (c & 0xFFFF for c in self.k)
        return (k1 << 48) | (k2 << 32) | (k3 << 16) | self.m


@dataclass(frozen=True)
class NoiseConfig:
    entries: tuple = ()
    seed: int = 0

    def __post_init__(self):
        entries = tuple(e if isinstance(e, NoiseEntry) else NoiseEntry(*e) for e in self.entries)
        keys = [(e.k, e.m) for e in entries]
        if len(set(keys)) != len(keys):
            raise InvalidArgument("duplicate (k, m) entries in noise configuration")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    def with_seed(self, seed: int) -> "NoiseConfig":
        return NoiseConfig(self.entries, seed)

    def scaled(self, factor: float) -> "NoiseConfig":
        return NoiseConfig(
            tuple(NoiseEntry(e.k, e.m, e.alpha * factor) for e in self.entries), self.seed
        )

    @property
    def max_wavenumber(self) -> int:
        return max((max(abs(c) for c in e.k) for e in self.entries), default=0)


def default_noise(alpha: float = 1.0, seed: int = 0) -> NoiseConfig:
    """Both parities of the three unit wavevectors, equal amplitudes."""
    entries = []
    for k in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
        for m in (0, 1):
            entries.append(NoiseEntry(k, m, alpha))
    return NoiseConfig(tuple(entries), seed)


def sigma_field(k, m: int, grid: Grid) -> np.ndarray:
    """Coefficients of cos(k.x) (m=0) or sin(k.x) (m=1)."""
    out = np.zeros(grid.shape, complex)
    ip = grid.index_of(k)
    im = grid.index_of(tuple(-c for c in k))
    if m == 0:
        out[ip] += 0.5
        out[im] += 0.5
    else:
        out[ip] += -0.5j
        out[im] += 0.5j
    return out


def sigma_norm(cfg: NoiseConfig, p: float = 2.0) -> float:
    """L^p norm of the pointwise Hilbert-Schmidt density of the forcing.

    Raises:
        InvalidArgument: if ``p < 2``.
    """
    if p < 2:
        raise InvalidArgument(f"sigma_norm needs p >= 2, got {p}")
    if not cfg.entries:
        return 0.0
    # quadrature is exact for p = 2 once the grid resolves twice the top mode
    n = max(8, 4 * cfg.max_wavenumber + 4)
    n += n % 2
    x = np.arange(n) * (2 * math.pi / n)
    X = np.stack(np.meshgrid(x, x, x, indexing="ij"))
    density = np.zeros((n, n, n))
    for e in cfg.entries:
        phase = np.tensordot(np.array(e.k, float), X, axes=1)
        basis = np.cos(phase) if e.m == 0 else np.sin(phase)
        density += (e.alpha * basis) ** 2
    integral = PARSEVAL / n**3 * np.sum(density ** (p / 2))
    return float(integral ** (1.0 / p))


def _box_muller(words: np.ndarray) -> np.ndarray:
    u1 = ((words[..., 0] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (words[..., 1] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def standard_normals(cfg: NoiseConfig, step: int, traj_start: int, count: int) -> np.ndarray:
    """Normals for trajectories ``traj_start .. traj_start+count-1``.

    Returns:
        Array of shape ``(count, len(cfg.entries))``.
    """
    out = np.empty((count, len(cfg.entries)))
    key = np.array([cfg.seed, int(step) & _MASK64], dtype=np.uint64)
    for col, e in enumerate(cfg.entries):
        counter = np.array([int(traj_start) & _MASK64, e.code, 0, 0], dtype=np.uint64)
        bitgen = np.random.Philox(key=key, counter=counter)
        words = bitgen.random_raw(4 * count).reshape(count, 4)
        out[:, col] = _box_muller(words)
    return out


@lru_cache(maxsize=64)
def _placement(cfg: NoiseConfig, n: int):
    """Flat lattice indices touched by the forcing and per-entry weights."""
    grid = make_grid(n)
    dense = np.stack([sigma_field(e.k, e.m, grid) * e.alpha for e in cfg.entries]) if cfg.entries else np.zeros((0,) + grid.shape, complex)
    flat = dense.reshape(len(cfg.entries), -1)
    cols = np.flatnonzero(np.any(flat != 0, axis=0))
    return cols, flat[:, cols]


def sample_increments(
    cfg: NoiseConfig, grid: Grid, dt: float, step: int, traj_start: int, count: int
) -> np.ndarray:
    """Batched increment coefficients, shape ``(count, n, n, n)``."""
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    out = np.zeros((count, grid.n**3), complex)
    if cfg.entries:
        cols, weights = _placement(cfg, grid.n)
        xi = standard_normals(cfg, step, traj_start, count)
        out[:, cols] = math.sqrt(dt) * (xi @ weights)
    return out.reshape((count,) + grid.shape)


@lru_cache(maxsize=64)
def _half_placement(cfg: NoiseConfig, n: int):
    grid = make_grid(n)
    h = grid.nh
    if not cfg.entries:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 0), complex)
    dense = np.stack([sigma_field(e.k, e.m, grid)[..., :h] * e.alpha for e in cfg.entries])
    flat = dense.reshape(len(cfg.entries), -1)
    cols = np.flatnonzero(np.any(flat != 0, axis=0))
    return cols, flat[:, cols]


def sample_half_sparse(
    cfg: NoiseConfig, grid: Grid, dt: float, step: int, traj_start: int, count: int
):
    """Increments in the half-spectrum layout as ``(flat_indices, values)``.

    ``values`` has shape ``(count, len(flat_indices))``; all other half-layout
    coefficients of the increment are zero.
    """
    cols, weights = _half_placement(cfg, grid.n)
    if not cfg.entries:
        return cols, np.zeros((count, 0), complex)
    xi = standard_normals(cfg, step, traj_start, count)
    return cols, math.sqrt(dt) * (xi @ weights)


def sample_increment(
    cfg: NoiseConfig, dt: float, step: int, traj: int, grid: Grid | None = None
) -> SpectralScalar:
    """Increment ``sum alpha sigma xi sqrt(dt)`` for one trajectory and step."""
    grid = make_grid(8) if grid is None else grid
    return SpectralScalar(sample_increments(cfg, grid, dt, step, traj, 1)[0], grid)


def forcing_projections(cfg: NoiseConfig, theta: np.ndarray, grid: Grid) -> np.ndarray:
    """``alpha_e <sigma_e, theta>`` for every entry, batched over ``theta``.

    Returns:
        Array of shape ``theta.shape[:-3] + (len(entries),)``.
    """
    vals = []
    for e in cfg.entries:
        c = theta[(...,) + grid.index_of(e.k)]
        proj = c.real if e.m == 0 else -c.imag
        vals.append(e.alpha * PARSEVAL * proj)
    return np.stack(vals, axis=-1) if vals else np.zeros(theta.shape[:-3] + (0,))
