"""Initial-condition samplers for ensembles.

A sampler returns batched coefficient arrays for trajectory indices
``start .. start+count-1``.  Random samplers draw from the same counter-based
stream as the forcing, on a reserved step index, so sample ``i`` depends only
on ``(seed, i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .noise import NoiseConfig, NoiseEntry, sample_increments, sigma_field
from .spectral import Grid, PhysParams, multiplier_tables

__all__ = [
    "SingleModeSampler",
    "GaussianLowModeSampler",
    "ArraySampler",
    "SnapshotSampler",
    "half_lattice",
    "SAMPLER_STEP",
]

SAMPLER_STEP = (1 << 64) - 1


def half_lattice(kmax: float, grid: Grid | None = None):
    """Canonical nonzero wavevectors with ``|k| <= kmax`` (inside the grid band)."""
    r = int(np.floor(kmax))
    out = []
    for k1 in range(0, r + 1):
        for k2 in range(-r, r + 1):
            for k3 in range(-r, r + 1):
                k = (k1, k2, k3)
                if k == (0, 0, 0) or k1 * k1 + k2 * k2 + k3 * k3 > kmax * kmax:
                    continue
                if k1 == 0 and (k2 < 0 or (k2 == 0 and k3 < 0)):
                    continue
                if grid is not None and not grid.mask[grid.index_of(k)]:
                    continue
                out.append(k)
    return out


class _Base:
    grid: Grid
    mismatch_U: np.ndarray | None = None
    mismatch_B: np.ndarray | None = None

    def sample_theta(self, start: int, count: int) -> np.ndarray:
        raise NotImplementedError

    def sample_full(self, start: int, count: int, params: PhysParams):
        """Lifted triple ``(M_u theta + dU, M_b theta + dB, theta)``."""
        th = self.sample_theta(start, count)
        tab = multiplier_tables(self.grid, params)
        U = tab.Mu * th[..., None, :, :, :]
        B = tab.Mb_factor * U
        if self.mismatch_U is not None:
            U = U + self.mismatch_U
        if self.mismatch_B is not None:
            B = B + self.mismatch_B
        return U, B, th

    def with_mismatch(self, dU: np.ndarray | None, dB: np.ndarray | None):
        """Copy of this sampler whose full-system samples carry fixed offsets."""
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.mismatch_U = dU
        clone.mismatch_B = dB
        return clone


class SingleModeSampler(_Base):
    """Deterministic ``amplitude * sigma_k^m`` for every trajectory."""

    def __init__(self, grid: Grid, k=(1, 0, 0), m: int = 0, amplitude: float = 1.0):
        self.grid = grid
        self.field = amplitude * sigma_field(k, m, grid)

    def sample_theta(self, start, count):
        return np.broadcast_to(self.field, (count,) + self.grid.shape).copy()


class GaussianLowModeSampler(_Base):
    """Independent N(0, amplitude^2) real-basis coordinates on ``|k| <= kmax``."""

    def __init__(self, grid: Grid, kmax: float = 2.0, amplitude: float = 1.0, seed: int = 0):
        self.grid = grid
        modes = half_lattice(kmax, grid)
        if not modes:
            raise InvalidArgument("no lattice modes below kmax")
        entries = tuple(NoiseEntry(k, m, amplitude) for k in modes for m in (0, 1))
        self.cfg = NoiseConfig(entries, seed)

    def sample_theta(self, start, count):
        return sample_increments(self.cfg, self.grid, 1.0, SAMPLER_STEP, start, count)


@dataclass
class ArraySampler(_Base):
    """Cycles through a stored stack of temperature coefficients."""

    grid: Grid
    thetas: np.ndarray
    fulls: tuple | None = None

    def sample_theta(self, start, count):
        idx = (np.arange(start, start + count)) % self.thetas.shape[0]
        return self.thetas[idx].copy()

    def sample_full(self, start, count, params):
        if self.fulls is None:
            return super().sample_full(start, count, params)
        idx = (np.arange(start, start + count)) % self.thetas.shape[0]
        U, B, T = self.fulls
        return U[idx].copy(), B[idx].copy(), T[idx].copy()


class SnapshotSampler(ArraySampler):
    """Samples read from binary snapshot files (see :mod:`magnetostrophic.io`)."""

    def __init__(self, paths):
        from .io import read_snapshot

        snaps = [read_snapshot(p) for p in paths]
        if not snaps:
            raise InvalidArgument("no snapshot files given")
        grid = snaps[0].grid
        if any(s.grid != grid for s in snaps):
            raise InvalidArgument("snapshots live on different grids")
        thetas = np.stack([s.theta for s in snaps])
        fulls = None
        if all(s.U is not None for s in snaps):
            fulls = (np.stack([s.U for s in snaps]), np.stack([s.B for s in snaps]), thetas)
        super().__init__(grid, thetas, fulls)
