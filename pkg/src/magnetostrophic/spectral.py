"""Fourier grids, fields, projections, norms and the constitutive multipliers.

Conventions (fixed here and nowhere else):

* Fields on the torus [0, 2*pi)^3 are stored as complex coefficient arrays of
  shape ``(..., n, n, n)`` in FFT index order.  Axis index ``i`` carries the
  wavenumber ``i`` for ``i <= n/2`` and ``i - n`` otherwise, so the lattice is
  ``{-n/2+1, ..., n/2}`` per axis.
* ``f(x) = sum_k fhat(k) exp(i k.x)``.  The forward transform carries the
  ``1/n**3`` factor, hence ``||f||_{L2}^2 = (2*pi)**3 * sum_k |fhat(k)|**2``.
* Vectors carry their component axis right before the three lattice axes,
  i.e. shape ``(..., 3, n, n, n)``.
* Leading axes are batch axes (ensembles) and are carried through untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import InvalidArgument, NumericalDegeneracy

__all__ = [
    "Grid",
    "PhysParams",
    "SpectralScalar",
    "SpectralVector",
    "make_grid",
    "to_physical",
    "to_spectral",
    "leray_project",
    "symbol_D",
    "symbol_Mu",
    "multiplier_tables",
    "apply_constitutive",
    "apply_Q_inverse_drive",
    "apply_R",
    "advect",
    "norm",
    "inner",
    "reflect",
    "PARSEVAL",
]

AXES = (-3, -2, -1)
PARSEVAL = (2.0 * math.pi) ** 3


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------


class Grid:
    """Cubic Fourier lattice with precomputed wavenumber tables.

    Instances are shared through :func:`make_grid` and must be treated as
    read-only.  Two grids compare equal when they have the same resolution.
    """

    def __init__(self, n: int):
        self.n = int(n)
        axis = np.fft.fftfreq(n, 1.0 / n)
        axis[n // 2] = n // 2
        self.axis = axis.astype(np.int64)
        kx = self.axis[:, None, None]
        ky = self.axis[None, :, None]
        kz = self.axis[None, None, :]
        shape = (n, n, n)
        self.kvec = np.stack(np.broadcast_arrays(kx, ky, kz)).astype(float)
        self.k2 = np.sum(self.kvec**2, axis=0)
        self.inv_k2 = np.zeros(shape)
        nz = self.k2 > 0
        self.inv_k2[nz] = 1.0 / self.k2[nz]
        # derivative multipliers drop the unpaired Nyquist plane
        kd = self.kvec.copy()
        kd[np.abs(self.kvec) == n // 2] = 0.0
        self.ik = 1j * kd
        limit = n / 3.0
        self.mask = np.all(np.abs(self.kvec) <= limit, axis=0)
        self.mask[0, 0, 0] = False
        for arr in (self.kvec, self.k2, self.inv_k2, self.ik, self.mask):
            arr.setflags(write=False)

    def __eq__(self, other):
        return isinstance(other, Grid) and other.n == self.n

    def __hash__(self):
        return hash(("Grid", self.n))

    def __repr__(self):
        return f"Grid(n={self.n})"

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def cell_volume(self) -> float:
        return PARSEVAL / self.n**3

    def index_of(self, k) -> tuple[int, int, int]:
        """Array index of the integer wavenumber ``k`` (negatives wrap)."""
        k = tuple(int(c) for c in k)
        if any(abs(c) > self.n // 2 or c == -(self.n // 2) for c in k):
            raise InvalidArgument(f"wavenumber {k} outside the lattice of {self}")
        return tuple(c % self.n for c in k)

    @property
    def nh(self) -> int:
        """Length of the last axis in the half-spectrum layout."""
        return self.n // 2 + 1

    @cached_property
    def half_weight(self) -> np.ndarray:
        """Multiplicity of each half-layout mode in the full lattice."""
        w = np.full((self.n, self.n, self.nh), 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        w.setflags(write=False)
        return w

    @cached_property
    def reflect_index(self) -> np.ndarray:
        return (-np.arange(self.n)) % self.n

    @cached_property
    def solenoidal_basis(self) -> np.ndarray:
        """Real orthonormal pair spanning the plane orthogonal to each k.

        Returns:
            Array of shape ``(n, n, n, 3, 2)``; zero at the origin.
        """
        k = np.moveaxis(self.kvec, 0, -1)
        kn = np.sqrt(self.k2)[..., None]
        khat = np.divide(k, kn, out=np.zeros_like(k), where=kn > 0)
        e3 = np.array([0.0, 0.0, 1.0])
        e1 = np.array([1.0, 0.0, 0.0])
        near_axis = np.abs(khat[..., 2]) > 0.9
        ref = np.where(near_axis[..., None], e1, e3)
        ea = np.cross(ref, khat)
        ea_norm = np.linalg.norm(ea, axis=-1, keepdims=True)
        ea = np.divide(ea, ea_norm, out=np.zeros_like(ea), where=ea_norm > 0)
        eb = np.cross(khat, ea)
        basis = np.stack([ea, eb], axis=-1)
        basis.setflags(write=False)
        return basis


@lru_cache(maxsize=None)
def _grid(n: int) -> Grid:
    return Grid(n)


def make_grid(n: int) -> Grid:
    """Return the (shared) grid with ``n`` modes per axis.

    Args:
        n: Even number of modes per axis, at least 4.

    Raises:
        InvalidArgument: if ``n`` is odd or smaller than 4.
    """
    if isinstance(n, bool) or int(n) != n or n < 4 or n % 2:
        raise InvalidArgument(f"grid size must be an even integer >= 4, got {n!r}")
    return _grid(int(n))


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysParams:
    """Nondimensional parameters of the full and limit systems.

    Attributes:
        eps: Rossby number.
        delta: Magnetic Reynolds number.
        nu: Viscosity.
        kappa: Thermal diffusivity.
        lambda_colat: Co-latitude in radians; fixes the rotation axis.
        b0_hat: Unit direction of the applied magnetic field.
    """

    eps: float = 1.0
    delta: float = 1.0
    nu: float = 0.1
    kappa: float = 1.0
    lambda_colat: float = math.pi / 4
    b0_hat: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        for name in ("eps", "delta", "nu", "kappa"):
            value = float(getattr(self, name))
            if not value > 0 or not math.isfinite(value):
                raise InvalidArgument(f"{name} must be positive and finite, got {value}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "lambda_colat", float(self.lambda_colat))
        b0 = tuple(float(c) for c in self.b0_hat)
        if len(b0) != 3 or abs(math.sqrt(sum(c * c for c in b0)) - 1.0) > 1e-12:
            raise InvalidArgument(f"b0_hat must be a unit 3-vector, got {b0}")
        object.__setattr__(self, "b0_hat", b0)

    @property
    def omega_hat(self) -> tuple[float, float, float]:
        return (0.0, -math.sin(self.lambda_colat), math.cos(self.lambda_colat))

    def replace(self, **changes) -> "PhysParams":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return PhysParams(**values)


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


def _check_grid(*fields_):
    grids = {f.grid for f in fields_}
    if len(grids) != 1:
        raise InvalidArgument(f"fields live on different grids: {sorted(g.n for g in grids)}")


@dataclass(frozen=True, eq=False)
class SpectralScalar:
    """Real scalar field stored by its Fourier coefficients.

    ``coeffs`` has shape ``(..., n, n, n)``; leading axes index an ensemble.
    """

    coeffs: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.coeffs.shape[-3:] != self.grid.shape:
            raise InvalidArgument(
                f"coefficient shape {self.coeffs.shape} does not match {self.grid}"
            )

    @classmethod
    def zeros(cls, grid: Grid, batch: tuple = ()) -> "SpectralScalar":
        return cls(np.zeros(tuple(batch) + grid.shape, complex), grid)

    @classmethod
    def from_physical(cls, values: np.ndarray, grid: Grid) -> "SpectralScalar":
        c = to_spectral(values)
        c[..., 0, 0, 0] = 0.0
        return cls(c, grid)

    def physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.grid.n)

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-3]

    def __add__(self, other):
        _check_grid(self, other)
        return SpectralScalar(self.coeffs + other.coeffs, self.grid)

    def __sub__(self, other):
        _check_grid(self, other)
        return SpectralScalar(self.coeffs - other.coeffs, self.grid)

    def __neg__(self):
        return SpectralScalar(-self.coeffs, self.grid)

    def __mul__(self, c):
        return SpectralScalar(self.coeffs * c, self.grid)

    __rmul__ = __mul__

    def __getitem__(self, idx):
        """Select ensemble members (indexing acts on batch axes only)."""
        return SpectralScalar(self.coeffs[idx], self.grid)


@dataclass(frozen=True, eq=False)
class SpectralVector:
    """Real vector field; ``coeffs`` has shape ``(..., 3, n, n, n)``."""

    coeffs: np.ndarray
    grid: Grid
    solenoidal: bool = False

    def __post_init__(self):
        if self.coeffs.shape[-4:] != (3,) + self.grid.shape:
            raise InvalidArgument(
                f"vector coefficient shape {self.coeffs.shape} does not match {self.grid}"
            )

    @classmethod
    def zeros(cls, grid: Grid, batch: tuple = (), solenoidal: bool = True) -> "SpectralVector":
        return cls(np.zeros(tuple(batch) + (3,) + grid.shape, complex), grid, solenoidal)

    @classmethod
    def from_physical(cls, values: np.ndarray, grid: Grid) -> "SpectralVector":
        c = to_spectral(values)
        c[..., 0, 0, 0] = 0.0
        return cls(c, grid)

    def physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.grid.n)

    def component(self, i: int) -> SpectralScalar:
        return SpectralScalar(self.coeffs[..., i, :, :, :], self.grid)

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-4]

    def __add__(self, other):
        _check_grid(self, other)
        return SpectralVector(
            self.coeffs + other.coeffs, self.grid, self.solenoidal and other.solenoidal
        )

    def __sub__(self, other):
        _check_grid(self, other)
        return SpectralVector(
            self.coeffs - other.coeffs, self.grid, self.solenoidal and other.solenoidal
        )

    def __neg__(self):
        return SpectralVector(-self.coeffs, self.grid, self.solenoidal)

    def __mul__(self, c):
        return SpectralVector(self.coeffs * c, self.grid, self.solenoidal)

    __rmul__ = __mul__

    def __getitem__(self, idx):
        return SpectralVector(self.coeffs[idx], self.grid, self.solenoidal)


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------


def to_physical(coeffs: np.ndarray, n: int | None = None) -> np.ndarray:
    """Grid values of a real field from Hermitian coefficients.

    Accepts either the full lattice or the half-spectrum layout.
    """
    n = coeffs.shape[-2] if n is None else n
    half = coeffs[..., : n // 2 + 1]
    return sfft.irfftn(half, s=(n, n, n), axes=AXES, norm="forward")


def to_spectral_half(values: np.ndarray) -> np.ndarray:
    """Half-spectrum coefficients of real grid values."""
    return sfft.rfftn(values, axes=AXES, norm="forward")


def to_spectral(values: np.ndarray) -> np.ndarray:
    """Coefficients (full lattice) of real grid values."""
    return sfft.fftn(values, axes=AXES, norm="forward")


def to_half(coeffs: np.ndarray) -> np.ndarray:
    """Half-spectrum layout (last axis ``k3 = 0..n/2``) of full coefficients."""
    n = coeffs.shape[-1]
    return np.ascontiguousarray(coeffs[..., : n // 2 + 1])


def from_half(half: np.ndarray, n: int) -> np.ndarray:
    """Full coefficients from the half-spectrum layout via Hermitian symmetry."""
    h = n // 2 + 1
    out = np.empty(half.shape[:-1] + (n,), complex)
    out[..., :h] = half
    ix = (-np.arange(n)) % n
    refl = np.conj(half[..., ix, :, :][..., :, ix, :])
    out[..., h:] = refl[..., n - h : 0 : -1]
    return out


def reflect(coeffs: np.ndarray) -> np.ndarray:
    """Coefficients evaluated at ``-k``: ``out[..., k] = coeffs[..., -k]``."""
    flipped = np.flip(coeffs, axis=AXES)
    return np.roll(flipped, 1, axis=AXES)


# --------------------------------------------------------------------------
# projections and symbols
# --------------------------------------------------------------------------


def leray_project(v: SpectralVector) -> SpectralVector:
    """Remove the gradient part of ``v`` mode by mode."""
    g = v.grid
    kdotv = np.sum(g.kvec * v.coeffs, axis=-4)
    out = v.coeffs - g.kvec * (kdotv * g.inv_k2)[..., None, :, :, :]
    return SpectralVector(out, g, solenoidal=True)


def _symbol_arrays(kvec: np.ndarray, params: PhysParams):
    """Vectorised D(k) and M_u(k) for ``kvec`` of shape ``(..., 3)``.

    Zero wavevectors give D = 0 and M_u = 0; callers decide how to treat them.
    """
    k = np.asarray(kvec, dtype=float)
    omega = np.array(params.omega_hat)
    b0 = np.array(params.b0_hat)
    k2 = np.sum(k * k, axis=-1)
    om_k = k @ omega
    beta = k @ b0
    damp = params.nu * k2**2 + beta**2
    D = k2 * om_k**2 + damp**2
    e3 = np.array([0.0, 0.0, 1.0])
    e3xk = np.cross(e3, k)
    kxe3xk = np.cross(k, e3xk)
    num = damp[..., None] * kxe3xk + (om_k * k2)[..., None] * e3xk
    safe = np.where(D > 0, D, 1.0)
    M = np.where((D > 0)[..., None], num / safe[..., None], 0.0)
    return D, M, beta, k2


def _nonzero_k(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape != (3,):
        raise InvalidArgument(f"expected a 3-vector, got shape {k.shape}")
    if not np.any(k):
        raise InvalidArgument("symbol undefined at k = 0")
    return k


def symbol_D(k, params: PhysParams) -> float:
    """Denominator |k|^2 (Omega.k)^2 + ((B0.k)^2 + nu |k|^4)^2 at one k != 0."""
    D, _, _, _ = _symbol_arrays(_nonzero_k(k), params)
    return float(D)


def symbol_Mu(k, params: PhysParams) -> np.ndarray:
    """Velocity multiplier M_u(k) (real 3-vector) at one k != 0."""
    _, M, _, _ = _symbol_arrays(_nonzero_k(k), params)
    return M


@dataclass(frozen=True)
class MultiplierTables:
    """Grid tables of the constitutive symbols."""

    Mu: np.ndarray  # (3, n, n, n) real
    Mb_factor: np.ndarray  # (n, n, n) complex: i (B0.k)/|k|^2
    beta: np.ndarray  # (n, n, n) real: B0.k
    D: np.ndarray = field(repr=False, default=None)


@lru_cache(maxsize=32)
def _tables(n: int, params: PhysParams) -> MultiplierTables:
    g = make_grid(n)
    k = np.moveaxis(g.kvec, 0, -1)
    D, M, beta, _ = _symbol_arrays(k, params)
    Mu = np.ascontiguousarray(np.moveaxis(M, -1, 0))
    Mb = 1j * beta * g.inv_k2
    for arr in (Mu, Mb, beta, D):
        arr.setflags(write=False)
    return MultiplierTables(Mu=Mu, Mb_factor=Mb, beta=beta, D=D)


def multiplier_tables(grid: Grid, params: PhysParams) -> MultiplierTables:
    return _tables(grid.n, params)


def apply_constitutive(theta: SpectralScalar, params: PhysParams):
    """Velocity and magnetic fields slaved to ``theta``.

    Returns:
        ``(u, b)`` with ``u(k) = M_u(k) theta(k)`` and
        ``b(k) = i (B0.k)/|k|^2 M_u(k) theta(k)``.
    """
    t = multiplier_tables(theta.grid, params)
    th = theta.coeffs[..., None, :, :, :]
    u = t.Mu * th
    b = t.Mb_factor * u
    return SpectralVector(u, theta.grid, True), SpectralVector(b, theta.grid, True)


def apply_R(theta: SpectralScalar, params: PhysParams) -> SpectralVector:
    """Magnetic part of the constitutive law."""
    return apply_constitutive(theta, params)[1]


@lru_cache(maxsize=32)
def _q_blocks(n: int, params: PhysParams):
    """Per-mode 2x2 blocks of Q in the solenoidal basis and the projected e3."""
    g = make_grid(n)
    V = g.solenoidal_basis
    omega = np.array(params.omega_hat)
    b0 = np.array(params.b0_hat)
    k = np.moveaxis(g.kvec, 0, -1)
    beta = k @ b0
    # rotation term P(Omega x .) restricted to the plane
    rot = np.cross(omega, np.moveaxis(V, -1, -2))  # (..., 2, 3): Omega x e_j
    W = np.einsum("...ai,...ja->...ij", V, rot)
    c = params.nu * g.k2 + beta**2 * g.inv_k2
    Q = c[..., None, None] * np.eye(2) + W
    drive = V[..., 2, :]  # components of e3 in the plane basis
    return Q, drive


def apply_Q_inverse_drive(theta: SpectralScalar, params: PhysParams) -> SpectralVector:
    """Velocity ``Q^{-1} P e3 theta`` by a per-mode solve in the plane normal to k.

    Raises:
        NumericalDegeneracy: if any per-mode block is singular.
    """
    g = theta.grid
    Q, drive = _q_blocks(g.n, params)
    nz = g.k2 > 0
    Qn = Q[nz]
    det = Qn[:, 0, 0] * Qn[:, 1, 1] - Qn[:, 0, 1] * Qn[:, 1, 0]
    scale = np.max(np.abs(Qn), axis=(1, 2)) ** 2
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise NumericalDegeneracy("singular per-mode Q block")
    batch = theta.batch_shape
    rhs = drive[nz] * theta.coeffs[..., nz][..., None]  # (..., M, 2)
    sol = np.linalg.solve(np.broadcast_to(Qn, batch + Qn.shape), rhs[..., None])[..., 0]
    V = g.solenoidal_basis[nz]  # (M, 3, 2)
    vel = np.einsum("mia,...ma->...im", V, sol)
    out = np.zeros(batch + (3,) + g.shape, complex)
    out[..., nz] = vel
    return SpectralVector(out, g, True)


# --------------------------------------------------------------------------
# nonlinear terms
# --------------------------------------------------------------------------


def gradient_physical(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Grid values of the gradient; a new axis of length 3 is inserted at -4."""
    return to_physical(grid.ik * coeffs[..., None, :, :, :], grid.n)


def advect_arrays(v_phys: np.ndarray, s: np.ndarray, grid: Grid, vector: bool) -> np.ndarray:
    """Dealiased coefficients of ``v.grad s`` with ``v`` given on the grid.

    Args:
        v_phys: velocity grid values, shape ``(..., 3, n, n, n)``.
        s: coefficients of the advected field, scalar or vector layout.
        grid: lattice of both fields.
        vector: whether ``s`` uses the vector layout.
    """
    grad = gradient_physical(s, grid)
    if vector:
        # grad has shape (..., 3 comps, 3 derivs, n, n, n)
        prod = np.einsum("...jxyz,...ijxyz->...ixyz", v_phys, grad)
    else:
        prod = np.einsum("...jxyz,...jxyz->...xyz", v_phys, grad)
    return to_spectral(prod) * grid.mask


def advect(v: SpectralVector, s):
    """Pseudo-spectral ``v . grad s`` with the 2/3 rule applied to the result.

    Raises:
        InvalidArgument: if the fields live on different grids.
    """
    _check_grid(v, s)
    vp = v.physical()
    if isinstance(s, SpectralVector):
        return SpectralVector(advect_arrays(vp, s.coeffs, v.grid, True), v.grid)
    return SpectralScalar(advect_arrays(vp, s.coeffs, v.grid, False), v.grid)


# --------------------------------------------------------------------------
# norms
# --------------------------------------------------------------------------


def _is_vector(f) -> bool:
    return isinstance(f, SpectralVector)


def inner(f, g) -> np.ndarray:
    """L2 inner product of two real fields (batched)."""
    _check_grid(f, g)
    axes = (-4, -3, -2, -1) if _is_vector(f) else AXES
    return PARSEVAL * np.sum((np.conj(f.coeffs) * g.coeffs).real, axis=axes)


def norm(f, kind: str = "L2", s: float = 1.0, p: float = 2.0):
    """Norm of a scalar or vector field.

    Args:
        f: SpectralScalar or SpectralVector (possibly batched).
        kind: ``"L2"`` (Parseval), ``"Hs"`` (homogeneous, weight |k|^(2s)) or
            ``"Lp"`` (quadrature of the pointwise Euclidean magnitude).
        s: Sobolev index for ``"Hs"``.
        p: Exponent for ``"Lp"``; must be at least 1.

    Returns:
        A float, or an array over the batch axes.
    """
    vec = _is_vector(f)
    sum_axes = (-4, -3, -2, -1) if vec else AXES
    if kind == "L2":
        val = np.sqrt(PARSEVAL * np.sum(np.abs(f.coeffs) ** 2, axis=sum_axes))
    elif kind == "Hs":
        w = f.grid.k2**s
        w = np.where(f.grid.k2 > 0, w, 0.0)
        val = np.sqrt(PARSEVAL * np.sum(w * np.abs(f.coeffs) ** 2, axis=sum_axes))
    elif kind == "Lp":
        if p < 1:
            raise InvalidArgument(f"Lp norm needs p >= 1, got {p}")
        phys = f.physical()
        mag = np.sqrt(np.sum(phys**2, axis=-4)) if vec else np.abs(phys)
        val = (f.grid.cell_volume * np.sum(mag**p, axis=AXES)) ** (1.0 / p)
    else:
        raise InvalidArgument(f"unknown norm kind {kind!r}")
    return float(val) if np.ndim(val) == 0 else val
