"""Weighted path metrics on temperature fields and empirical Wasserstein distances.

The metric on temperatures is the infimum over paths of
``int_0^1 exp(eta ||p||^2) ||p'|| dt``.  It is never computed exactly;
:func:`rho_bounds` returns the elementary two-sided bracket together with the
value along the straight segment.  ``rho_tilde`` adds homogeneous ``H^1``
distances of velocity and magnetic fields, and ``rho_star`` is ``rho_tilde``
between lifted temperatures.

Samples are mapped to real feature vectors whose Euclidean geometry is the
relevant Hilbert norm, so pairwise cost matrices are plain distance matrices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import InvalidArgument
from .noise import NoiseConfig, sigma_norm
from .spectral import (
    PARSEVAL,
    Grid,
    PhysParams,
    SpectralScalar,
    SpectralVector,
    _symbol_arrays,
    multiplier_tables,
    to_half,
)

__all__ = [
    "MetricParams",
    "EmpiricalMeasure",
    "WassersteinResult",
    "BOUND_KINDS",
    "METRICS",
    "rho_bounds",
    "lift",
    "project",
    "rho_tilde",
    "rho_star",
    "symbol_constants",
    "rho_star_constant",
    "default_eta",
    "wasserstein",
    "assignment_cost",
    "brute_force_assignment",
    "coordinate_observable",
    "observable_seminorm",
    "MAX_SAMPLES",
]

BOUND_KINDS = ("lower", "path_upper", "upper")
METRICS = ("rho", "rho-tilde", "rho-star")
MAX_SAMPLES = 512
ETA_CAP = 0.05


@dataclass(frozen=True)
class MetricParams:
    """Weight exponent ``eta`` and the quadrature size for path integrals."""

    eta: float
    n_quad: int = 257

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidArgument(f"eta must be positive, got {self.eta}")
        if self.n_quad < 2:
            raise InvalidArgument("n_quad must be at least 2")


def default_eta(params: PhysParams, noise: NoiseConfig, C: float = 1.0) -> float:
    """``min(kappa^2 nu / (4 C ||sigma||^2), 0.05)``."""
    s2 = sigma_norm(noise) ** 2
    if s2 == 0:
        return ETA_CAP
    return min(params.kappa**2 * params.nu / (4 * C * s2), ETA_CAP)


# --------------------------------------------------------------------------
# feature maps
# --------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _weights(n: int, power: float) -> np.ndarray:
    from .spectral import make_grid

    g = make_grid(n)
    w = PARSEVAL * g.half_weight
    if power:
        w = w * g.k2[..., : g.nh] ** power
    return np.sqrt(w).reshape(-1)


def _features(coeffs: np.ndarray, grid: Grid, power: float = 0.0, vector: bool = False) -> np.ndarray:
    """Real vectors whose Euclidean norm is the (homogeneous) ``H^power`` norm."""
    h = to_half(coeffs)
    lead = h.shape[:-4] if vector else h.shape[:-3]
    flat = h.reshape(lead + (-1,)) if not vector else h.reshape(lead + (3, -1))
    w = _weights(grid.n, power)
    flat = flat * w
    if vector:
        flat = flat.reshape(lead + (-1,))
    return np.concatenate([flat.real, flat.imag], axis=-1)


def _segment_integral(na2, nb2, ab, eta: float, n_quad: int) -> np.ndarray:
    """Trapezoid rule for ``int_0^1 exp(eta ||a + t (b - a)||^2) dt``.

    ``na2``, ``nb2`` are squared norms and ``ab`` the real inner product; all
    broadcast together.
    """
    t = np.linspace(0.0, 1.0, n_quad)
    d2 = np.maximum(na2 + nb2 - 2 * ab, 0.0)
    lin = ab - na2
    na2, d2, lin = (np.asarray(x)[..., None] for x in (na2, d2, lin))
    q = na2 + 2 * t * lin + t * t * d2
    # the segment maximum is at an endpoint, so factor it out for stability
    top = np.maximum(na2, na2 + 2 * lin + d2)
    vals = np.exp(eta * (q - top))
    return np.exp(eta * top[..., 0]) * np.trapezoid(vals, t, axis=-1)


def _bounds_from_features(fa, fb, eta: float, n_quad: int, pairwise: bool):
    if pairwise:
        dist = cdist(fa, fb)
        na2 = np.sum(fa * fa, axis=-1)[:, None]
        nb2 = np.sum(fb * fb, axis=-1)[None, :]
        ab = fa @ fb.T
    else:
        dist = np.sqrt(np.sum((fa - fb) ** 2, axis=-1))
        na2 = np.sum(fa * fa, axis=-1)
        nb2 = np.sum(fb * fb, axis=-1)
        ab = np.sum(fa * fb, axis=-1)
    upper = np.exp(2 * eta * (na2 + nb2)) * dist
    path = _segment_integral(na2, nb2, ab, eta, n_quad) * dist
    # rounding guards for the documented ordering
    path = np.clip(path, dist, upper)
    return dist, path, upper


def rho_bounds(a: SpectralScalar, b: SpectralScalar, mp: MetricParams):
    """``(lower, path_upper, upper)`` bracket of the path metric.

    ``lower = ||a - b||``, ``upper = exp(2 eta (||a||^2 + ||b||^2)) ||a - b||`` and
    ``path_upper`` is the integral along the straight segment, so
    ``lower <= path_upper <= upper``.

    Raises:
        InvalidArgument: if the grids differ.
    """
    if a.grid != b.grid:
        raise InvalidArgument("fields live on different grids")
    fa, fb = _features(a.coeffs, a.grid), _features(b.coeffs, b.grid)
    lo, path, up = _bounds_from_features(fa, fb, mp.eta, mp.n_quad, pairwise=False)
    if np.ndim(lo) == 0:
        return float(lo), float(path), float(up)
    return lo, path, up


# --------------------------------------------------------------------------
# lift and product metrics
# --------------------------------------------------------------------------


def lift(theta: SpectralScalar, params: PhysParams):
    """``(M_u theta, M_b theta, theta)``."""
    tab = multiplier_tables(theta.grid, params)
    U = tab.Mu * theta.coeffs[..., None, :, :, :]
    B = tab.Mb_factor * U
    g = theta.grid
    return SpectralVector(U, g, True), SpectralVector(B, g, True), theta


def project(triple) -> SpectralScalar:
    """Temperature component of a ``(U, B, Theta)`` triple."""
    return triple[2]


def _triple(x):
    if hasattr(x, "Theta"):
        return x.U, x.B, x.Theta
    return tuple(x)


def _select(lo, path, up, kind: str):
    if kind not in BOUND_KINDS:
        raise InvalidArgument(f"bound kind must be one of {BOUND_KINDS}, got {kind!r}")
    return {"lower": lo, "path_upper": path, "upper": up}[kind]


def rho_tilde(x, y, mp: MetricParams, bound_kind: str = "upper"):
    """``||U - U'||_{H1} + ||B - B'||_{H1} + rho_bound(Theta, Theta')``.

    ``x`` and ``y`` are FullState objects or ``(U, B, Theta)`` triples.
    """
    U1, B1, T1 = _triple(x)
    U2, B2, T2 = _triple(y)
    g = T1.grid
    if T2.grid != g:
        raise InvalidArgument("fields live on different grids")
    du = np.sqrt(np.sum(_features(U1.coeffs - U2.coeffs, g, 1.0, True) ** 2, axis=-1))
    db = np.sqrt(np.sum(_features(B1.coeffs - B2.coeffs, g, 1.0, True) ** 2, axis=-1))
    t = _select(*rho_bounds(T1, T2, mp), bound_kind)
    out = du + db + t
    return float(out) if np.ndim(out) == 0 else out


def rho_star(theta: SpectralScalar, psi: SpectralScalar, params: PhysParams, mp: MetricParams, bound_kind: str = "upper"):
    """``rho_tilde`` between lifted temperatures."""
    return rho_tilde(lift(theta, params), lift(psi, params), mp, bound_kind)


def symbol_constants(params: PhysParams, radius: int = 32) -> dict:
    """Lattice suprema of ``|M_u(k)| |k|`` and ``|M_b(k)| |k|`` for ``0 < |k| <= radius``.

    These bound ``||M_u theta||_{H1}`` and ``||M_b theta||_{H1}`` by multiples
    of ``||theta||``.
    """
    r = np.arange(-radius, radius + 1)
    k = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3).astype(float)
    k2 = np.sum(k * k, axis=-1)
    keep = (k2 > 0) & (k2 <= radius * radius)
    k, k2 = k[keep], k2[keep]
    _, M, beta, _ = _symbol_arrays(k, params)
    mu = np.linalg.norm(M, axis=-1)
    kn = np.sqrt(k2)
    return {
        "Mu_H1": float(np.max(mu * kn)),
        "Mb_H1": float(np.max(np.abs(beta) / k2 * mu * kn)),
        "Mu_smoothing": float(np.max(mu * k2)),
        "Mb_smoothing": float(np.max(np.abs(beta) / k2 * mu * k2 * kn)),
    }


def rho_star_constant(params: PhysParams, radius: int = 32) -> float:
    """``C`` with ``rho <= rho_star <= C rho``: one plus the H1 symbol suprema."""
    c = symbol_constants(params, radius)
    return 1.0 + c["Mu_H1"] + c["Mb_H1"]


# --------------------------------------------------------------------------
# empirical measures
# --------------------------------------------------------------------------


@dataclass(eq=False)
class EmpiricalMeasure:
    """Equal-weight samples of temperatures, optionally with (U, B).

    ``theta`` is a batched SpectralScalar; ``U`` and ``B`` are batched
    SpectralVectors or None.
    """

    theta: SpectralScalar
    U: SpectralVector | None = None
    B: SpectralVector | None = None

    def __post_init__(self):
        if self.theta.coeffs.ndim != 4 or self.theta.coeffs.shape[0] < 1:
            raise InvalidArgument("an empirical measure needs a nonempty batch of samples")
        if (self.U is None) != (self.B is None):
            raise InvalidArgument("U and B must be given together")
        if self.U is not None and (self.U.grid != self.theta.grid or self.B.grid != self.theta.grid):
            raise InvalidArgument("all samples must share one grid")

    @property
    def size(self) -> int:
        return self.theta.coeffs.shape[0]

    @property
    def grid(self) -> Grid:
        return self.theta.grid

    @property
    def has_fields(self) -> bool:
        return self.U is not None

    @classmethod
    def from_state(cls, state) -> "EmpiricalMeasure":
        """From a batched LimitState or FullState."""
        if hasattr(state, "Theta"):
            return cls(state.Theta, state.U, state.B)
        return cls(state.theta)

    def lifted(self, params: PhysParams) -> "EmpiricalMeasure":
        U, B, T = lift(self.theta, params)
        return EmpiricalMeasure(T, U, B)

    def subset(self, idx) -> "EmpiricalMeasure":
        idx = np.asarray(idx)
        g = self.grid
        th = SpectralScalar(self.theta.coeffs[idx], g)
        if not self.has_fields:
            return EmpiricalMeasure(th)
        return EmpiricalMeasure(th, SpectralVector(self.U.coeffs[idx], g, True), SpectralVector(self.B.coeffs[idx], g, True))

    def split(self) -> tuple["EmpiricalMeasure", "EmpiricalMeasure"]:
        half = self.size // 2
        return self.subset(np.arange(half)), self.subset(np.arange(half, 2 * half))


@dataclass
class WassersteinResult:
    """Bracket for an empirical Wasserstein distance.

    ``perm_lower[i]`` / ``perm_upper[i]`` is the sample of the second measure
    coupled with sample ``i`` of the first.  ``path`` uses the straight-line
    temperature bound.
    """

    lower: float
    upper: float
    path: float
    perm_lower: np.ndarray
    perm_upper: np.ndarray
    metric: str

    def as_tuple(self):
        return self.lower, self.upper


def assignment_cost(cost: np.ndarray) -> tuple[float, np.ndarray]:
    """Optimal mean cost of a perfect matching and the matching."""
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=int)
    perm[rows] = cols
    return float(cost[rows, cols].mean()), perm


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum mean matching cost over all permutations (small ``n`` only)."""
    n = cost.shape[0]
    if n > 8:
        raise InvalidArgument("brute force is limited to n <= 8")
    idx = np.arange(n)
    return float(min(cost[idx, list(p)].mean() for p in itertools.permutations(range(n))))


def _cost_matrices(mu: EmpiricalMeasure, nu: EmpiricalMeasure, metric: str, mp: MetricParams, params):
    g = mu.grid
    fa = _features(mu.theta.coeffs, g)
    fb = _features(nu.theta.coeffs, g)
    lo, path, up = _bounds_from_features(fa, fb, mp.eta, mp.n_quad, pairwise=True)
    if metric == "rho":
        return lo, path, up
    if metric == "rho-star":
        if params is None:
            raise InvalidArgument("rho-star needs physical parameters for the lift")
        mu, nu = mu.lifted(params), nu.lifted(params)
    elif not (mu.has_fields and nu.has_fields):
        raise InvalidArgument("rho-tilde needs velocity and magnetic samples (lift limit samples first)")
    extra = cdist(_features(mu.U.coeffs, g, 1.0, True), _features(nu.U.coeffs, g, 1.0, True))
    extra += cdist(_features(mu.B.coeffs, g, 1.0, True), _features(nu.B.coeffs, g, 1.0, True))
    return lo + extra, path + extra, up + extra


def wasserstein(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    metric: str,
    mp: MetricParams,
    params: PhysParams | None = None,
) -> WassersteinResult:
    """Optimal-assignment bracket of the Wasserstein distance.

    The coupling problem is solved exactly twice, with the lower and with the
    upper ground-metric bound, giving ``lower <= W <= upper``.

    Raises:
        InvalidArgument: on unequal sizes, more than ``MAX_SAMPLES`` samples,
            mismatched grids or an unknown metric.
    """
    if metric not in METRICS:
        raise InvalidArgument(f"metric must be one of {METRICS}, got {metric!r}")
    if mu.size != nu.size:
        raise InvalidArgument(f"sample counts differ ({mu.size} vs {nu.size}); resample first")
    if mu.size > MAX_SAMPLES:
        raise InvalidArgument(f"at most {MAX_SAMPLES} samples are supported, got {mu.size}")
    if mu.grid != nu.grid:
        raise InvalidArgument("measures live on different grids")
    lo, path, up = _cost_matrices(mu, nu, metric, mp, params)
    w_lo, p_lo = assignment_cost(lo)
    w_up, p_up = assignment_cost(up)
    w_path, _ = assignment_cost(path)
    return WassersteinResult(w_lo, w_up, w_path, p_lo, p_up, metric)


# --------------------------------------------------------------------------
# low-mode observables
# --------------------------------------------------------------------------


def coordinate_observable(kind: str, k, m: int, component: int = 0):
    """``phi = <theta, sigma_k^m>`` (kind ``"theta"``) or ``<u, e_i sigma_k^m>`` (kind ``"u"``).

    Returns:
        A function of a batched EmpiricalMeasure giving one value per sample.
    """
    k = tuple(int(c) for c in k)
    if kind not in ("theta", "u"):
        raise InvalidArgument("observable kind must be 'theta' or 'u'")

    def phi(measure: EmpiricalMeasure) -> np.ndarray:
        g = measure.grid
        idx = g.index_of(k)
        if kind == "theta":
            c = measure.theta.coeffs[(slice(None),) + idx]
        else:
            if not measure.has_fields:
                raise InvalidArgument("velocity observable needs velocity samples")
            c = measure.U.coeffs[(slice(None), component) + idx]
        return PARSEVAL * (c.real if m == 0 else -c.imag)

    return phi


def observable_seminorm(kind: str, k) -> float:
    """Analytic value of the weighted gradient seminorm of a coordinate observable.

    For ``<theta, sigma_k^m>`` it is ``||sigma_k^m||``; for ``<u, e_i sigma_k^m>``
    it is the dual ``H^1`` norm ``||sigma_k^m|| / |k|``.
    """
    k = np.asarray(k, float)
    base = np.sqrt(PARSEVAL / 2)
    if kind == "theta":
        return float(base)
    if kind == "u":
        return float(base / np.linalg.norm(k))
    raise InvalidArgument("observable kind must be 'theta' or 'u'")
