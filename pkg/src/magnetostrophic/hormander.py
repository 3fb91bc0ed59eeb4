"""Lie-bracket calculus for the active scalar drift on the real Fourier basis.

Directions are the real eigenfunctions ``sigma_k^0 = cos(k.x)`` and
``sigma_k^1 = sin(k.x)``.  Since ``sigma_{-k}^0 = sigma_k^0`` and
``sigma_{-k}^1 = -sigma_k^1`` every direction has a canonical frequency in the
half lattice (``k1 > 0``; or ``k1 = 0, k2 > 0``; or ``k1 = k2 = 0, k3 > 0``), and
flipping a sine frequency flips the sign of its coefficient.

For the drift ``F(theta) = -kappa Lap theta + M_u(theta) . grad theta`` the
double bracket with two constant fields is the symmetric bilinear form

    [[F, psi], sigma] = M_u(psi) . grad sigma + M_u(sigma) . grad psi,

which :func:`bracket_pair` expands in closed form and :func:`bracket_field`
evaluates by finite differences of ``F`` for cross-checking.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import total_ordering

import numpy as np

from .errors import InternalConsistencyError, InvalidArgument
from .noise import sigma_field
from .spectral import PhysParams, make_grid, multiplier_tables, symbol_D, symbol_Mu, to_physical, to_spectral

__all__ = [
    "FrequencyDirection",
    "Verdict",
    "ConditionResult",
    "CertificateStep",
    "SpanReport",
    "canonical",
    "bracket_pair",
    "bracket_field",
    "drift_field",
    "direction_field",
    "real_coordinates",
    "new_direction_condition",
    "span_closure",
    "constructive_path",
    "replay_certificate",
    "target_directions",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-9
UNIT = ((1, 0, 0), (0, 1, 0), (0, 0, 1))


def _is_canonical(k) -> bool:
    k1, k2, k3 = k
    return k1 > 0 or (k1 == 0 and (k2 > 0 or (k2 == 0 and k3 > 0)))


def canonical(k) -> tuple[tuple[int, int, int], int]:
    """Canonical half-lattice representative of ``k`` and the sign of the flip.

    Returns:
        ``(k_canonical, s)`` with ``s = +1`` if ``k`` was already canonical and
        ``-1`` if it was negated.

    Raises:
        InvalidArgument: for ``k = 0``.
    """
    k = tuple(int(c) for c in k)
    if k == (0, 0, 0):
        raise InvalidArgument("the zero frequency has no direction")
    if _is_canonical(k):
        return k, 1
    return tuple(-c for c in k), -1


@total_ordering
@dataclass(frozen=True)
class FrequencyDirection:
    """Real Fourier direction ``sigma_k^m`` with canonical ``k``."""

    k: tuple
    m: int

    def __post_init__(self):
        k = tuple(int(c) for c in self.k)
        if len(k) != 3:
            raise InvalidArgument(f"frequency must have 3 components, got {self.k}")
        if not _is_canonical(k):
            raise InvalidArgument(f"frequency {k} is not a canonical half-lattice representative")
        if self.m not in (0, 1):
            raise InvalidArgument(f"parity must be 0 or 1, got {self.m}")
        object.__setattr__(self, "k", k)

    def __lt__(self, other):
        return (self.k, self.m) < (other.k, other.m)

    def __str__(self):
        return f"{'cos' if self.m == 0 else 'sin'}{self.k}"


def _direction(k, m: int, coef: float):
    """Canonical direction for ``coef * sigma_k^m`` and the adjusted coefficient."""
    kc, s = canonical(k)
    if m == 1:
        coef *= s
    return FrequencyDirection(kc, m), coef


def bracket_pair(k, m: int, j, m2: int, params: PhysParams) -> list[tuple[FrequencyDirection, float]]:
    """Expansion of ``[[F, sigma_k^m], sigma_j^m2]`` in the real basis.

    Returns:
        ``(direction, coefficient)`` pairs for the frequencies ``k + j`` and
        ``k - j`` (zero frequencies dropped).

    Raises:
        InvalidArgument: if ``k`` or ``j`` is zero.
    """
    k = np.asarray(k, dtype=int)
    j = np.asarray(j, dtype=int)
    mk_j = float(symbol_Mu(k, params) @ j)
    mj_k = float(symbol_Mu(j, params) @ k)
    parity = (m + m2 + 1) % 2
    out = []
    plus = 0.5 * (-1) ** ((m + 1) * (m2 + 1)) * (mk_j + mj_k)
    minus = 0.5 * (-1) ** (m * (m2 + 1)) * (mk_j - mj_k)
    for freq, coef in ((k + j, plus), (k - j, minus)):
        if not freq.any():
            continue
        out.append(_direction(freq, parity, coef))
    return out


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------


def direction_field(k, m: int, n: int) -> np.ndarray:
    """Full-lattice coefficients of ``sigma_k^m`` on an ``n``-grid."""
    return sigma_field(tuple(int(c) for c in k), m, make_grid(n))


def drift_field(theta: np.ndarray, params: PhysParams) -> np.ndarray:
    """``F(theta) = -kappa Lap theta + M_u(theta) . grad theta`` without dealiasing."""
    n = theta.shape[-1]
    g = make_grid(n)
    Mu = multiplier_tables(g, params).Mu
    u = to_physical(Mu * theta)
    grad = to_physical(g.ik * theta)
    adv = to_spectral(np.sum(u * grad, axis=0))
    adv[0, 0, 0] = 0.0
    return params.kappa * g.k2 * theta + adv


def bracket_field(k, m: int, j, m2: int, params: PhysParams, n: int = 18, h: float = 1e-2, base=None) -> np.ndarray:
    """``[[F, sigma_k^m], sigma_j^m2]`` by a central mixed second difference of ``F``.

    The double bracket of ``F`` with constant fields is its second derivative
    ``D^2 F(theta)(sigma_k^m, sigma_j^m2)``; the mixed difference

        (F(x + h a + h b) - F(x + h a - h b) - F(x - h a + h b) + F(x - h a - h b)) / (4 h^2)

    evaluates it at the base point ``x`` (zero by default).  The grid must
    resolve ``k + j`` without aliasing, so no dealiasing is applied.
    """
    a = direction_field(k, m, n)
    b = direction_field(j, m2, n)
    x = np.zeros_like(a) if base is None else base

    def F(th):
        return drift_field(th, params)

    return (F(x + h * a + h * b) - F(x + h * a - h * b) - F(x - h * a + h * b) + F(x - h * a - h * b)) / (4 * h * h)


def real_coordinates(coeffs: np.ndarray, directions) -> np.ndarray:
    """Coordinates of a real field along the given directions."""
    n = coeffs.shape[-1]
    g = make_grid(n)
    out = []
    for d in directions:
        c = coeffs[g.index_of(d.k)]
        out.append(2 * c.real if d.m == 0 else -2 * c.imag)
    return np.array(out)


# --------------------------------------------------------------------------
# new-direction conditions
# --------------------------------------------------------------------------


class Verdict:
    HOLDS = "holds"
    FAILS = "fails"
    NEAR_DEGENERATE = "near_degenerate"


@dataclass(frozen=True)
class ConditionResult:
    """Outcome of comparing ``|M_u(k).j|`` with ``|M_u(j).k|``.

    ``margin`` is ``|lhs - rhs| / max(lhs, rhs)`` (0 when both vanish).
    ``specialized`` names the unit-vector closed form used for cross-checking,
    if any.
    """

    verdict: str
    lhs: float
    rhs: float
    margin: float
    specialized: str | None = None

    @property
    def holds(self) -> bool:
        return self.verdict == Verdict.HOLDS


def _specialized_sides(k, axis: int, params: PhysParams):
    """Unit-vector closed forms; both sides equal ``D(k)`` times the generic ones."""
    k1, k2, k3 = (float(c) for c in k)
    kv = np.array([k1, k2, k3])
    om = np.array(params.omega_hat)
    b0 = np.array(params.b0_hat)
    nu = params.nu
    k2n = kv @ kv
    om_k = om @ kv
    damp = (b0 @ kv) ** 2 + nu * k2n**2
    D = symbol_D(kv, params)
    if axis == 0:
        lhs = abs(k2 * om_k * k2n + k1 * k3 * damp)
        rhs = abs(k3) * D / (nu + b0[0] ** 2)
    elif axis == 1:
        a = nu + b0[1] ** 2
        lhs = abs(-k1 * om_k * k2n + k2 * k3 * damp)
        rhs = D / (a * a + om[1] ** 2) * abs(a * k3 - om[1] * k1)
    else:
        lhs = damp * (k1 * k1 + k2 * k2)
        rhs = 0.0
    return lhs, rhs, D


def _verdict(lhs: float, rhs: float, tol: float, exact_equal: bool) -> tuple[str, float]:
    scale = max(lhs, rhs)
    margin = abs(lhs - rhs) / scale if scale > 0 else 0.0
    if exact_equal or scale == 0:
        return Verdict.FAILS, margin
    if margin < tol:
        return Verdict.NEAR_DEGENERATE, margin
    return Verdict.HOLDS, margin


def new_direction_condition(k, j, params: PhysParams, tol: float = DEFAULT_TOL) -> ConditionResult:
    """Whether bracketing ``sigma_k`` with ``sigma_j`` yields ``sigma_{k +- j}``.

    For ``j`` a unit coordinate vector the closed form is evaluated as well and
    must agree with the generic one.

    Raises:
        InvalidArgument: if ``k`` or ``j`` is zero.
        InternalConsistencyError: if the closed form and the generic form
            disagree beyond rounding.
    """
    k = tuple(int(c) for c in k)
    j = tuple(int(c) for c in j)
    if k == (0, 0, 0) or j == (0, 0, 0):
        raise InvalidArgument("frequencies must be nonzero")
    lhs = abs(float(symbol_Mu(k, params) @ np.array(j, float)))
    rhs = abs(float(symbol_Mu(j, params) @ np.array(k, float)))
    axis = next((i for i, e in enumerate(UNIT) if e == j or tuple(-c for c in e) == j), None)
    exact_equal = lhs == rhs
    name = None
    if axis is not None:
        name = f"e{axis + 1}"
        s_lhs, s_rhs, D = _specialized_sides(k, axis, params)
        # both sides of the closed form are D(k) times the generic ones
        for spec, gen in ((s_lhs, lhs), (s_rhs, rhs)):
            if abs(spec - D * gen) > 1e-9 * max(spec, D * gen, D * max(lhs, rhs), 1e-300):
                raise InternalConsistencyError(
                    f"closed form {name} disagrees with the generic condition at k={k}: {spec} vs {D * gen}"
                )
        if axis == 2:
            # integer criterion, exact
            exact_equal = k[0] * k[0] + k[1] * k[1] == 0
    verdict, margin = _verdict(lhs, rhs, tol, exact_equal)
    return ConditionResult(verdict, lhs, rhs, margin, name)


# --------------------------------------------------------------------------
# span closure
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificateStep:
    """One admission: bracketing ``parent`` with seed ``seed`` produced ``produced``."""

    generation: int
    parent: tuple
    seed: tuple
    condition: ConditionResult
    produced: tuple

    def line(self) -> str:
        c = self.condition
        prods = " ".join(str(d) for d in self.produced)
        return (
            f"gen={self.generation} parent={self.parent} seed={self.seed} "
            f"lhs={c.lhs!r} rhs={c.rhs!r} margin={c.margin:.3e} -> {prods}"
        )


@dataclass
class SpanReport:
    """Result of a coverage search.

    Attributes:
        covered: Whether every target direction was generated.
        n_of_N: Generation at which the targets were first covered (or the
            last generation reached).
        certificate: Admission steps in the order they were taken.
        near_degenerate: Condition evaluations refused for a small margin.
        directions: Generation index of every direction reached.
        missing: Target directions never reached.
        method: ``"closure"`` or ``"constructive"``.
        K: Height of the filled plane (constructive path only).
        failure: Human-readable reason when not covered.
    """

    covered: bool
    n_of_N: int
    certificate: list = field(default_factory=list)
    near_degenerate: list = field(default_factory=list)
    directions: dict = field(default_factory=dict)
    missing: list = field(default_factory=list)
    method: str = "closure"
    N: int = 0
    K: int | None = None
    failure: str | None = None

    def certificate_text(self) -> str:
        return "\n".join(s.line() for s in self.certificate)

    def summary(self) -> dict:
        return {
            "method": self.method,
            "N": self.N,
            "covered": self.covered,
            "n_of_N": self.n_of_N,
            "K": self.K,
            "steps": len(self.certificate),
            "directions": len(self.directions),
            "near_degenerate": len(self.near_degenerate),
            "missing": [str(d) for d in self.missing[:20]],
            "failure": self.failure,
        }


def target_directions(N: int) -> list[FrequencyDirection]:
    """Directions spanning ``H_N``: canonical ``k`` with ``|k| <= N``, both parities."""
    out = []
    for k1 in range(0, N + 1):
        for k2 in range(-N, N + 1):
            for k3 in range(-N, N + 1):
                k = (k1, k2, k3)
                if k != (0, 0, 0) and _is_canonical(k) and k1 * k1 + k2 * k2 + k3 * k3 <= N * N:
                    out.extend(FrequencyDirection(k, m) for m in (0, 1))
    return out


def _seed_frequencies(seeds) -> tuple[list, set]:
    seeds = [s if isinstance(s, FrequencyDirection) else FrequencyDirection(*s) for s in seeds]
    if not seeds:
        raise InvalidArgument("seed set must be nonempty")
    have = {}
    for s in seeds:
        have.setdefault(s.k, set()).add(s.m)
    # a seed frequency only brackets usefully when both parities are forced
    full = sorted(k for k, ms in have.items() if ms == {0, 1})
    return full, set(seeds)


def span_closure(
    seeds,
    N: int,
    params: PhysParams,
    tol: float = DEFAULT_TOL,
    n_max: int = 64,
) -> SpanReport:
    """Breadth-first generation of the bracket spaces ``W_0, W_1, ...``.

    Generation ``n + 1`` brackets every seed frequency against the frequencies
    first reached in generation ``n`` and admits ``k +- j`` (both parities)
    exactly when :func:`new_direction_condition` holds.  Stops as soon as all
    of ``H_N`` is reached or after ``n_max`` generations.
    """
    if N < 1:
        raise InvalidArgument("N must be at least 1")
    seed_freqs, seed_dirs = _seed_frequencies(seeds)
    targets = target_directions(N)
    reached = {d: 0 for d in seed_dirs}
    freq_parities: dict = {}
    for d in seed_dirs:
        freq_parities.setdefault(d.k, set()).add(d.m)
    frontier = sorted(k for k, ms in freq_parities.items() if ms == {0, 1})
    report = SpanReport(False, 0, method="closure", N=N)

    def covered():
        return all(t in reached for t in targets)

    gen = 0
    while not covered() and gen < n_max and frontier:
        gen += 1
        new_freqs = []
        for kf in frontier:
            for j in seed_freqs:
                cond = new_direction_condition(kf, j, params, tol)
                if cond.verdict == Verdict.NEAR_DEGENERATE:
                    report.near_degenerate.append((kf, j, cond))
                if not cond.holds:
                    continue
                produced = []
                for sgn in (1, -1):
                    q = tuple(a + sgn * b for a, b in zip(kf, j))
                    if q == (0, 0, 0):
                        continue
                    qc, _ = canonical(q)
                    for m in (0, 1):
                        d = FrequencyDirection(qc, m)
                        if d not in reached:
                            reached[d] = gen
                            produced.append(d)
                    if freq_parities.get(qc) != {0, 1}:
                        freq_parities[qc] = {0, 1}
                        new_freqs.append(qc)
                if produced:
                    report.certificate.append(CertificateStep(gen, kf, j, cond, tuple(produced)))
        frontier = sorted(set(new_freqs))
    report.covered = covered()
    report.n_of_N = gen
    report.directions = reached
    report.missing = [t for t in targets if t not in reached]
    if not report.covered:
        report.failure = "generation limit reached" if frontier else "no further directions can be generated"
    return report


# --------------------------------------------------------------------------
# constructive route
# --------------------------------------------------------------------------


def _plane_conditions_hold(N: int, K: int, params: PhysParams, tol: float):
    """First violated (k, axis) among the e1/e2 conditions on the plane ``k3 = K``."""
    for k1 in range(-N, N + 1):
        for k2 in range(-N, N + 1):
            k = (k1, k2, K)
            for axis in (0, 1):
                if not new_direction_condition(k, UNIT[axis], params, tol).holds:
                    return k, f"e{axis + 1}"
    return None


def constructive_path(
    N: int, params: PhysParams, tol: float = DEFAULT_TOL, K_cap: int = 4096
) -> SpanReport:
    """Explicit route from the unit seeds to every ``|k_i| <= N``.

    1. find the smallest ``K >= 1`` at which the e1 and e2 conditions hold on
       the whole square ``|k1|, |k2| <= N``;
    2. climb from ``(1, 0, 0)`` to ``(1, 0, K)`` with e3 steps;
    3. fill the square at height ``K`` with e1 and e2 steps;
    4. move every off-axis point of the plane with e3 steps to all heights
       ``|k3| <= N``;
    5. reach the ``k3`` axis from ``(+-1, 0, l)`` with an e1 step, taking the
       sign of ``k1`` so that ``(B0)_1^2 <= (B0 . k)^2``.

    Every step is checked with :func:`new_direction_condition`.
    """
    if N < 1:
        raise InvalidArgument("N must be at least 1")
    report = SpanReport(False, 0, method="constructive", N=N)
    K = None
    first_violation = None
    for cand in range(1, K_cap + 1):
        bad = _plane_conditions_hold(N, cand, params, tol)
        if bad is None:
            K = cand
            break
        if first_violation is None:
            first_violation = bad
    if K is None:
        k, name = first_violation
        report.failure = f"no admissible height below {K_cap}; condition {name} first fails at k={k}"
        return report
    report.K = K

    depth = {(1, 0, 0): 0, (0, 1, 0): 0, (0, 0, 1): 0}
    depth.update({(-1, 0, 0): 0, (0, -1, 0): 0, (0, 0, -1): 0})

    def step(k, j, sign):
        q = tuple(a + sign * b for a, b in zip(k, j))
        cond = new_direction_condition(k, j, params, tol)
        if not cond.holds:
            raise InternalConsistencyError(f"constructive step from {k} along {j} is not admissible: {cond}")
        gen = depth[k] + 1
        if q not in depth or depth[q] > gen:
            newly = q not in depth
            depth[q] = gen
            depth[tuple(-c for c in q)] = gen
            if newly:
                qc, _ = canonical(q)
                report.certificate.append(
                    CertificateStep(gen, canonical(k)[0], j, cond, (FrequencyDirection(qc, 0), FrequencyDirection(qc, 1)))
                )
        return q

    e1, e2, e3 = UNIT
    k = (1, 0, 0)
    for _ in range(K):
        k = step(k, e3, 1)
    # fill the plane k3 = K breadth-first
    queue = deque([k])
    while queue:
        cur = queue.popleft()
        for j in (e1, e2):
            for sgn in (1, -1):
                q = tuple(a + sgn * b for a, b in zip(cur, j))
                if max(abs(q[0]), abs(q[1])) > N or q in depth:
                    continue
                step(cur, j, sgn)
                queue.append(q)
    # vertical moves from every off-axis plane point
    for k1 in range(-N, N + 1):
        for k2 in range(-N, N + 1):
            if k1 == 0 and k2 == 0:
                continue
            for direction in (-1, 1):
                cur = (k1, k2, K)
                while True:
                    nxt = cur[2] + direction
                    if direction < 0 and nxt < -N:
                        break
                    if direction > 0 and nxt > max(N, K):
                        break
                    cur = step(cur, e3, direction) if (cur[0], cur[1], nxt) not in depth else (cur[0], cur[1], nxt)
    # the k3 axis
    b0 = params.b0_hat
    for l in range(-N, N + 1):
        if l == 0:
            continue
        if b0[0] == 0 or b0[2] == 0:
            s1 = 1
        else:
            s1 = int(math.copysign(1, l * b0[2])) * int(math.copysign(1, b0[0]))
        start = (s1, 0, l)
        if start not in depth:
            raise InternalConsistencyError(f"axis step needs {start}, which was not reached")
        step(start, e1, -s1)

    reached = {}
    for q, gen in depth.items():
        if q != (0, 0, 0) and _is_canonical(q):
            for m in (0, 1):
                reached[FrequencyDirection(q, m)] = gen
    report.directions = reached
    box = [
        FrequencyDirection(q, m)
        for q in ((a, b, c) for a in range(0, N + 1) for b in range(-N, N + 1) for c in range(-N, N + 1))
        if q != (0, 0, 0) and _is_canonical(q)
        for m in (0, 1)
    ]
    report.missing = [d for d in box if d not in reached]
    report.covered = not report.missing
    report.n_of_N = max((reached[d] for d in box if d in reached), default=0)
    if not report.covered:
        report.failure = f"{len(report.missing)} directions of the box were not reached"
    return report


def replay_certificate(report: SpanReport, params: PhysParams, tol: float = DEFAULT_TOL) -> bool:
    """Re-evaluate every certificate step; True when all verdicts reproduce.

    Also checks that each produced frequency is the canonical form of
    ``parent +- seed``.
    """
    for s in report.certificate:
        again = new_direction_condition(s.parent, s.seed, params, tol)
        if again.verdict != s.condition.verdict or not again.holds:
            return False
        options = set()
        for sgn in (1, -1):
            q = tuple(a + sgn * b for a, b in zip(s.parent, s.seed))
            if q != (0, 0, 0):
                options.add(canonical(q)[0])
        if any(d.k not in options for d in s.produced):
            return False
    return True
