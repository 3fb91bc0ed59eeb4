"""Experiment configuration files.

Grammar: INI-style sections of ``key = value`` lines, ``#`` comments.

    [experiment]  system, n, horizon, n_traj, record_every, burn_in, out_dir,
                  batch_size, workers
    [physics]     eps, delta, nu, kappa, lambda_colat, b0_hat (three reals)
    [noise]       seed, modes (``k1 k2 k3 m alpha`` groups separated by ``;``)
    [step]        dt, scheme, nonlinear, check_finite
    [sampler]     kind (gaussian | single | zero | snapshot), kmax, amplitude,
                  seed, k, m, paths (``;``-separated), mismatch
    [metric]      eta (real or ``auto``), n_quad

Every key is optional; missing keys take the defaults below.  Reals are
written with ``repr`` so that parse(serialize(cfg)) == cfg.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import StepConfig
from .errors import InvalidArgument
from .noise import NoiseConfig, NoiseEntry, default_noise
from .spectral import Grid, PhysParams, make_grid

__all__ = ["ConfigError", "SamplerSpec", "ExperimentConfig", "parse_config", "load_config", "dump_config", "save_config", "build_sampler"]

SYSTEMS = ("limit", "full")
SAMPLER_KINDS = ("gaussian", "single", "zero", "snapshot")


class ConfigError(InvalidArgument):
    """Malformed configuration; the message names the line and field."""


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "gaussian"
    kmax: float = 2.0
    amplitude: float = 0.2
    seed: int = 1
    k: tuple = (1, 0, 0)
    m: int = 0
    paths: tuple = ()
    mismatch: float = 0.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise InvalidArgument(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")
        if self.kind == "snapshot" and not self.paths:
            raise InvalidArgument("snapshot sampler needs paths")


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "limit"
    n: int = 8
    horizon: float = 1.0
    n_traj: int = 16
    record_every: int = 10
    burn_in: float | None = None
    out_dir: str = "out"
    batch_size: int = 64
    workers: int = 1
    params: PhysParams = field(default_factory=PhysParams)
    noise: NoiseConfig = field(default_factory=default_noise)
    step: StepConfig = field(default_factory=lambda: StepConfig(dt=1e-3))
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    eta: float | None = None
    n_quad: int = 257

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise InvalidArgument(f"system must be 'limit' or 'full', got {self.system!r}")
        if self.n < 4 or self.n % 2:
            raise InvalidArgument(f"n (grid size) must be even and at least 4, got {self.n}")
        if not self.horizon >= 0:
            raise InvalidArgument("horizon must be nonnegative")
        for name in ("n_traj", "record_every", "batch_size", "workers"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be at least 1")
        if self.eta is not None and not self.eta > 0:
            raise InvalidArgument("eta must be positive")

    @property
    def grid(self) -> Grid:
        return make_grid(self.n)

    @property
    def burn_in_time(self) -> float:
        """Configured burn-in, else ten slowest temperature dissipation times."""
        if self.burn_in is not None:
            return self.burn_in
        return 10.0 / self.params.kappa

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, noise=self.noise.with_seed(seed))


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------


def _real(x) -> str:
    return repr(float(x))


def _modes_text(noise: NoiseConfig) -> str:
    return "; ".join(f"{e.k[0]} {e.k[1]} {e.k[2]} {e.m} {_real(e.alpha)}" for e in noise.entries)


def dump_config(cfg: ExperimentConfig) -> str:
    p, s, sm = cfg.params, cfg.step, cfg.sampler
    lines = [
        "[experiment]",
        f"system = {cfg.system}",
        f"n = {cfg.n}",
        f"horizon = {_real(cfg.horizon)}",
        f"n_traj = {cfg.n_traj}",
        f"record_every = {cfg.record_every}",
        f"burn_in = {'auto' if cfg.burn_in is None else _real(cfg.burn_in)}",
        f"out_dir = {cfg.out_dir}",
        f"batch_size = {cfg.batch_size}",
        f"workers = {cfg.workers}",
        "",
        "[physics]",
        f"eps = {_real(p.eps)}",
        f"delta = {_real(p.delta)}",
        f"nu = {_real(p.nu)}",
        f"kappa = {_real(p.kappa)}",
        f"lambda_colat = {_real(p.lambda_colat)}",
        "b0_hat = " + " ".join(_real(c) for c in p.b0_hat),
        "",
        "[noise]",
        f"seed = {cfg.noise.seed}",
        f"modes = {_modes_text(cfg.noise)}",
        "",
        "[step]",
        f"dt = {_real(s.dt)}",
        f"scheme = {s.scheme}",
        f"nonlinear = {str(s.nonlinear).lower()}",
        f"check_finite = {str(s.check_finite).lower()}",
        "",
        "[sampler]",
        f"kind = {sm.kind}",
        f"kmax = {_real(sm.kmax)}",
        f"amplitude = {_real(sm.amplitude)}",
        f"seed = {sm.seed}",
        "k = " + " ".join(str(int(c)) for c in sm.k),
        f"m = {sm.m}",
        f"paths = {'; '.join(sm.paths)}",
        f"mismatch = {_real(sm.mismatch)}",
        "",
        "[metric]",
        f"eta = {'auto' if cfg.eta is None else _real(cfg.eta)}",
        f"n_quad = {cfg.n_quad}",
        "",
    ]
    return "\n".join(lines)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_KEY_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*[=:]")
_SECTION_LINE = re.compile(r"^\s*\[([^\]]+)\]")


def _line_numbers(text: str) -> dict:
    where, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = _SECTION_LINE.match(line)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = no
            continue
        m = _KEY_LINE.match(line)
        if m and section is not None:
            where[(section, m.group(1).lower())] = no
    return where


_SCHEMA = {
    "experiment": {"system", "n", "horizon", "n_traj", "record_every", "burn_in", "out_dir", "batch_size", "workers"},
    "physics": {"eps", "delta", "nu", "kappa", "lambda_colat", "b0_hat"},
    "noise": {"seed", "modes"},
    "step": {"dt", "scheme", "nonlinear", "check_finite"},
    "sampler": {"kind", "kmax", "amplitude", "seed", "k", "m", "paths", "mismatch"},
    "metric": {"eta", "n_quad"},
}


class _Reader:
    def __init__(self, parser, where):
        self.parser, self.where = parser, where

    def fail(self, section, key, msg):
        if key is None:
            # validation messages name the offending field
            words = re.findall(r"[A-Za-z_][A-Za-z0-9_]*", msg)
            key = next((w for w in words if w in _SCHEMA.get(section, ())), None)
        line = self.where.get((section, key)) or self.where.get((section, None))
        loc = f"line {line}, " if line else ""
        name = f"[{section}] {key}" if key else f"[{section}]"
        raise ConfigError(f"{loc}{name}: {msg}")

    def get(self, section, key, conv, default):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key).strip()
        try:
            return conv(raw)
        except (ValueError, InvalidArgument) as exc:
            self.fail(section, key, f"cannot parse {raw!r} ({exc})")


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected a boolean")


def _float(raw: str) -> float:
    x = float(raw)
    if not math.isfinite(x):
        raise ValueError("value must be finite")
    return x


def _optional_float(raw: str):
    return None if raw.lower() == "auto" else _float(raw)


def _floats(raw: str) -> tuple:
    return tuple(_float(t) for t in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple:
    return tuple(int(t) for t in raw.replace(",", " ").split())


def _modes(raw: str) -> tuple:
    entries = []
    for group in filter(None, (g.strip() for g in raw.split(";"))):
        parts = group.split()
        if len(parts) not in (4, 5):
            raise ValueError(f"mode group {group!r} needs 'k1 k2 k3 m [alpha]'")
        k = tuple(int(t) for t in parts[:3])
        alpha = _float(parts[4]) if len(parts) == 5 else 1.0
        entries.append(NoiseEntry(k, int(parts[3]), alpha))
    return tuple(entries)


def parse_config(text: str) -> ExperimentConfig:
    """Parse configuration text.

    Raises:
        ConfigError: on syntax errors, unknown sections or keys, and
            unparsable or out-of-range values.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    where = _line_numbers(text)
    rd = _Reader(parser, where)
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"line {where.get((section, None), '?')}: unknown section [{section}]")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                rd.fail(section, key, "unknown key")

    d = ExperimentConfig()
    e = "experiment"
    vals = dict(
        system=rd.get(e, "system", str, d.system),
        n=rd.get(e, "n", int, d.n),
        horizon=rd.get(e, "horizon", _float, d.horizon),
        n_traj=rd.get(e, "n_traj", int, d.n_traj),
        record_every=rd.get(e, "record_every", int, d.record_every),
        burn_in=rd.get(e, "burn_in", _optional_float, d.burn_in),
        out_dir=rd.get(e, "out_dir", str, d.out_dir),
        batch_size=rd.get(e, "batch_size", int, d.batch_size),
        workers=rd.get(e, "workers", int, d.workers),
    )
    ph = "physics"
    dp = d.params
    phys = dict(
        eps=rd.get(ph, "eps", _float, dp.eps),
        delta=rd.get(ph, "delta", _float, dp.delta),
        nu=rd.get(ph, "nu", _float, dp.nu),
        kappa=rd.get(ph, "kappa", _float, dp.kappa),
        lambda_colat=rd.get(ph, "lambda_colat", _float, dp.lambda_colat),
        b0_hat=rd.get(ph, "b0_hat", _floats, dp.b0_hat),
    )
    try:
        vals["params"] = PhysParams(**phys)
    except InvalidArgument as exc:
        rd.fail(ph, None, str(exc))
    entries = rd.get("noise", "modes", _modes, d.noise.entries)
    seed = rd.get("noise", "seed", int, d.noise.seed)
    try:
        vals["noise"] = NoiseConfig(entries, seed)
    except InvalidArgument as exc:
        rd.fail("noise", "modes", str(exc))
    st = "step"
    try:
        vals["step"] = StepConfig(
            dt=rd.get(st, "dt", _float, d.step.dt),
            scheme=rd.get(st, "scheme", str, d.step.scheme),
            nonlinear=rd.get(st, "nonlinear", _bool, d.step.nonlinear),
            check_finite=rd.get(st, "check_finite", _bool, d.step.check_finite),
        )
    except InvalidArgument as exc:
        rd.fail(st, None, str(exc))
    sa, ds = "sampler", d.sampler
    try:
        vals["sampler"] = SamplerSpec(
            kind=rd.get(sa, "kind", str, ds.kind),
            kmax=rd.get(sa, "kmax", _float, ds.kmax),
            amplitude=rd.get(sa, "amplitude", _float, ds.amplitude),
            seed=rd.get(sa, "seed", int, ds.seed),
            k=rd.get(sa, "k", _ints, ds.k),
            m=rd.get(sa, "m", int, ds.m),
            paths=rd.get(sa, "paths", lambda r: tuple(filter(None, (p.strip() for p in r.split(";")))), ds.paths),
            mismatch=rd.get(sa, "mismatch", _float, ds.mismatch),
        )
    except InvalidArgument as exc:
        rd.fail(sa, None, str(exc))
    vals["eta"] = rd.get("metric", "eta", _optional_float, d.eta)
    vals["n_quad"] = rd.get("metric", "n_quad", int, d.n_quad)
    try:
        return ExperimentConfig(**vals)
    except InvalidArgument as exc:
        section = "metric" if str(exc).startswith("eta") else "experiment"
        rd.fail(section, None, str(exc))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# --------------------------------------------------------------------------
# samplers
# --------------------------------------------------------------------------


def mismatch_fields(grid: Grid, amplitude: float):
    """Fixed divergence-free O(1) offsets for the velocity and magnetic fields.

    A single real shear mode ``amplitude * (cos z, sin z, 0)`` for the velocity
    and its quarter turn for the magnetic field.
    """
    shape = (3,) + grid.shape
    dU = np.zeros(shape, complex)
    dB = np.zeros(shape, complex)
    plus, minus = grid.index_of((0, 0, 1)), grid.index_of((0, 0, -1))
    # cos z -> 1/2 at +-1; sin z -> -i/2 at +1, i/2 at -1
    dU[(0,) + plus] = dU[(0,) + minus] = amplitude / 2
    dU[(1,) + plus], dU[(1,) + minus] = -0.5j * amplitude, 0.5j * amplitude
    dB[(1,) + plus] = dB[(1,) + minus] = amplitude / 2
    dB[(0,) + plus], dB[(0,) + minus] = 0.5j * amplitude, -0.5j * amplitude
    return dU, dB


def build_sampler(cfg: ExperimentConfig):
    """Initial-condition sampler described by ``cfg.sampler``."""
    from . import samplers

    spec, grid = cfg.sampler, cfg.grid
    if spec.kind == "gaussian":
        smp = samplers.GaussianLowModeSampler(grid, spec.kmax, spec.amplitude, spec.seed)
    elif spec.kind == "single":
        smp = samplers.SingleModeSampler(grid, tuple(spec.k), spec.m, spec.amplitude)
    elif spec.kind == "zero":
        smp = samplers.ArraySampler(grid, np.zeros((1,) + grid.shape, complex))
    else:
        smp = samplers.SnapshotSampler(list(spec.paths))
    if spec.mismatch:
        smp = smp.with_mismatch(*mismatch_fields(grid, spec.mismatch))
    return smp
