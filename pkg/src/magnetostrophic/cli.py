"""Command-line entry point.

    magnetostrophic simulate    --config run.ini --seed 7 --out results/
    magnetostrophic convergence --eps 0.1 0.01 0.001
    magnetostrophic stationary  --eps 0.1 0.01 [--contraction]
    magnetostrophic hormander   --N 3
    magnetostrophic wasserstein --a run_a/snapshots --b run_b/snapshots
    magnetostrophic moments     --input results/simulate_limit.csv --eta 0.01

Exit codes: 0 success, 2 usage or configuration error, 3 blow-up,
4 bracket condition not covered, 5 a verification check failed.

The output directory is ``--out``, else ``$MAGNETOSTROPHIC_OUT``, else the
``out_dir`` of the configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import experiments as exp
from . import hormander as hor
from .config import ConfigError, ExperimentConfig, build_sampler, dump_config, load_config
from .diagnostics import moment_report
from .errors import BlowUp, InvalidArgument
from .io import Snapshot, read_snapshot, read_trajectory_csv, write_snapshot, write_trajectory_csv
from .metrics import METRICS, EmpiricalMeasure, wasserstein
from .samplers import SingleModeSampler
from .spectral import SpectralScalar, SpectralVector

log = logging.getLogger("magnetostrophic")

EXIT_OK, EXIT_USAGE, EXIT_BLOWUP, EXIT_NOT_COVERED, EXIT_CHECK = 0, 2, 3, 4, 5
OUT_ENV = "MAGNETOSTROPHIC_OUT"
REPORT_SCHEMA = "magnetostrophic-report v1"


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="experiment configuration file")
    p.add_argument("--seed", type=int, help="noise seed (overrides the configuration)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magnetostrophic",
        description="Simulate and verify stochastic magnetostrophic convection and its active-scalar limit.",
        epilog="exit codes: 0 ok, 2 usage/config, 3 blow-up, 4 not covered, 5 check failed",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an ensemble and write its observables")
    _common(p)
    p.add_argument("--system", choices=("limit", "full"))
    p.add_argument("--horizon", type=float)
    p.add_argument("--n-traj", type=int)
    p.add_argument("--snapshots", action="store_true", help="also write terminal states")

    p = sub.add_parser("convergence", help="finite-time convergence of the full system to the limit")
    _common(p)
    p.add_argument("--eps", type=float, nargs="+", required=True, help="values of eps (delta = eps unless --delta)")
    p.add_argument("--delta", type=float, nargs="+")
    p.add_argument("--p", type=float, default=1.0, help="moment of the sup error")
    p.add_argument("--mismatch", type=float, help="amplitude of the U(0), B(0) offset")

    p = sub.add_parser("stationary", help="Wasserstein distance between stationary ensembles")
    _common(p)
    p.add_argument("--eps", type=float, nargs="+", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--contraction", action="store_true", help="run the two-ensemble contraction probe instead")
    p.add_argument("--checkpoints", type=float, nargs="+", default=[1.0, 2.0, 4.0, 8.0])

    for name in ("hormander", "hormander-check"):
        p = sub.add_parser(name, help="bracket-spanning check on the frequency lattice")
        _common(p)
        p.add_argument("--N", type=int, default=3, help="target radius |k| <= N")
        p.add_argument("--method", choices=("closure", "constructive", "both"), default="both")
        p.add_argument("--seeds", default="1,0,0;0,1,0;0,0,1", help="';'-separated wavevectors, both parities")
        p.add_argument("--tol", type=float, default=hor.DEFAULT_TOL, help="near-degeneracy margin")
        p.add_argument("--nu", type=float, help="viscosity (overrides the configuration)")
        p.add_argument("--lambda", dest="lambda_colat", type=float, help="co-latitude in radians")
        p.add_argument("--b0", type=float, nargs=3, help="applied field direction (normalised)")

    p = sub.add_parser("wasserstein", help="distance bracket between two snapshot sets")
    _common(p)
    p.add_argument("--a", nargs="+", type=Path, required=True, help="snapshot files or directories")
    p.add_argument("--b", nargs="+", type=Path, required=True, help="snapshot files or directories")
    p.add_argument("--metric", choices=METRICS, default="rho")
    p.add_argument("--eta", type=float, help="weight exponent (overrides the configuration)")

    p = sub.add_parser("moments", help="exponential moment report")
    _common(p)
    p.add_argument("--input", type=Path, help="trajectory CSV from 'simulate' (simulated on the fly if absent)")
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--p", type=float, default=2.0)
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or cfg.out_dir
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_table(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {REPORT_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _save_config(out: Path, cfg: ExperimentConfig):
    (out / "config.ini").write_text(dump_config(cfg))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _config(args)
    changes = {}
    if args.system:
        changes["system"] = args.system
    if args.horizon is not None:
        changes["horizon"] = args.horizon
    if args.n_traj is not None:
        changes["n_traj"] = args.n_traj
    cfg = replace(cfg, **changes)
    out = _out_dir(args, cfg)
    if cfg.system == "limit":
        names = list(dyn.LIMIT_OBSERVABLES) + ["theta_l3sq"]
    else:
        names = list(dyn.FULL_OBSERVABLES) + ["Theta_l3sq"]
    rec = dyn.run_ensemble(
        cfg.system, build_sampler(cfg), cfg.params, cfg.step, cfg.horizon, cfg.n_traj, cfg.noise,
        observables=names, record_every=cfg.record_every, batch_size=cfg.batch_size, workers=cfg.workers,
    )
    path = out / f"simulate_{cfg.system}.csv"
    write_trajectory_csv(path, rec)
    _save_config(out, cfg)
    if args.snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        term = rec.terminal
        for i in range(rec.n_traj):
            if cfg.system == "limit":
                snap = Snapshot(cfg.grid, cfg.params, term.time, term.theta.coeffs[i])
            else:
                snap = Snapshot(cfg.grid, cfg.params, term.time, term.Theta.coeffs[i], term.U.coeffs[i], term.B.coeffs[i])
            write_snapshot(snap_dir / f"traj_{i:05d}.msnp", snap)
    n_stopped = int(np.sum(rec.stopped_step >= 0))
    print(f"wrote {path} ({rec.n_traj} trajectories, {rec.times.size} records, {n_stopped} stopped)")
    return EXIT_OK


def _pairs(args):
    deltas = args.delta if args.delta else args.eps
    if len(deltas) != len(args.eps):
        raise InvalidArgument("--eps and --delta need the same number of values")
    return list(zip(args.eps, deltas))


def cmd_convergence(args) -> int:
    cfg = _config(args)
    if args.mismatch is not None:
        cfg = replace(cfg, sampler=replace(cfg.sampler, mismatch=args.mismatch))
    out = _out_dir(args, cfg)
    table = exp.cmd_convergence(cfg, _pairs(args), p=args.p)
    rows = [(r.eps, r.delta, r.theta_sup, r.theta_sup_se, r.h1_integral, r.h1_integral_se) for r in table.rows]
    _write_table(out / "convergence.csv", ["eps", "delta", "theta_sup", "theta_sup_se", "h1_integral", "h1_integral_se"], rows)
    _save_config(out, cfg)
    for r in rows:
        print("eps=%-8g delta=%-8g E sup|Theta-theta|^p=%.6g  H1 error=%.6g" % (r[0], r[1], r[2], r[4]))
    print(f"fitted slopes: temperature {table.theta_slope:.3f}, H1 {table.h1_slope:.3f}")
    ok = table.theta_decreasing and table.theta_slope > 0
    if not ok:
        print("check failed: temperature error is not decreasing in eps + delta")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_stationary(args) -> int:
    cfg = _config(args)
    if args.samples is not None:
        cfg = replace(cfg, n_traj=args.samples)
    out = _out_dir(args, cfg)
    _save_config(out, cfg)
    if args.contraction:
        other = SingleModeSampler(cfg.grid, (1, 1, 0), 0, 3.0)
        res = exp.contraction_probe(cfg, build_sampler(cfg), other, args.checkpoints)
        rows = list(zip(res.checkpoints, res.lower, res.upper))
        _write_table(out / "contraction.csv", ["time", "lower", "upper"], rows)
        for t, lo, up in rows:
            print(f"t={t:<6g} W_rho in [{lo:.6g}, {up:.6g}]")
        ok = res.strictly_decreasing
    else:
        table = exp.cmd_stationary_convergence(cfg, _pairs(args))
        rows = [(r.eps, r.delta, r.lower, r.upper) for r in table.rows]
        _write_table(out / "stationary.csv", ["eps", "delta", "lower", "upper"], rows)
        for r in rows:
            print("eps=%-8g delta=%-8g W in [%.6g, %.6g]" % r)
        print(f"split-half floor: [{table.self_lower:.6g}, {table.self_upper:.6g}]")
        ok = table.monotone
    if not ok:
        print("check failed: upper bracket is not strictly decreasing")
    return EXIT_OK if ok else EXIT_CHECK


def _parse_seeds(text: str):
    seeds = []
    for group in filter(None, (g.strip() for g in text.split(";"))):
        k = tuple(int(c) for c in group.replace(",", " ").split())
        if len(k) != 3:
            raise InvalidArgument(f"seed {group!r} is not a wavevector")
        seeds.extend(hor.FrequencyDirection(k, m) for m in (0, 1))
    return seeds


def cmd_hormander(args) -> int:
    cfg = _config(args)
    changes = {}
    if args.nu is not None:
        changes["nu"] = args.nu
    if args.lambda_colat is not None:
        changes["lambda_colat"] = args.lambda_colat
    if args.b0 is not None:
        length = float(np.linalg.norm(args.b0))
        if length == 0:
            raise InvalidArgument("--b0 must be a nonzero vector")
        changes["b0_hat"] = tuple(float(c) / length for c in args.b0)
    if changes:
        cfg = replace(cfg, params=cfg.params.replace(**changes))
    out = _out_dir(args, cfg)
    seeds = _parse_seeds(args.seeds)
    methods = ("closure", "constructive") if args.method == "both" else (args.method,)
    covered = True
    summaries = {}
    for method in methods:
        if method == "closure":
            rep = hor.span_closure(seeds, args.N, cfg.params, args.tol)
        else:
            rep = hor.constructive_path(args.N, cfg.params, args.tol)
        replayed = rep.covered and hor.replay_certificate(rep, cfg.params, args.tol)
        summary = rep.summary()
        summary["replayed"] = replayed
        summaries[method] = summary
        path = out / f"hormander_{method}_N{args.N}.txt"
        with open(path, "w") as fh:
            fh.write(f"# {method} N={args.N} covered={rep.covered} n_of_N={rep.n_of_N}\n")
            fh.write(rep.certificate_text() + "\n")
        verdict = "covered" if rep.covered else "not covered"
        print(f"{method}: {verdict} (n(N)={rep.n_of_N}, {len(rep.certificate)} steps, replay={'ok' if replayed else 'no'}) -> {path}")
        if not rep.covered and rep.failure:
            print(f"  {rep.failure}")
        covered = covered and rep.covered and replayed
    (out / f"hormander_N{args.N}.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if covered else EXIT_NOT_COVERED


def _snapshot_files(paths):
    files = []
    for p in paths:
        files.extend(sorted(p.glob("*.msnp")) if p.is_dir() else [p])
    if not files:
        raise InvalidArgument(f"no snapshot files under {[str(p) for p in paths]}")
    return sorted(files)


def _load_measure(paths) -> EmpiricalMeasure:
    snaps = [read_snapshot(p) for p in _snapshot_files(paths)]
    grid = snaps[0].grid
    if any(s.grid != grid for s in snaps):
        raise InvalidArgument("snapshots live on different grids")
    theta = SpectralScalar(np.stack([s.theta for s in snaps]), grid)
    if all(s.U is not None for s in snaps):
        U = SpectralVector(np.stack([s.U for s in snaps]), grid, True)
        B = SpectralVector(np.stack([s.B for s in snaps]), grid, True)
        return EmpiricalMeasure(theta, U, B)
    return EmpiricalMeasure(theta)


def cmd_wasserstein(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    mu, nu = _load_measure(args.a), _load_measure(args.b)
    if args.metric == "rho-tilde":
        mu = mu if mu.has_fields else mu.lifted(cfg.params)
        nu = nu if nu.has_fields else nu.lifted(cfg.params)
    if args.eta is not None:
        cfg = replace(cfg, eta=args.eta)
    res = wasserstein(mu, nu, args.metric, exp.metric_params(cfg), cfg.params)
    _write_table(out / "wasserstein.csv", ["metric", "lower", "path", "upper"], [(res.metric, res.lower, res.path, res.upper)])
    _write_table(
        out / "wasserstein_permutation.csv",
        ["a", "b_lower", "b_upper"],
        [(i, int(res.perm_lower[i]), int(res.perm_upper[i])) for i in range(mu.size)],
    )
    print(f"W_{res.metric} in [{res.lower:.6g}, {res.upper:.6g}] (path bound {res.path:.6g})")
    return EXIT_OK


def _record_from_csv(path: Path, cfg: ExperimentConfig) -> dyn.EnsembleRecord:
    cols = read_trajectory_csv(path)
    traj = cols.pop("traj")
    times_all = cols.pop("time")
    ids = np.unique(traj)
    n_rec = times_all.size // ids.size
    if n_rec * ids.size != times_all.size:
        raise InvalidArgument(f"{path}: ragged trajectory table")
    system = "limit" if "theta_l2sq" in cols else "full"
    obs = {name: v.reshape(ids.size, n_rec) for name, v in cols.items()}
    return dyn.EnsembleRecord(
        system, times_all[:n_rec], obs, None, -np.ones(ids.size, int), cfg.params, cfg.noise, cfg.step, int(ids[0])
    )


def cmd_moments(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    if args.input is not None:
        rec = _record_from_csv(args.input, cfg)
    else:
        pre = "theta" if cfg.system == "limit" else "Theta"
        base = dyn.LIMIT_OBSERVABLES if cfg.system == "limit" else dyn.FULL_OBSERVABLES
        rec = dyn.run_ensemble(
            cfg.system, build_sampler(cfg), cfg.params, cfg.step, cfg.horizon, cfg.n_traj, cfg.noise,
            observables=list(base) + [f"{pre}_l3sq"], record_every=cfg.record_every,
            batch_size=cfg.batch_size, workers=cfg.workers,
        )
    report = moment_report(rec, args.eta, args.p)
    rows = []
    for c in report.checks:
        margin = c.log_rhs - c.log_lhs
        rows.append((c.name, c.log_lhs, c.log_rhs, c.fitted_constant, c.stderr, margin, str(c.saturated).lower()))
        print(f"{c.name:22s} log E exp(lhs)={c.log_lhs:.6g}  log E exp(rhs)={c.log_rhs:.6g}  fitted C={c.fitted_constant:.4g}")
    _write_table(out / "moments.csv", ["check", "log_lhs", "log_rhs", "fitted_constant", "stderr", "log_margin", "saturated"], rows)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "convergence": cmd_convergence,
    "stationary": cmd_stationary,
    "hormander": cmd_hormander,
    "hormander-check": cmd_hormander,
    "wasserstein": cmd_wasserstein,
    "moments": cmd_moments,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    log.info("running %s", args.command)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidArgument as exc:
        print(f"invalid argument: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlowUp as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
