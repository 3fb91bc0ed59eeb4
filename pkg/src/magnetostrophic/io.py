"""Binary field snapshots and CSV trajectory records.

Snapshot layout (all little-endian)::

    offset  size  content
    0       8     magic  b"MSTRPHC\\0"
    8       4     uint32 format version (currently 1)
    12      4     uint32 n, modes per axis
    16      4     uint32 field kind: 0 = temperature only, 1 = (U, B, Theta)
    20      4     uint32 number of scalar components c (1 or 7)
    24      80    10 x float64: eps, delta, nu, kappa, lambda_colat,
                  b0_x, b0_y, b0_z, time, reserved (0)
    104     ...   c * n**3 complex64 coefficients

Components are ordered U_x, U_y, U_z, B_x, B_y, B_z, Theta for kind 1.  Each
component is stored row-major over (k1, k2, k3) with every axis running over
wavenumbers -n/2+1, ..., n/2 in increasing order.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .spectral import Grid, PhysParams, make_grid

__all__ = [
    "Snapshot",
    "write_snapshot",
    "read_snapshot",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "CSV_SCHEMA",
]

MAGIC = b"MSTRPHC\0"
VERSION = 1
_HEADER = struct.Struct("<8sIIII10d")
CSV_SCHEMA = "magnetostrophic-trajectory v1"


@dataclass(eq=False)
class Snapshot:
    grid: Grid
    params: PhysParams
    time: float
    theta: np.ndarray
    U: np.ndarray | None = None
    B: np.ndarray | None = None


def _lattice_order(n: int) -> np.ndarray:
    return np.array([k % n for k in range(-n // 2 + 1, n // 2 + 1)])


def write_snapshot(path, snap: Snapshot) -> None:
    n = snap.grid.n
    full = snap.U is not None
    comps = [snap.theta] if not full else [*snap.U, *snap.B, snap.theta]
    p = snap.params
    header = _HEADER.pack(
        MAGIC, VERSION, n, 1 if full else 0, len(comps),
        p.eps, p.delta, p.nu, p.kappa, p.lambda_colat, *p.b0_hat, float(snap.time), 0.0,
    )
    order = _lattice_order(n)
    data = np.stack([c[np.ix_(order, order, order)] for c in comps]).astype("<c8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))


def read_snapshot(path) -> Snapshot:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidArgument(f"{path}: truncated snapshot header")
    magic, version, n, kind, ncomp, *vals = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise InvalidArgument(f"{path}: not a snapshot file")
    if version != VERSION:
        raise InvalidArgument(f"{path}: unsupported snapshot version {version}")
    if (kind, ncomp) not in ((0, 1), (1, 7)):
        raise InvalidArgument(f"{path}: inconsistent field kind {kind} with {ncomp} components")
    grid = make_grid(n)
    body = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size)
    if body.size != ncomp * n**3:
        raise InvalidArgument(f"{path}: expected {ncomp * n**3} coefficients, found {body.size}")
    stored = body.reshape(ncomp, n, n, n).astype(complex)
    order = _lattice_order(n)
    comps = np.empty_like(stored)
    comps[:, order[:, None, None], order[None, :, None], order[None, None, :]] = stored
    eps, delta, nu, kappa, lam, bx, by, bz, time, _ = vals
    params = PhysParams(eps, delta, nu, kappa, lam, (bx, by, bz))
    if kind == 0:
        return Snapshot(grid, params, time, comps[0])
    return Snapshot(grid, params, time, comps[6], comps[0:3], comps[3:6])


def write_trajectory_csv(path, record) -> None:
    """Write an ensemble record as a long-format CSV table.

    Columns are ``traj, time`` followed by the observables in record order.
    The first line is a comment naming the schema version.  Floats use the
    shortest round-trip representation, so identical runs give identical bytes.
    """
    names = list(record.observables)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {CSV_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj", "time", *names])
        for i in range(record.n_traj):
            for r, t in enumerate(record.times):
                row = [record.traj_offset + i, repr(float(t))]
                row += [repr(float(record.observables[n][i, r])) for n in names]
                w.writerow(row)


def read_trajectory_csv(path) -> dict:
    """Read a CSV written by :func:`write_trajectory_csv` into column arrays."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {CSV_SCHEMA}":
            raise InvalidArgument(f"{path}: unknown trajectory schema {first!r}")
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = list(zip(*body)) if body else [[] for _ in header]
    out = {h: np.array(c, dtype=float) for h, c in zip(header, cols)}
    out["traj"] = out["traj"].astype(int)
    return out
