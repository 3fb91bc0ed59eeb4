import numpy as np
import pytest

from conftest import random_theta
from magnetostrophic.errors import InvalidArgument
from magnetostrophic.io import Snapshot, read_snapshot, read_trajectory_csv, write_snapshot, write_trajectory_csv
from magnetostrophic.dynamics import StepConfig, run_ensemble
from magnetostrophic.noise import default_noise
from magnetostrophic.samplers import GaussianLowModeSampler
from magnetostrophic.spectral import PhysParams, apply_constitutive, make_grid

G = make_grid(8)
P = PhysParams(eps=0.1, delta=0.2)


def test_limit_snapshot_round_trip(tmp_path):
    th = random_theta(G, 1)
    write_snapshot(tmp_path / "s.msnp", Snapshot(G, P, 1.5, th.coeffs))
    back = read_snapshot(tmp_path / "s.msnp")
    assert back.U is None and back.time == 1.5 and back.params == P
    # stored as single precision
    assert np.allclose(back.theta, th.coeffs, rtol=1e-6, atol=1e-7)


def test_full_snapshot_round_trip(tmp_path):
    th = random_theta(G, 2)
    u, b = apply_constitutive(th, P)
    write_snapshot(tmp_path / "f.msnp", Snapshot(G, P, 0.0, th.coeffs, u.coeffs, b.coeffs))
    back = read_snapshot(tmp_path / "f.msnp")
    assert np.allclose(back.U, u.coeffs, atol=1e-6) and np.allclose(back.B, b.coeffs, atol=1e-6)
    assert np.allclose(back.theta, th.coeffs, atol=1e-6)


def test_corrupt_snapshots(tmp_path):
    (tmp_path / "x.msnp").write_bytes(b"garbage")
    with pytest.raises(InvalidArgument):
        read_snapshot(tmp_path / "x.msnp")
    write_snapshot(tmp_path / "t.msnp", Snapshot(G, P, 0.0, random_theta(G, 3).coeffs))
    raw = (tmp_path / "t.msnp").read_bytes()
    (tmp_path / "t.msnp").write_bytes(raw[:-8])
    with pytest.raises(InvalidArgument):
        read_snapshot(tmp_path / "t.msnp")
    (tmp_path / "m.msnp").write_bytes(b"X" * len(raw))
    with pytest.raises(InvalidArgument):
        read_snapshot(tmp_path / "m.msnp")


def test_trajectory_csv_round_trip(tmp_path):
    rec = run_ensemble("limit", GaussianLowModeSampler(G, 2, 0.2), PhysParams(), StepConfig(dt=0.01), 0.05, 2,
                       default_noise(), observables=["theta_l2sq", "grad_theta_l2sq"])
    write_trajectory_csv(tmp_path / "r.csv", rec)
    cols = read_trajectory_csv(tmp_path / "r.csv")
    assert np.array_equal(cols["theta_l2sq"].reshape(2, -1), rec.observables["theta_l2sq"])
    (tmp_path / "bad.csv").write_text("# other\n")
    with pytest.raises(InvalidArgument):
        read_trajectory_csv(tmp_path / "bad.csv")
