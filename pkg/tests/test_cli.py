import csv

import numpy as np
import pytest

from layerpb.cli import (DOMAIN_A, DOMAIN_CENTERS, ACCURACY_COUNTS, compute_errors, domain_radius,
                         generate_particles, load_settings, main, read_particles, split_counts,
                         write_particles)
from layerpb.errors import ConfigError, ZeroReference

CONFIG = """
[medium]
d = 0, -1.2
eps = 1.0, 8.6, 20.5
lam = 1.2, 0.5, 2.1

[run]
mode = {mode}
p = 6
leaf_capacity = 8
workers = 1
seed = 3

[particles]
counts = {counts}

[scaling]
n = 300, 600
"""


def write_config(tmp_path, mode="run", counts="20, 15, 25", extra=""):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG.format(mode=mode, counts=counts) + extra)
    return str(path)


# --- particles ------------------------------------------------------------------

def test_accuracy_counts():
    q, x = generate_particles(ACCURACY_COUNTS, seed=0)
    assert x.shape == (912 + 640 + 1296, 3)
    assert set(np.unique(q)) == {-1.0, 1.0}


def test_generated_points_inside_domains():
    counts = (300, 300, 300)
    q, x = generate_particles(counts, seed=1)
    start = 0
    for l, n in enumerate(counts):
        pts = x[start:start + n] - DOMAIN_CENTERS[l]
        r = np.linalg.norm(pts, axis=1)
        assert np.all(r < domain_radius(pts[:, 2] / r, DOMAIN_A[l]))
        start += n
    assert np.all(x[:300, 2] > 0)
    assert np.all((x[300:600, 2] < 0) & (x[300:600, 2] > -1.2))
    assert np.all(x[600:, 2] < -1.2)


def test_generation_is_deterministic():
    a = generate_particles((50, 40, 30), seed=7, charges="random")
    b = generate_particles((50, 40, 30), seed=7, charges="random")
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    c = generate_particles((50, 40, 30), seed=8, charges="random")
    assert not np.array_equal(a[1], c[1])


def test_particle_file_roundtrip(tmp_path):
    q, x = generate_particles((5, 5, 5), seed=2)
    path = tmp_path / "p.txt"
    write_particles(path, q, x)
    q2, x2 = read_particles(path)
    np.testing.assert_array_equal(q2, q)
    np.testing.assert_array_equal(x2, x)


def test_split_counts():
    assert sum(split_counts(100000, ACCURACY_COUNTS)) == 100000
    assert split_counts(9, (1, 1, 1)) == (3, 3, 3)


# --- errors ---------------------------------------------------------------------

def test_identical_inputs_zero_error():
    ref = np.array([1.0, -2.0, 3.0])
    rep = compute_errors(ref, ref.copy())
    assert rep.err2[0] == 0.0 and rep.errmax[0] == 0.0


def test_uniform_scaling_error():
    ref = np.array([1.0, -2.0, 3.0, 0.5])
    rep = compute_errors(ref, 1.01 * ref)
    assert rep.err2[0] == pytest.approx(0.01, rel=1e-12)
    assert rep.errmax[0] == pytest.approx(0.01, rel=1e-12)


def test_random_perturbation_per_layer():
    rng = np.random.default_rng(0)
    ref = rng.normal(size=30)
    app = ref + 1e-3 * rng.normal(size=30)
    layer = np.repeat([0, 1, 2], 10)
    rep = compute_errors(ref, app, layer)
    for l in range(3):
        r, a = ref[layer == l], app[layer == l]
        assert rep.err2[l] == pytest.approx(np.linalg.norm(r - a) / np.linalg.norm(r))
        assert rep.errmax[l] == pytest.approx(np.max(np.abs(r - a) / np.abs(r)))


def test_zero_reference_raises():
    with pytest.raises(ZeroReference):
        compute_errors([1.0, 0.0], [1.0, 0.1])


# --- configuration and modes -------------------------------------------------------

def test_load_settings(tmp_path):
    s = load_settings(write_config(tmp_path), {"workers": 2, "seed": None})
    assert s.config.p == 6 and s.config.workers == 2 and s.seed == 3
    assert s.counts == (20, 15, 25)
    assert s.scaling_n == (300, 600)


def test_bad_config_values(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(write_config(tmp_path, mode="bogus"))
    with pytest.raises(ConfigError):
        load_settings(write_config(tmp_path, counts="1, 2"))
    with pytest.raises(ConfigError):
        load_settings(str(tmp_path / "missing.ini"))


def test_exit_code_config_error(tmp_path, capsys):
    assert main(["--config", write_config(tmp_path, counts="a, b, c")]) == 2
    assert main(["--config", str(tmp_path / "missing.ini")]) == 2


def test_exit_code_numerical_failure(tmp_path):
    # a tolerance below what the quadratures can reach fails numerically
    cfg = write_config(tmp_path, counts="3, 3, 3")
    text = open(cfg).read().replace("p = 6", "p = 6\ntol = 1e-30")
    open(cfg, "w").write(text)
    assert main(["--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_run_mode_writes_potentials(tmp_path):
    out = tmp_path / "out"
    assert main(["--config", write_config(tmp_path), "--out", str(out)]) == 0
    data = np.loadtxt(out / "potentials.txt")
    assert data.shape == (60, 7)
    np.testing.assert_allclose(data[:, 4], data[:, 5] + data[:, 6], rtol=1e-12, atol=1e-15)
    with open(out / "timings.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["part"] for r in rows} == {"free", "reaction"}


def test_input_file_mode(tmp_path):
    q, x = generate_particles((4, 4, 4), seed=5)
    write_particles(tmp_path / "pts.txt", q, x)
    cfg = write_config(tmp_path)
    text = open(cfg).read().replace("counts = 20, 15, 25\n", "counts = 20, 15, 25\ninput = pts.txt\n")
    open(cfg, "w").write(text)
    out = tmp_path / "o"
    assert main(["--config", cfg, "--out", str(out)]) == 0
    np.testing.assert_array_equal(np.loadtxt(out / "potentials.txt")[:, :4],
                                  np.column_stack([x, q]))


def test_verify_mode(tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["--config", write_config(tmp_path, mode="verify"), "--out", str(out)]) == 0
    with open(out / "errors.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert all(float(r["err2"]) < 1e-4 for r in rows)
    assert "Err2" in capsys.readouterr().out


def test_scaling_mode(tmp_path):
    out = tmp_path / "s"
    assert main(["--config", write_config(tmp_path), "--mode", "scaling", "--out", str(out)]) == 0
    with open(out / "scaling.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["N"]) for r in rows] == [300, 600]
    assert all(float(r["time_free"]) > 0 and float(r["time_react"]) > 0 for r in rows)


def test_fig3_mode(tmp_path):
    out = tmp_path / "f"
    assert main(["--config", write_config(tmp_path), "--mode", "fig3", "--out", str(out)]) == 0
    for name in ("fig3_u11.csv", "fig3_u22.csv"):
        with open(out / name) as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["p"]) for r in rows] == list(range(2, 13))
        first, last = rows[0], rows[-1]
        for k in ("relerr_r1", "relerr_r2", "relerr_r3"):
            assert float(last[k]) < float(first[k])


def test_deterministic_runs(tmp_path):
    cfg = write_config(tmp_path)
    main(["--config", cfg, "--out", str(tmp_path / "a")])
    main(["--config", cfg, "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "potentials.txt").read_text()
    b = (tmp_path / "b" / "potentials.txt").read_text()
    assert a == b
