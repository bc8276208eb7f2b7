"""Command-line driver: configuration, particle generation, runs and reports.

A run is described by a plain-text configuration file::

    [medium]
    d = 0, -1.2
    eps = 1.0, 8.6, 20.5
    lam = 1.2, 0.5, 2.1

    [run]
    mode = verify
    p = 10
    leaf_capacity = 8
    theta = 0.4
    tol = 1e-13
    workers = 1
    seed = 0

    [particles]
    counts = 100, 100, 100
    # or: input = particles.txt

    [scaling]
    n = 25000, 100000, 400000

Modes
-----
run
    Potentials of the particles, written to ``potentials.txt``.
verify
    As ``run`` plus a brute-force reference and per-layer errors.
scaling
    Wall-clock time of the free-space and reaction parts for growing ``N``.
fig3
    Convergence in ``p`` of truncated reaction multipole expansions.
"""
import argparse
import configparser
import csv
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LayerPBError, NumericalError, ZeroReference
from .fmm import RunConfig, compute_all
from .medium import LayeredMedium
from .oracle import direct_potentials, direct_reaction
from .polarization import make_kernel, polarize, reaction_eval_me, reaction_p2m

MODES = ("verify", "scaling", "fig3", "run")

# irregular particle domains, one per layer of the three-layer test medium
DOMAIN_CENTERS = np.array([[0.0, 0.0, 0.6], [0.0, 0.0, -0.6], [0.0, 0.0, -1.8]])
DOMAIN_A = (0.1, 0.15, 0.05)
ACCURACY_COUNTS = (912, 640, 1296)

# reaction multipole convergence experiment
FIG3_SOURCE = np.array([0.625, 0.5, -0.1])
FIG3_TARGETS = np.array([[0.5, 0.625, -0.1], [0.5, 0.625, -0.6], [0.5, 0.625, -1.1]])
FIG3_CENTERS = {(1, 1): np.array([0.6, 0.6, -2.4]), (2, 2): np.array([0.6, 0.6, 0.2])}


def three_layer_medium():
    """Three-layer medium of the accuracy and scaling experiments."""
    return LayeredMedium([0.0, -1.2], [1.0, 8.6, 20.5], [1.2, 0.5, 2.1])


# ---------------------------------------------------------------------------
# Particles
# ---------------------------------------------------------------------------


def domain_radius(cos_theta, a):
    """Boundary ``r(theta) = 0.5 - a + (a/8)(35 cos^4 - 30 cos^2 + 3)``."""
    c2 = cos_theta * cos_theta
    return 0.5 - a + a / 8.0 * (35.0 * c2 * c2 - 30.0 * c2 + 3.0)


def _sample_domain(rng, n, center, a):
    out = np.empty((0, 3))
    while len(out) < n:
        pts = rng.uniform(-0.5, 0.5, (max(64, 2 * (n - len(out))), 3))
        r = np.linalg.norm(pts, axis=1)
        cos_theta = pts[:, 2] / np.maximum(r, 1e-300)
        keep = r < domain_radius(cos_theta, a)
        out = np.vstack([out, pts[keep]])
    return out[:n] + center


def generate_particles(counts, seed=0, charges="alternate"):
    """Uniform random particles in the irregular domains of the test medium.

    Parameters
    ----------
    counts : sequence of int
        Number of particles in each layer (at most three).
    seed : int
        Seed of the random generator; equal seeds give identical systems.
    charges : {"alternate", "random"}
        Charges ``+1, -1, +1, ...`` in particle order, or random signs.

    Returns
    -------
    q : ndarray of shape (N,)
    x : ndarray of shape (N, 3)
    """
    counts = [int(c) for c in counts]
    if len(counts) > len(DOMAIN_A) or any(c < 0 for c in counts):
        raise ConfigError("particle counts must be nonnegative, one per layer, at most three")
    rng = np.random.default_rng(seed)
    x = np.vstack([_sample_domain(rng, c, DOMAIN_CENTERS[l], DOMAIN_A[l])
                   for l, c in enumerate(counts)] or [np.zeros((0, 3))])
    n = x.shape[0]
    if charges == "alternate":
        q = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    elif charges == "random":
        q = rng.choice([-1.0, 1.0], n)
    else:
        raise ConfigError("charges must be 'alternate' or 'random'")
    return q, x


def read_particles(path):
    """Read ``x y z q`` lines; returns ``(q, x)``."""
    try:
        data = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read particle file {path}: {exc}") from exc
    if data.shape[1] != 4:
        raise ConfigError("particle file needs four columns: x y z q")
    return data[:, 3].copy(), data[:, :3].copy()


def write_particles(path, charges, positions):
    np.savetxt(path, np.column_stack([positions, charges]), fmt="%.17g")


def write_potentials(path, charges, positions, report):
    """Write ``x y z q phi_total phi_free phi_react`` per particle."""
    cols = np.column_stack([positions, charges, report.total, report.free, report.reaction])
    np.savetxt(path, cols, fmt="%.17g", header="x y z q phi_total phi_free phi_react")


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


@dataclass
class ErrorReport:
    """Per-layer errors of approximate potentials, plus run statistics.

    ``err2[l] = sqrt(sum |phi - phi~|^2 / sum |phi|^2)`` and
    ``errmax[l] = max |phi - phi~| / |phi|`` over the particles of layer ``l``.
    """

    err2: np.ndarray
    errmax: np.ndarray
    timings: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)


def compute_errors(reference, approx, layer=None):
    """Relative ``l2`` and maximum errors, per layer if ``layer`` is given.

    Raises
    ------
    ZeroReference
        If a reference value is zero.
    ValueError
        If the inputs differ in length.
    """
    ref = np.asarray(reference, dtype=float)
    app = np.asarray(approx, dtype=float)
    if ref.shape != app.shape:
        raise ValueError("reference and approximation differ in length")
    lay = np.zeros(ref.shape, dtype=int) if layer is None else np.asarray(layer)
    nl = int(lay.max()) + 1 if lay.size else 0
    err2 = np.full(nl, np.nan)
    errmax = np.full(nl, np.nan)
    for l in range(nl):
        i = lay == l
        if not np.any(i):
            continue
        r, a = ref[i], app[i]
        if np.any(r == 0):
            raise ZeroReference("relative maximum error needs nonzero reference values")
        err2[l] = np.sqrt(np.sum((r - a) ** 2) / np.sum(r ** 2))
        errmax[l] = np.max(np.abs(r - a) / np.abs(r))
    return ErrorReport(err2, errmax)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _floats(text, key):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from exc


def _ints(text, key):
    vals = _floats(text, key)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{key}: expected integers, got {text!r}")
    return [int(v) for v in vals]


@dataclass
class Settings:
    """Everything a CLI run needs."""

    medium: LayeredMedium
    config: RunConfig
    mode: str = "run"
    seed: int = 0
    counts: tuple = ACCURACY_COUNTS
    input: str = None
    charges: str = "alternate"
    scaling_n: tuple = (25000, 100000, 400000)


def load_settings(path, overrides=None):
    """Parse a configuration file; ``overrides`` replace ``[run]`` values.

    Raises
    ------
    ConfigError
        On unreadable files, unknown modes or invalid values.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    try:
        if cp.has_section("medium"):
            sec = cp["medium"]
            medium = LayeredMedium(_floats(sec["d"], "d"), _floats(sec["eps"], "eps"),
                                   _floats(sec["lam"], "lam"))
        else:
            medium = three_layer_medium()
        run = dict(cp["run"]) if cp.has_section("run") else {}
        run.update({k: str(v) for k, v in overrides.items()})
        mode = run.get("mode", "run")
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        config = RunConfig(p=int(run.get("p", 10)),
                           leaf_capacity=int(run.get("leaf_capacity", 40)),
                           tol=float(run.get("tol", 1e-13)),
                           workers=int(run.get("workers", 1)),
                           theta=float(run.get("theta", 0.4)))
        seed = int(run.get("seed", 0))
        parts = cp["particles"] if cp.has_section("particles") else {}
        counts = tuple(_ints(parts["counts"], "counts")) if "counts" in parts else ACCURACY_COUNTS
        if len(counts) != medium.n_layers:
            raise ConfigError("need one particle count per layer")
        charges = parts.get("charges", "alternate")
        inp = parts.get("input")
        if inp is not None and not os.path.isabs(inp):
            inp = os.path.join(os.path.dirname(os.path.abspath(path)), inp)
        scal = cp["scaling"] if cp.has_section("scaling") else {}
        scaling_n = tuple(_ints(scal["n"], "n")) if "n" in scal else (25000, 100000, 400000)
    except ConfigError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return Settings(medium, config, mode, seed, counts, inp, charges, scaling_n)


# ---------------------------------------------------------------------------
# Modes
# ---------------------------------------------------------------------------


def _particles(settings):
    if settings.input is not None:
        return read_particles(settings.input)
    return generate_particles(settings.counts, settings.seed, settings.charges)


def _write_timings(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["part", "seconds", "p2m", "m2m", "m2l", "l2l", "l2p", "near_pairs", "tables"])
        for part, secs in report.timings.items():
            c = report.counts[part]
            w.writerow([part, f"{secs:.6f}", c.p2m, c.m2m, c.m2l, c.l2l, c.l2p,
                        c.near_pairs, c.tables])


def run_mode(settings, out):
    """Compute potentials and write them with a timing report."""
    q, x = _particles(settings)
    rep = compute_all(settings.medium, q, x, settings.config)
    write_potentials(os.path.join(out, "potentials.txt"), q, x, rep)
    _write_timings(os.path.join(out, "timings.csv"), rep)
    return rep


def verify_mode(settings, out, stream=None):
    """Compare the FMM against the brute-force reference; returns the errors."""
    q, x = _particles(settings)
    rep = run_mode(settings, out)
    tot, _, _ = direct_potentials(settings.medium, q, x, tol=settings.config.tol)
    err = compute_errors(tot, rep.total, rep.layer)
    err.timings, err.counts = rep.timings, rep.counts
    with open(os.path.join(out, "errors.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "n", "err2", "errmax"])
        for l in range(err.err2.size):
            w.writerow([l, int(np.sum(rep.layer == l)), f"{err.err2[l]:.6e}", f"{err.errmax[l]:.6e}"])
    print(f"{'layer':>5} {'N':>6} {'Err2':>12} {'Errmax':>12}", file=stream)
    for l in range(err.err2.size):
        print(f"{l:>5} {int(np.sum(rep.layer == l)):>6} {err.err2[l]:12.3e} {err.errmax[l]:12.3e}",
              file=stream)
    return err


def split_counts(n, weights):
    """Split ``n`` particles across layers in proportion to ``weights``."""
    w = np.asarray(weights, dtype=float)
    c = np.floor(n * w / w.sum()).astype(int)
    c[np.argmax(w)] += n - c.sum()
    return tuple(int(v) for v in c)


def scaling_mode(settings, out, stream=None):
    """Time the free-space and reaction parts for each ``N``; returns the rows."""
    rows = []
    for n in settings.scaling_n:
        q, x = generate_particles(split_counts(n, settings.counts), settings.seed, settings.charges)
        rep = compute_all(settings.medium, q, x, settings.config)
        rows.append((n, rep.timings["free"], rep.timings["reaction"]))
        print(f"N={n:>8d} free {rows[-1][1]:9.3f} s reaction {rows[-1][2]:9.3f} s", file=stream)
    with open(os.path.join(out, "scaling.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "time_free", "time_react"])
        for n, tf, tr in rows:
            w.writerow([n, f"{tf:.6f}", f"{tr:.6f}"])
    return rows


def fig3_errors(medium, ab, ps=range(2, 13), S=0.5, tol=1e-13):
    """Relative errors of the truncated reaction multipole expansion.

    The middle-layer source ``FIG3_SOURCE`` is polarized for component
    ``(1, 1, a, b)``, expanded about ``FIG3_CENTERS[ab]`` and evaluated at
    the three ``FIG3_TARGETS``.  Returns an array of shape ``(len(ps), 3)``.
    """
    kernel = make_kernel(medium, 1, 1, *ab)
    pol = polarize(medium, 1.0, FIG3_SOURCE, 1, 1, *ab).polarized
    center = FIG3_CENTERS[ab]
    ref = np.array([direct_reaction(medium, r, FIG3_SOURCE, 1, 1, *ab, tol=tol)
                    for r in FIG3_TARGETS])
    out = np.empty((len(ps), len(FIG3_TARGETS)))
    for i, p in enumerate(ps):
        exp = reaction_p2m(kernel, [1.0], pol[None], center, S, p)
        out[i] = np.abs(reaction_eval_me(kernel, exp, FIG3_TARGETS, tol) - ref) / np.abs(ref)
    return out


def fig3_mode(settings, out, stream=None):
    """Write ``fig3_u11.csv`` and ``fig3_u22.csv``; returns the error arrays."""
    ps = list(range(2, 13))
    res = {}
    for ab in ((1, 1), (2, 2)):
        err = fig3_errors(settings.medium, ab, ps, tol=settings.config.tol)
        res[ab] = err
        name = f"fig3_u{ab[0]}{ab[1]}.csv"
        with open(os.path.join(out, name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "relerr_r1", "relerr_r2", "relerr_r3"])
            for p, row in zip(ps, err):
                w.writerow([p] + [f"{v:.6e}" for v in row])
        print(f"{name}: p={ps[-1]} errors " + " ".join(f"{v:.2e}" for v in err[-1]), file=stream)
    return res


def build_parser():
    ap = argparse.ArgumentParser(prog="layerpb",
                                 description="FMM for screened charges in layered media")
    ap.add_argument("--config", required=True, help="configuration file")
    ap.add_argument("--mode", choices=MODES, help="override the configured mode")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, help="override the random seed")
    ap.add_argument("--workers", type=int, help="override the number of worker threads")
    return ap


def main(argv=None):
    """Entry point; returns the process exit status."""
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        settings = load_settings(args.config, {"mode": args.mode, "seed": args.seed,
                                               "workers": args.workers})
        os.makedirs(args.out, exist_ok=True)
        if settings.mode == "run":
            run_mode(settings, args.out)
        elif settings.mode == "verify":
            verify_mode(settings, args.out)
        elif settings.mode == "scaling":
            scaling_mode(settings, args.out)
        else:
            fig3_mode(settings, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (LayerPBError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2
    print(f"done in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
