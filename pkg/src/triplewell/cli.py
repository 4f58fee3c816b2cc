"""Command line experiment runner.

Usage::

    twac <subcommand> CONFIG [--out DIR] [--seed N] [--threads N] [--set sec.key=value ...]

Configs are flat ``[section] key = value`` files. Every subcommand writes
its outputs into the output directory together with ``manifest.txt``,
which records the config hash, the seed, library versions and a SHA-256
per output file. Outputs carry no timestamps, so a rerun with the same
config and seed reproduces every byte.

Exit codes: 0 success, 2 validation or config errors, 3 convergence
failures, 64 usage errors.
"""

import argparse
import configparser
import csv
import hashlib
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_USAGE = 0, 2, 3, 64

SUBCOMMANDS = ("hetero", "metric", "angles", "solve", "blowdown", "diagnose", "partition",
               "compare-partitions", "probe")

PAIRS = ((0, 1), (0, 2), (1, 2))


class ConfigError(ValidationError):
    pass


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------
class ExperimentConfig:
    """Parsed config with typed accessors; missing keys fall back to defaults."""

    def __init__(self, parser, text, seed=None, out=None, threads=None):
        self.parser = parser
        self.text = text
        self.seed = int(seed if seed is not None else self.get("run", "seed", 0, int))
        self.out = Path(out if out is not None else self.get("run", "output", "twac-out", str))
        env = os.environ.get("TWAC_THREADS")
        t = threads if threads is not None else (int(env) if env else
                                                 self.get("run", "threads", 1, int))
        if t < 1:
            raise ConfigError("thread count must be at least 1")
        self.threads = t

    @property
    def hash(self):
        canon = []
        for sec in sorted(self.parser.sections()):
            for k in sorted(self.parser[sec]):
                canon.append(f"{sec}.{k}={self.parser[sec][k].strip()}")
        canon.append(f"run.seed={self.seed}")
        return hashlib.sha256("\n".join(canon).encode()).hexdigest()

    def get(self, section, key, default, cast=str):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key)
        try:
            return cast(raw.strip())
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc

    def floats(self, section, key, default=None):
        raw = self.get(section, key, None)
        if raw is None:
            return default
        try:
            return [float(x) for x in raw.replace(";", ",").split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc

    def potential(self):
        from .potential import from_config, symmetric_well

        if self.parser.has_section("potential"):
            return from_config(dict(self.parser["potential"]))
        return symmetric_well()

    def costs(self, pot=None):
        c = self.floats("junction", "costs")
        if c is not None:
            if len(c) != 3:
                raise ConfigError("[junction] costs needs three values c12, c13, c23")
            return tuple(c)
        from .geodesics import pairwise_costs

        return tuple(pairwise_costs(pot or self.potential(), n=self.get("metric", "n", 128, int)))

    def boundary(self):
        from .partitions import BoundaryData, three_arcs

        raw = self.get("partition", "boundary", None)
        max_k = self.get("partition", "max_k", 8, int)
        if raw is None:
            return three_arcs()
        return BoundaryData.from_text(raw, max_k=max_k)


def parse_config(path, overrides=()):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: missing [section] header") from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else "?"
        raise ConfigError(f"{path}: line {lineno}: cannot parse") from exc
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", "?")
        raise ConfigError(f"{path}: line {lineno}: {exc.message}") from exc
    for item in overrides:
        key, sep, value = item.partition("=")
        sec, dot, opt = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser.set(sec, opt, value)
    return parser, text


# --------------------------------------------------------------------------
# output writer and manifest
# --------------------------------------------------------------------------
class Writer:
    """Single writer for all artifacts of a run; records each file for the manifest."""

    def __init__(self, out):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.out / name

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])

    def text(self, name, body):
        self.path(name).write_text(body)

    def manifest(self, cfg, subcommand, status="ok"):
        import scipy

        lines = ["[manifest]", f"subcommand = {subcommand}", f"status = {status}",
                 f"config_sha256 = {cfg.hash}", f"seed = {cfg.seed}",
                 f"threads = {cfg.threads}", f"package_version = {__version__}",
                 f"python = {platform.python_version()}", f"numpy = {np.__version__}",
                 f"scipy = {scipy.__version__}", "", "[files]"]
        for name in self.files:
            digest = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
            lines.append(f"{name} = {digest}")
        (self.out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return x


def _pool_map(cfg, fn, items):
    items = list(items)
    if cfg.threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------
def cmd_hetero(cfg, w):
    from .geodesics import heteroclinic

    pot = cfg.potential()
    T = cfg.get("hetero", "T", 12.0, float)
    n = cfg.get("hetero", "n", 2048, int)
    profs = _pool_map(cfg, lambda p: heteroclinic(pot, *p, T=T, n=n), PAIRS)
    rows = []
    for (i, j), prof in zip(PAIRS, profs):
        d = prof.values[1:] - prof.values[:-1]
        mid = 0.5 * (prof.values[1:] + prof.values[:-1])
        fi = np.max(np.abs(0.5 * np.sum(d * d, 1) / prof.dt ** 2 - pot.W(mid)))
        rows.append((f"{i + 1}{j + 1}", prof.energy, prof.decay_rate, fi, prof.residual))
        w.csv(f"profile_{i + 1}{j + 1}.csv", ["t", "u1", "u2"],
              [(t, u[0], u[1]) for t, u in zip(prof.t, prof.values)])
    w.csv("hetero.csv", ["pair", "energy", "decay_rate", "first_integral_defect", "residual"],
          rows)


def cmd_metric(cfg, w):
    from .geodesics import metric_distance
    from .potential import triangle_status

    pot = cfg.potential()
    n = cfg.get("metric", "n", 128, int)
    paths = _pool_map(cfg, lambda p: metric_distance(pot, pot.wells[p[0]], pot.wells[p[1]], n=n),
                      PAIRS)
    costs = [p.length for p in paths]
    status = triangle_status(costs)
    w.csv("costs.csv", ["pair", "cost", "triangle"],
          [(f"{i + 1}{j + 1}", c, status) for (i, j), c in zip(PAIRS, costs)])
    for (i, j), p in zip(PAIRS, paths):
        w.csv(f"geodesic_{i + 1}{j + 1}.csv", ["u1", "u2"], [tuple(x) for x in p.points])


def cmd_angles(cfg, w):
    from .junction import junction_angles, surface_tensions

    costs = cfg.costs()
    ten = surface_tensions(*costs)
    ang = junction_angles(*costs)
    deg = np.degrees(ang)
    w.csv("angles.csv", ["alpha1_deg", "alpha2_deg", "alpha3_deg", "alpha1", "alpha2", "alpha3",
                         "t1", "t2", "t3"],
          [[f"{d:.10g}" for d in deg] + list(ang) + list(ten.t)])


def _network(cfg, pot=None):
    from .junction import surface_tensions
    from .partitions import solve_problem1

    pot = pot or cfg.potential()
    costs = cfg.costs(pot)
    b = cfg.boundary()
    ten = surface_tensions(*costs)
    return pot, costs, b, ten, solve_problem1(b, ten, seed=cfg.seed,
                                              restarts=cfg.get("partition", "restarts", 4, int))


def _load_field(cfg, section):
    from .solver import read_field

    path = cfg.get(section, "field", None) or cfg.get("run", "field", None)
    if path is None:
        raise ConfigError(f"[{section}] field = <path> is required")
    return read_field(path)


def cmd_solve(cfg, w):
    from .partitions import BoundaryData
    from .solver import disc_spec, energy, field_labels, network_field, relax, write_field, \
        write_pgm

    pot = cfg.potential()
    trace_path = cfg.get("solver", "trace", None)
    if trace_path is not None:
        # the trace file holds boundary data in the "start end label; ..." form
        text = Path(trace_path).read_text().strip()
        BoundaryData.from_text(text)
        if not cfg.parser.has_section("partition"):
            cfg.parser.add_section("partition")
        cfg.parser.set("partition", "boundary", text)
    pot, costs, b, ten, net = _network(cfg, pot)
    n = cfg.get("solver", "grid", 128, int)
    R = cfg.get("solver", "R", 16.0, float)
    bc = cfg.get("solver", "bc", "dirichlet", str)
    if bc not in ("dirichlet", "neumann"):
        raise ConfigError(f"[solver] bc must be dirichlet or neumann, not {bc!r}")
    radius = cfg.get("solver", "radius", 1.0, float)
    grid = disc_spec(n, radius=radius)
    f0 = network_field(net, b, pot, R, grid, bc=bc)
    f = relax(f0, pot, R, tol=cfg.get("solver", "tol", 1e-8, float),
              max_iter=cfg.get("solver", "max_iter", 200, int))
    write_field(f, w.path("field.twac"))
    write_pgm(field_labels(f, pot.wells), w.path("labels.pgm"))
    w.csv("solve.csv", ["grid", "R", "bc", "energy", "m0", "iterations", "residual"],
          [(n, R, bc, energy(f, pot, R), net.cost, f.info.get("iterations"),
            f.info.get("residual"))])
    hist = f.info.get("energy_history", [])
    w.csv("energy_history.csv", ["iteration", "energy"], list(enumerate(hist)))


def _radii(cfg, f):
    radii = cfg.floats("diagnostics", "radii")
    if radii is None:
        top = 0.95 * f.grid.radius
        radii = [top / 8, top / 4, top / 2, top]
    return radii


def cmd_blowdown(cfg, w):
    from .diagnostics import classify_blowdown

    pot = cfg.potential()
    f = _load_field(cfg, "blowdown")
    R = cfg.get("diagnostics", "R", 1.0, float)
    rep = classify_blowdown(f, pot, _radii(cfg, f), cfg.costs(pot),
                            margin=cfg.get("diagnostics", "margin", 0.2, float),
                            n_rot=cfg.get("diagnostics", "rotation_steps", 720, int), R=R)
    rep.to_csv(w.path("blowdown.csv"))
    w.text("blowdown.txt", rep.summary())
    rep.write_pgm(w.path("blowdown_fit.pgm"))


def cmd_diagnose(cfg, w):
    from . import diagnostics as D

    pot = cfg.potential()
    f = _load_field(cfg, "diagnose")
    R = cfg.get("diagnostics", "R", 1.0, float)
    radii = _radii(cfg, f)
    wt = D.wtilde_profile(f, pot, radii, R)
    ed = D.equipartition_defect(f, pot, radii, R)
    poho = [D.pohozaev_residual(f, pot, r, R) for r in radii]
    w.csv("diagnose.csv", ["radius", "wtilde", "equipartition_defect", "pohozaev_residual"],
          zip(radii, wt.values, ed.values, poho))
    w.csv("fits.csv", ["defect_exponent", "defect_exponent_upper95", "wtilde_tail_variation",
                       "wtilde_monotonicity_defect", "C3", "alpha"],
          [(ed.exponent, ed.upper95, wt.tail_variation, wt.monotonicity_defect, wt.C3,
            wt.alpha)])
    rho = cfg.get("diagnostics", "rho", radii[-1] / 2, float)
    cp = D.circle_profile(f, pot, rho, R)
    w.csv("circle.csv", ["theta", "u1", "u2"],
          [(t, u[0], u[1]) for t, u in zip(cp.theta, cp.values)])
    w.csv("circle_summary.csv", ["rho", "energy", "upper_half", "lower_half", "W0", "winding",
                                 "crossings"],
          [(cp.rho, cp.energy, cp.arc_energies[0], cp.arc_energies[1], cp.W0, cp.winding,
            " ".join(repr(float(c)) for c in cp.crossings))])
    w.csv("transitions.csv", ["angle", "pair", "sup_distance"],
          [(t["angle"], f"{t['pair'][0] + 1}{t['pair'][1] + 1}", t["sup_distance"])
           for t in cp.transitions])


def cmd_partition(cfg, w):
    from .partitions import multiway_cut_oracle, network_to_paths, network_to_text

    pot, costs, b, ten, net = _network(cfg)
    w.text("network.txt", network_to_text(net))
    w.csv("paths.csv", ["path"], [(p,) for p in network_to_paths(net)])
    row = [net.topology, net.cost, net.angle_defect]
    header = ["topology", "cost", "angle_defect"]
    if cfg.get("partition", "oracle", False, _bool):
        n = cfg.get("partition", "oracle_grid", 512, int)
        oc = multiway_cut_oracle(b, ten, n=n)
        header += ["oracle_cost", "relative_error"]
        row += [oc, (net.cost - oc) / oc]
    w.csv("partition.csv", header, [row])


def cmd_compare(cfg, w):
    from .junction import surface_tensions
    from .partitions import compare_partitions

    pot = cfg.potential()
    costs = cfg.costs(pot)
    deltas = cfg.floats("partition", "deltas", [1e-4, 4e-4, 1.6e-3, 6.4e-3])
    table = compare_partitions(cfg.boundary(), surface_tensions(*costs), deltas, seed=cfg.seed)
    table.to_csv(w.path("compare.csv"))
    w.csv("compare_summary.csv", ["fitted_exponent", "gamma", "all_below", "curvature_defect"],
          [(table.exponent, table.gamma, table.all_below, table.curvature_defect)])


def cmd_probe(cfg, w):
    from .solver import local_min_probe

    pot = cfg.potential()
    f = _load_field(cfg, "probe")
    R = cfg.get("probe", "R", cfg.get("solver", "R", 1.0, float), float)
    rep = local_min_probe(f, pot, R, trials=cfg.get("probe", "trials", 8, int),
                          amplitude=cfg.get("probe", "amplitude", 0.2, float), seed=cfg.seed,
                          tol=cfg.get("probe", "tol", 1e-8, float))
    w.csv("probe.csv", ["trial", "delta"], list(enumerate(rep.deltas)))
    w.csv("probe_summary.csv", ["min_delta", "area", "threshold", "consistent"],
          [(rep.min_delta, rep.area, rep.threshold, rep.consistent)])


def _bool(s):
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


COMMANDS = {"hetero": cmd_hetero, "metric": cmd_metric, "angles": cmd_angles,
            "solve": cmd_solve, "blowdown": cmd_blowdown, "diagnose": cmd_diagnose,
            "partition": cmd_partition, "compare-partitions": cmd_compare, "probe": cmd_probe}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    p = _Parser(prog="twac", description="Triple-well Allen-Cahn experiment runner")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default [run] output)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker count (fallback: TWAC_THREADS)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--grid", type=int)
    p.add_argument("--R", type=float)
    p.add_argument("--bc", choices=("neumann", "dirichlet"))
    p.add_argument("--trace")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    return p


def run(subcommand, config_path, overrides=(), out=None, seed=None, threads=None):
    """Run one subcommand; returns the exit status."""
    if subcommand not in COMMANDS:
        print(f"twac: unknown subcommand {subcommand!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        parser, text = parse_config(config_path, overrides)
        cfg = ExperimentConfig(parser, text, seed=seed, out=out, threads=threads)
        w = Writer(cfg.out)
        COMMANDS[subcommand](cfg, w)
        w.manifest(cfg, subcommand)
    except ValidationError as exc:
        print(f"twac {subcommand}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"twac {subcommand}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"twac {subcommand}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    for flag, key in (("grid", "solver.grid"), ("R", "solver.R"), ("bc", "solver.bc"),
                      ("trace", "solver.trace"), ("tol", "solver.tol"),
                      ("max_iter", "solver.max_iter")):
        val = getattr(args, flag)
        if val is not None:
            overrides.append(f"{key}={val}")
    return run(args.subcommand, args.config, overrides, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
