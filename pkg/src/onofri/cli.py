"""Command-line experiment runner.

    onofri <command> [--n N] [--R R [R ...]] [--resolution K] [--seed S]
                     [--trials T] [--tol X] [--out DIR] [--config FILE]

Commands: identities, duality, deficit, lemma1, epsilon, fd-evolve, minimize,
corollary, sphere.  Each writes ``<command>.csv`` and ``<command>.jsonl`` (plus
SVG figures for epsilon, fd-evolve, duality and deficit) into the output
directory, prints one line per check, and exits 0 when every check passes,
1 when any check fails and 2 on usage or I/O errors.

Settings resolve as flags > config file (``key = value`` lines) > defaults;
the output directory defaults to $ONOFRI_OUT, then ``./onofri-out``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import plots
from .densities import ModelDensity, closed_form_suite, identity_laplacian_2d, identity_nlaplacian, theta
from .duality import basic_identity_suite, duality_suite, epsilon_sweep
from .functionals import (
    DensityFunction,
    GridFunction,
    corollary_check,
    corollary_field,
    onofri_deficit_2d,
    onofri_deficit_nd,
    random_admissible,
    random_field,
    random_sphere_field,
    sphere_onofri,
)
from .geometry import DiskGrid, RadialGrid, SphereGrid
from .pde import fd_evolve, minimize_onofri
from .transport import lemma1_check, random_radial_pair

__all__ = ["ExperimentConfig", "load_config_file", "build_parser", "run", "main"]

COMMANDS = ("identities", "duality", "deficit", "lemma1", "epsilon", "fd-evolve", "minimize",
            "corollary", "sphere")


# whole-space deficits are evaluated on a large ball holding compactly supported fields
COMMAND_DEFAULTS = {"deficit": {"R": (50.0,), "resolution": 256}}
DEFICIT_SUPPORT = 10.0


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    n: int = 2
    R: tuple = (1.0,)
    resolution: int = 128
    seed: int = 0
    trials: int = 20
    tol: float = 1e-8
    out: str = "onofri-out"
    t_final: float = 20.0
    dt: float = 0.01
    form: str = "literal"
    plots: bool = True

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.n < 2:
            raise UsageError(f"n must be >= 2, got {self.n}")
        if not self.R or any(not r > 0 for r in self.R):
            raise UsageError(f"every radius must be positive, got {self.R}")
        if self.resolution < 32:
            raise UsageError(f"resolution must be >= 32, got {self.resolution}")
        if self.trials < 0 or not self.tol > 0:
            raise UsageError("trials must be >= 0 and tol > 0")
        if self.form not in ("literal", "sharp"):
            raise UsageError(f"form must be 'literal' or 'sharp', got {self.form!r}")

    def header(self) -> dict:
        return asdict(self)


_CASTS = {
    "n": int, "resolution": int, "seed": int, "trials": int, "tol": float, "out": str,
    "t_final": float, "dt": float, "form": str,
    "R": lambda s: tuple(float(x) for x in s.replace(",", " ").split()),
    "plots": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
}


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CASTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _CASTS[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onofri", description="Numerical checks of Onofri-type inequalities.")
    p.add_argument("command", choices=COMMANDS)
    S = argparse.SUPPRESS
    p.add_argument("--n", type=int, default=S, help="dimension (default 2)")
    p.add_argument("--R", type=float, nargs="+", default=S, help="ball radius or radii (default 1)")
    p.add_argument("--resolution", type=int, default=S, help="radial nodes / cells (default 128)")
    p.add_argument("--seed", type=int, default=S, help="base random seed (default 0)")
    p.add_argument("--trials", type=int, default=S, help="random trials per radius (default 20)")
    p.add_argument("--tol", type=float, default=S, help="pass/fail tolerance (default 1e-8)")
    p.add_argument("--out", default=S, help="output directory (default $ONOFRI_OUT or ./onofri-out)")
    p.add_argument("--t-final", dest="t_final", type=float, default=S, help="fd-evolve end time (default 20)")
    p.add_argument("--dt", type=float, default=S, help="fd-evolve time step (default 0.01)")
    p.add_argument("--form", choices=("literal", "sharp"), default=S,
                   help="corollary gradient constant (default literal)")
    p.add_argument("--no-plots", dest="plots", action="store_false", default=S, help="skip SVG output")
    p.add_argument("--config", default=None, help="key = value configuration file")
    return p


def resolve_config(ns: argparse.Namespace, environ=None) -> ExperimentConfig:
    environ = os.environ if environ is None else environ
    values = dict(COMMAND_DEFAULTS.get(ns.command, {}))
    if environ.get("ONOFRI_OUT"):
        values["out"] = environ["ONOFRI_OUT"]
    if ns.config:
        values.update(load_config_file(ns.config))
    flags = {k: v for k, v in vars(ns).items() if k not in ("config", "command")}
    if "R" in flags:
        flags["R"] = tuple(flags["R"])
    values.update(flags)
    return ExperimentConfig(command=ns.command, **values)


@dataclass
class Report:
    """Collected rows and checks of one command, written by a single writer."""

    config: ExperimentConfig
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    figures: list = field(default_factory=list)

    def check(self, name: str, value: float, ok: bool):
        self.checks.append((name, float(value), bool(ok)))

    @property
    def ok(self) -> bool:
        return all(c[2] for c in self.checks)

    def write(self, out: Path):
        header = self.config.header()
        stem = self.config.command
        lines = [f"# {k}={header[k]}" for k in header]
        if self.rows:
            keys = list(self.rows[0])
            lines.append(",".join(keys))
            for row in self.rows:
                lines.append(",".join(_fmt(row.get(k)) for k in keys))
        (out / f"{stem}.csv").write_text("\n".join(lines) + "\n")
        records = [json.dumps({"config": header})]
        records += [json.dumps(row) for row in self.rows]
        records += [json.dumps({"check": n, "value": v, "pass": ok}) for n, v, ok in self.checks]
        (out / f"{stem}.jsonl").write_text("\n".join(records) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _seed_for(cfg: ExperimentConfig, k: int) -> list:
    return [cfg.seed, k]


def _cmd_identities(cfg: ExperimentConfig, rep: Report, out: Path):
    d = ModelDensity(cfg.n)
    for R in cfg.R:
        grid = RadialGrid.build(cfg.n, R, cfg.resolution)
        for row in closed_form_suite(R, d, grid) + basic_identity_suite(d, R, grid):
            rel = row.abs_error / max(1.0, abs(row.rhs))
            rep.rows.append(row.as_dict())
            rep.check(f"{row.identity_name}[R={R}]", rel, rel < cfg.tol)
        res = identity_nlaplacian(d, grid, analytic=True)
        rep.check(f"n_laplacian_log_mu[R={R}]", res.sup_residual, res.sup_residual < cfg.tol)
        if cfg.n == 2:
            res = identity_laplacian_2d(DiskGrid.build(R, cfg.resolution, 32), analytic=True)
            rep.check(f"laplacian_log_mu2[R={R}]", res.sup_residual, res.sup_residual < cfg.tol)


def _cmd_duality(cfg, rep, out):
    gaps = []
    for k, R in enumerate(cfg.R):
        reports = duality_suite(cfg.n, R, cfg.trials, _seed_for(cfg, k), cfg.resolution,
                                include_extremal=True)
        ext, rest = reports[0], reports[1:]
        rep.check(f"gap_at_extremal[R={R}]", ext.gap, abs(ext.gap) < 1e-6)
        for r in reports:
            rep.rows.append(r.as_dict())
        if rest:
            g = min(r.gap for r in rest)
            rep.check(f"min_gap[R={R}]", g, g >= -cfg.tol)
            c = max(max(abs(r.exp_residual), abs(r.mass_residual)) for r in rest)
            rep.check(f"max_constraint_residual[R={R}]", c, c < 1e-8)
        gaps += [r.gap for r in rest]
    if cfg.plots and gaps:
        rep.figures.append(plots.plot_histogram(gaps, out / "duality_gaps.svg", "duality gap",
                                                f"n={cfg.n}"))


def _cmd_deficit(cfg, rep, out):
    d = ModelDensity(cfg.n)
    vals = []
    for k, R in enumerate(cfg.R):
        grid = DiskGrid.build(R, cfg.resolution, cfg.resolution) if cfg.n == 2 else \
            RadialGrid.build(cfg.n, R, cfg.resolution)
        deficit = (lambda u: onofri_deficit_2d(u)) if cfg.n == 2 else (lambda u: onofri_deficit_nd(u, d))
        z = deficit(GridFunction.zeros(grid)).total
        rep.check(f"deficit_zero[R={R}]", z, abs(z) < 1e-12)
        for i, child in enumerate(np.random.SeedSequence(_seed_for(cfg, k)).spawn(cfg.trials)):
            u = random_field(grid, np.random.default_rng(child), support=DEFICIT_SUPPORT)
            res = deficit(u)
            rep.rows.append({"seed": cfg.seed, "trial": i, "n": cfg.n, "R": R, "deficit": res.total,
                             "dirichlet": res.dirichlet, "linear": res.linear, "log": res.log})
            vals.append(res.total)
        if cfg.trials:
            m = min(r["deficit"] for r in rep.rows if r["R"] == R)
            rep.check(f"min_deficit[R={R}]", m, m >= -cfg.tol)
    if cfg.plots and vals:
        rep.figures.append(plots.plot_histogram(vals, out / "deficit.svg", "Onofri deficit", f"n={cfg.n}"))


def _cmd_lemma1(cfg, rep, out):
    for k, R in enumerate(cfg.R):
        grid = RadialGrid.build(cfg.n, R, cfg.resolution)
        mu = DensityFunction.model(ModelDensity(cfg.n), grid)
        eq = lemma1_check(mu, mu, grid)
        rep.check(f"equality_case[R={R}]", eq.slack, abs(eq.slack) < 1e-8)
        slacks = []
        for i, child in enumerate(np.random.SeedSequence(_seed_for(cfg, k)).spawn(cfg.trials)):
            r = lemma1_check(*random_radial_pair(grid, np.random.default_rng(child)))
            rep.rows.append({"trial": i, **r.as_dict()})
            slacks.append(r.slack)
        if slacks:
            rep.check(f"min_slack[R={R}]", min(slacks), min(slacks) >= -1e-6)


def _cmd_epsilon(cfg, rep, out):
    d = ModelDensity(cfg.n)
    for R in cfg.R:
        grid = RadialGrid.build(cfg.n, R, cfg.resolution)
        sw = epsilon_sweep(DensityFunction.model(d, grid), R, d, label=f"mu_{cfg.n}")
        for e, g in zip(sw.eps, sw.G):
            rep.rows.append({"R": R, "eps": float(e), "G": float(g)})
        rel = abs(sw.eps_argmax / sw.eps_max - 1.0)
        rep.check(f"argmax_vs_closed_form[R={R}]", rel, rel < 1e-6)
        cf = abs(sw.eps_max / d.eps_max - 1.0)
        rep.check(f"closed_form_R_independent[R={R}]", cf, cf < 1e-7)
        top = float(np.max(sw.G) - (sw.eps_max * sw.A - sw.eps_max**d.m * sw.B))
        rep.check(f"max_dominates_samples[R={R}]", top, top <= 1e-10 * max(1.0, abs(np.max(sw.G))))
        if cfg.plots:
            rep.figures.append(plots.plot_epsilon(sw.eps, sw.G, sw.eps_max, out / f"epsilon_R{R:g}.svg",
                                                  rf"$n={cfg.n},\ R={R:g}$"))
    if cfg.n == 2:
        err = abs(d.eps_max - 4.0 * math.sqrt(math.pi))
        rep.check("eps_max_equals_4_sqrt_pi", err, err < 1e-10)


def _cmd_fd_evolve(cfg, rep, out):
    if cfg.n != 2:
        raise UsageError("fd-evolve is planar (n = 2)")
    for R in cfg.R:
        th = theta(R, ModelDensity(2))
        vol = math.pi * R * R
        tr = fd_evolve(lambda r: np.full_like(np.asarray(r, float), th / vol), R, cfg.t_final, cfg.dt,
                       n_cells=cfg.resolution)
        for row in zip(tr.t, tr.l1_distance, tr.J_value, tr.mass):
            rep.rows.append(dict(zip(("R", "t", "L1_distance", "J_value", "mass"), (R, *map(float, row)))))
        drift = float(np.max(np.abs(tr.mass - tr.mass[0])))
        rep.check(f"final_L1[R={R}]", tr.l1_distance[-1], tr.l1_distance[-1] < 1e-3)
        rep.check(f"mass_drift[R={R}]", drift, drift < 1e-10)
        dj = float(np.min(np.diff(tr.J_value))) if tr.J_value.size > 1 else 0.0
        rep.check(f"min_J_increment[R={R}]", dj, dj >= -1e-8)
        if cfg.plots:
            rep.figures.append(plots.plot_trajectory(tr.t, tr.l1_distance, out / f"fd_evolve_R{R:g}.svg",
                                                     f"uniform start, R={R:g}"))


def _cmd_minimize(cfg, rep, out):
    if cfg.n != 2:
        raise UsageError("minimize is planar (n = 2)")
    d = ModelDensity(2)
    for k, R in enumerate(cfg.R):
        grid = DiskGrid.build(R, cfg.resolution, cfg.resolution)
        for i, child in enumerate(np.random.SeedSequence(_seed_for(cfg, k)).spawn(cfg.trials)):
            st = minimize_onofri(R, d, random_field(grid, np.random.default_rng(child)))
            rep.rows.append({"R": R, "trial": i, **json.loads(st.to_json())})
            rep.check(f"final_norm[R={R},{i}]", st.final_norm, st.final_norm < 1e-3)
            rep.check(f"objective[R={R},{i}]", st.objective, -1e-8 <= st.objective <= 1e-6)
            rep.check(f"lambda[R={R},{i}]", st.lam, abs(st.lam - 1.0) < 1e-2)
            rep.check(f"el_residual[R={R},{i}]", st.residual, st.residual < 1e-3)


def _cmd_corollary(cfg, rep, out):
    d = ModelDensity(cfg.n)
    sharp = cfg.form == "sharp"
    for k, R in enumerate(cfg.R):
        grid = DiskGrid.build(R, cfg.resolution, cfg.resolution) if cfg.n == 2 else \
            RadialGrid.build(cfg.n, R, cfg.resolution)
        star = corollary_check(corollary_field(GridFunction.zeros(grid), d), R, d, sharp)
        rep.check(f"extremal_slack[R={R}]", star.slack, abs(star.slack) < 1e-6)
        slacks = []
        for i, child in enumerate(np.random.SeedSequence(_seed_for(cfg, k)).spawn(cfg.trials)):
            rng = np.random.default_rng(child)
            for kind, v in (("generic", random_field(grid, rng)),
                            ("constrained", corollary_field(random_admissible(grid, rng, d), d))):
                c = corollary_check(v, R, d, sharp)
                rep.rows.append({"R": R, "trial": i, "fields": kind, **json.loads(c.to_json())})
                # the sharp constant is derived under the exponential constraint only
                if not sharp or kind == "constrained":
                    slacks.append(c.slack)
        if slacks:
            rep.check(f"min_slack[R={R}]", min(slacks), min(slacks) >= -cfg.tol)


def _cmd_sphere(cfg, rep, out):
    grid = SphereGrid.build(max(16, cfg.resolution // 4))
    rng = np.random.default_rng(cfg.seed)
    z = sphere_onofri(np.zeros(grid.shape), grid)
    rep.check("J_zero", z, z == 0.0)
    vals, shifts = [], []
    for i in range(cfg.trials):
        u = random_sphere_field(grid, rng)
        J = sphere_onofri(u, grid)
        c = float(rng.uniform(-5, 5))
        shifts.append(abs(sphere_onofri(u + c, grid) - J))
        rep.rows.append({"trial": i, "J": J, "shift": c, "shift_error": shifts[-1]})
        vals.append(J)
    if vals:
        rep.check("min_J", min(vals), min(vals) >= -1e-6)
        rep.check("max_shift_error", max(shifts), max(shifts) < 1e-10)


_HANDLERS = {
    "identities": _cmd_identities, "duality": _cmd_duality, "deficit": _cmd_deficit,
    "lemma1": _cmd_lemma1, "epsilon": _cmd_epsilon, "fd-evolve": _cmd_fd_evolve,
    "minimize": _cmd_minimize, "corollary": _cmd_corollary, "sphere": _cmd_sphere,
}


def run(argv=None, environ=None, stdout=None) -> int:
    """Run one command; returns the process exit status."""
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(ns, environ)
    except (UsageError, OSError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"onofri: error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"onofri: error: output directory {out} is not writable: {exc}", file=sys.stderr)
        return 2
    rep = Report(cfg)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _HANDLERS[cfg.command](cfg, rep, out)
    except UsageError as exc:
        print(f"onofri: error: {exc}", file=sys.stderr)
        return 2
    try:
        rep.write(out)
    except OSError as exc:
        print(f"onofri: error: writing results failed: {exc}", file=sys.stderr)
        return 2
    for name, value, ok in rep.checks:
        print(f"{'PASS' if ok else 'FAIL'}  {cfg.command}:{name}  {value:.3e}", file=stdout)
    for fig in rep.figures:
        print(f"figure  {fig}", file=stdout)
    return 0 if rep.ok else 1


def main():  # pragma: no cover
    sys.exit(run())
