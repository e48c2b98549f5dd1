"""Batch front end: ``helmfosls <experiment> --config <file> [--out dir] [--seed n]``.

The config is an INI file (see README for the grammar).  Each experiment
writes CSV tables whose rows carry the config hash, plus ``run_metadata.json``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from .assembly import assemble_system
from .diagnostics import compute_inf_sup, compute_precond_condition
from .driver import PrecondConfig, exact_errors, run_adaptive, solve_on_mesh
from .errors import HelmFoslsError
from .femspace import build_test_space, build_trial_space
from .mesh import MeshHierarchy, build_initial_mesh, write_mesh
from .minres import RESIDUAL_NORM, StoppingPolicy
from .precond import build_precond
from .problems import make_problem

log = logging.getLogger("helmfosls")

EXPERIMENTS = ("pollution", "condition", "solve", "adaptive")
PROBLEM_NAMES = ("unit_square", "non_trapping", "trapping", "custom")
CRITERIA = {"1": "residual_drop", "2": "algebraic_vs_total", "strict": "algebraic_vs_total_strict"}


class ConfigError(HelmFoslsError):
    pass


@dataclass
class RunConfig:
    problem: str = "unit_square"
    mesh: Optional[str] = None
    kind: str = "plane_wave"
    angle: Optional[float] = None
    kappas: list = field(default_factory=lambda: [10.0])
    p: int = 1
    p_tildes: list = field(default_factory=lambda: [3])
    refinement: str = "uniform"
    levels: int = 4
    min_level: int = 0
    theta: float = 0.6
    dof_cap: int = 10_000
    max_steps: int = 50
    precond_mode: str = "multigrid"
    m_schedule: Optional[list] = None
    condense: Optional[bool] = None
    schur: str = "chebyshev"
    eps_target: float = 0.1
    restrict: bool = True
    criteria: list = field(default_factory=lambda: ["2"])
    factor: float = 1e8
    fraction: float = 0.5
    max_iter: Optional[int] = None
    prolongate: bool = True
    carry_gamma: bool = True
    seed: int = 0
    out: str = "results"

    def validate(self):
        if self.problem not in PROBLEM_NAMES:
            raise ConfigError(f"problem must be one of {PROBLEM_NAMES}, got {self.problem!r}")
        if self.problem == "custom" and not self.mesh:
            raise ConfigError("a custom problem needs 'mesh = <file>'")
        if not self.kappas or any(not k > 0 for k in self.kappas):
            raise ConfigError("kappa values must be positive")
        if self.p < 1 or any(pt < 1 for pt in self.p_tildes):
            raise ConfigError("polynomial degrees must be at least 1")
        if self.refinement not in ("uniform", "adaptive"):
            raise ConfigError("refinement mode must be uniform or adaptive")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta must lie in (0, 1]")
        if not 0 <= self.min_level <= self.levels:
            raise ConfigError("need 0 <= min_level <= levels")
        if self.precond_mode not in ("multigrid", "two_grid"):
            raise ConfigError("precond mode must be multigrid or two_grid")
        if self.schur not in ("chebyshev", "identity"):
            raise ConfigError("schur must be chebyshev or identity")
        if not 0.0 < self.eps_target < 1.0:
            raise ConfigError("eps_target must lie in (0, 1)")
        if not 0.0 < self.fraction < 1.0:
            raise ConfigError("fraction must lie in (0, 1)")
        bad = [c for c in self.criteria if c not in CRITERIA]
        if bad or not self.criteria:
            raise ConfigError(f"criteria must be drawn from {sorted(CRITERIA)}, got {bad}")
        for pt in self.p_tildes:
            if pt < self.p + 2:
                log.warning("p_tilde=%d < p+2=%d: expect pollution (gamma well below 1)",
                            pt, self.p + 2)
        return self

    def as_dict(self):
        return asdict(self)

    def hash(self):
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def precond(self):
        return PrecondConfig(self.precond_mode, self.m_schedule, self.condense, self.schur,
                             self.eps_target, self.restrict, self.seed)

    def policy(self, criterion):
        kind = CRITERIA[criterion]
        if kind == "residual_drop":
            return StoppingPolicy.residual_drop(self.factor, max_iter=self.max_iter)
        if kind == "algebraic_vs_total_strict":
            return StoppingPolicy.strict(max_iter=self.max_iter)
        return StoppingPolicy.algebraic_vs_total(self.fraction, max_iter=self.max_iter)

    def initial_mesh(self):
        return build_initial_mesh(self.mesh if self.problem == "custom" else self.problem)

    def data(self, kappa):
        return make_problem(self.problem, kappa, self.angle, self.kind)


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _ints(s):
    return [int(x) for x in s.replace(",", " ").split()]


def _opt(sec, key, conv, default):
    if sec is None or key not in sec or not sec[key].strip():
        return default
    return conv(sec[key].strip())


def _bool(s):
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _tri(s):
    return None if s.lower() == "auto" else _bool(s)


def parse_config(text, base_dir=None):
    """RunConfig from INI text; relative mesh paths resolve against ``base_dir``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {"problem", "refinement", "precond", "solver", "run"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    g = {s: (cp[s] if cp.has_section(s) else None) for s in known}
    d = RunConfig()
    try:
        pr = g["problem"]
        d.problem = _opt(pr, "name", str, d.problem)
        d.mesh = _opt(pr, "mesh", str, d.mesh)
        if d.mesh and base_dir is not None and not Path(d.mesh).is_absolute():
            d.mesh = str(Path(base_dir) / d.mesh)
        d.kind = _opt(pr, "kind", str, d.kind)
        d.angle = _opt(pr, "angle", float, d.angle)
        d.kappas = _opt(pr, "kappa", _floats, d.kappas)
        d.p = _opt(pr, "p", int, d.p)
        d.p_tildes = _opt(pr, "p_tilde", _ints, d.p_tildes)
        rf = g["refinement"]
        d.refinement = _opt(rf, "mode", str, d.refinement)
        d.levels = _opt(rf, "levels", int, d.levels)
        d.min_level = _opt(rf, "min_level", int, d.min_level)
        d.theta = _opt(rf, "theta", float, d.theta)
        d.dof_cap = _opt(rf, "dof_cap", int, d.dof_cap)
        d.max_steps = _opt(rf, "max_steps", int, d.max_steps)
        pc = g["precond"]
        d.precond_mode = _opt(pc, "mode", str, d.precond_mode)
        d.m_schedule = _opt(pc, "m_schedule", _ints, d.m_schedule)
        d.condense = _opt(pc, "condense", _tri, d.condense)
        d.schur = _opt(pc, "schur", str, d.schur)
        d.eps_target = _opt(pc, "eps_target", float, d.eps_target)
        d.restrict = _opt(pc, "restrict", _bool, d.restrict)
        sv = g["solver"]
        d.criteria = _opt(sv, "criteria", lambda s: s.replace(",", " ").split(), d.criteria)
        d.factor = _opt(sv, "factor", float, d.factor)
        d.fraction = _opt(sv, "fraction", float, d.fraction)
        d.max_iter = _opt(sv, "max_iter", int, d.max_iter)
        d.prolongate = _opt(sv, "prolongate", _bool, d.prolongate)
        d.carry_gamma = _opt(sv, "carry_gamma", _bool, d.carry_gamma)
        rn = g["run"]
        d.seed = _opt(rn, "seed", int, d.seed)
        d.out = _opt(rn, "out", str, d.out)
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return d.validate()


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path, columns, rows, config_hash):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns) + ["config_hash"])
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns] + [config_hash])


def _hierarchy(cfg, levels=None):
    return MeshHierarchy.from_initial(cfg.initial_mesh()).uniform(cfg.levels if levels is None else levels)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

POLLUTION_COLUMNS = ("kappa", "p", "p_tilde", "level", "dofs_U", "value", "method")
CONDITION_COLUMNS = ("kappa", "p", "p_tilde", "mode", "level", "dofs_U", "dofs_V", "value",
                     "lambda_min", "lambda_max", "method")
SOLVE_COLUMNS = ("kappa", "p", "p_tilde", "criterion", "level", "dofs_U", "dofs_V", "iterations",
                 "converged", "stop_reason", "estimator", "gamma", "err_u", "err_boosted")
HISTORY_COLUMNS = ("kappa", "criterion", "level", "k", "residual", "estimator", "algebraic",
                   "gamma", "ritz_negative")
ADAPTIVE_COLUMNS = ("kappa", "p", "p_tilde", "mode", "step", "n_triangles", "dofs_U", "dofs_V",
                    "dofs", "h_max", "iterations", "estimator", "algebraic", "algebraic_ratio",
                    "gamma", "err_u", "err_boosted", "patch_visits", "stop_reason")


def run_pollution(cfg, out, h):
    files = []
    for pt in cfg.p_tildes:
        rows = []
        for kappa in cfg.kappas:
            data = cfg.data(kappa)
            hier = _hierarchy(cfg)
            for lvl in range(cfg.min_level, cfg.levels + 1):
                m = hier[lvl]
                system = assemble_system(build_trial_space(m, cfg.p), build_test_space(m, pt), data)
                g = compute_inf_sup(system)
                rows.append({"kappa": kappa, "p": cfg.p, "p_tilde": pt, "level": lvl,
                             "dofs_U": system.n_trial, "value": g.value, "method": g.method})
                log.info("pollution kappa=%g p_tilde=%d level=%d gamma=%.6f", kappa, pt, lvl, g.value)
        path = out / f"pollution_ptilde{pt}.csv"
        write_csv(path, POLLUTION_COLUMNS, rows, h)
        files.append(path)
    return files


def run_condition(cfg, out, h):
    rows = []
    for kappa in cfg.kappas:
        for pt in cfg.p_tildes:
            hier = _hierarchy(cfg)
            for lvl in range(max(cfg.min_level, 1), cfg.levels + 1):
                sub = hier.sub(0, lvl + 1)
                tree = build_precond(sub, kappa, pt, cfg.m_schedule, cfg.precond_mode, cfg.condense,
                                     cfg.restrict)
                M = tree.levels[-1].M
                cond, lmin, lmax = compute_precond_condition(M, tree, seed=cfg.seed)
                rows.append({"kappa": kappa, "p": cfg.p, "p_tilde": pt, "mode": cfg.precond_mode,
                             "level": lvl, "dofs_U": 3 * build_trial_space(hier[lvl], cfg.p).n_scalar,
                             "dofs_V": M.shape[0], "value": cond.value, "lambda_min": lmin,
                             "lambda_max": lmax, "method": cond.method})
                log.info("condition kappa=%g p_tilde=%d level=%d cond=%.4f", kappa, pt, lvl, cond.value)
    path = out / "condition.csv"
    write_csv(path, CONDITION_COLUMNS, rows, h)
    return [path]


def run_solve(cfg, out, h):
    rows, hist = [], []
    pt = cfg.p_tildes[0]
    for kappa in cfg.kappas:
        data = cfg.data(kappa)
        hier = _hierarchy(cfg)
        for lvl in range(cfg.min_level, cfg.levels + 1):
            sub = hier.sub(0, lvl + 1)
            system = None
            for crit in cfg.criteria:
                sol = solve_on_mesh(sub, data, cfg.p, pt, cfg.precond(), cfg.policy(crit), system=system)
                system = sol.system
                rep = sol.report
                row = {"kappa": kappa, "p": cfg.p, "p_tilde": pt, "criterion": crit, "level": lvl,
                       "dofs_U": sol.trial.n_dofs, "dofs_V": sol.test.n_dofs,
                       "iterations": rep.iterations, "converged": rep.converged,
                       "stop_reason": rep.stop_reason, "gamma": rep.gamma,
                       "estimator": rep.records[-1].estimator if rep.records else None}
                if data.has_exact:
                    e = exact_errors(sol, data=data)
                    row["err_u"], row["err_boosted"] = e["err_u"], e["err_boosted"]
                rows.append(row)
                for r in rep.records:
                    hist.append({"kappa": kappa, "criterion": crit, "level": lvl, "k": r.k,
                                 "residual": r.residual, "estimator": r.estimator,
                                 "algebraic": r.algebraic, "gamma": r.gamma,
                                 "ritz_negative": r.ritz_negative})
                log.info("solve kappa=%g level=%d criterion=%s iterations=%d", kappa, lvl, crit,
                         rep.iterations)
    p1, p2 = out / "solve.csv", out / "solve_history.csv"
    write_csv(p1, SOLVE_COLUMNS, rows, h)
    write_csv(p2, HISTORY_COLUMNS, hist, h)
    return [p1, p2]


def run_adaptive_experiment(cfg, out, h):
    rows = []
    files = []
    pt = cfg.p_tildes[0]
    for kappa in cfg.kappas:
        data = cfg.data(kappa)
        run = run_adaptive(cfg.initial_mesh(), data, cfg.p, pt, cfg.refinement, cfg.theta,
                           cfg.dof_cap, cfg.max_steps, cfg.precond(), cfg.policy(cfg.criteria[0]),
                           cfg.prolongate, cfg.carry_gamma)
        for r in run.records:
            rows.append({"kappa": kappa, "p": cfg.p, "p_tilde": pt, "mode": cfg.refinement,
                         "step": r.step, "n_triangles": r.n_triangles, "dofs_U": r.dofs_U,
                         "dofs_V": r.dofs_V, "dofs": r.dofs, "h_max": r.h_max,
                         "iterations": r.iterations, "estimator": r.estimator,
                         "algebraic": r.algebraic,
                         "algebraic_ratio": (r.algebraic / r.estimator
                                             if r.algebraic is not None and r.estimator else None),
                         "gamma": r.gamma, "err_u": r.err_u, "err_boosted": r.err_boosted,
                         "patch_visits": r.patch_visits, "stop_reason": r.stop_reason})
        mpath = out / f"final_mesh_kappa{kappa:g}.msh"
        write_mesh(run.hierarchy.finest, mpath)
        files.append(mpath)
        log.info("adaptive kappa=%g steps=%d final dofs=%d estimator=%.4e", kappa,
                 len(run.records), run.records[-1].dofs, run.records[-1].estimator)
    path = out / f"adaptive_{cfg.refinement}.csv"
    write_csv(path, ADAPTIVE_COLUMNS, rows, h)
    return [path] + files


RUNNERS = {"pollution": run_pollution, "condition": run_condition, "solve": run_solve,
           "adaptive": run_adaptive_experiment}


def run_experiment(kind, cfg, out=None):
    """Run one experiment; returns the list of files written."""
    if kind not in RUNNERS:
        raise ConfigError(f"unknown experiment {kind!r}; choose from {EXPERIMENTS}")
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    t0 = time.perf_counter()
    files = RUNNERS[kind](cfg, out, h)
    meta = {
        "experiment": kind,
        "config": cfg.as_dict(),
        "config_hash": h,
        "seed": cfg.seed,
        "conventions": {
            "dofs": "dofs_U = 3 x scalar Lagrange nodes; dofs_V = constrained test DoFs",
            "residual_norm": RESIDUAL_NORM,
            "dorfler": "squared estimator sums, greedy, ties by triangle id",
            "condition": "lambda_max / lambda_min of Q_V^{-1} M_V",
            "inf_sup": "sqrt(lambda_min) of B^H M_V^{-1} B z = lambda M_U z",
        },
        "versions": {"python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "files": [p.name for p in files],
        "wall_seconds": time.perf_counter() - t0,
    }
    (out / "run_metadata.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")
    return files


def build_parser():
    ap = argparse.ArgumentParser(prog="helmfosls", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="INI run configuration")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--seed", type=int, help="seed for randomized start vectors")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        files = run_experiment(args.experiment, cfg, args.out)
    except (HelmFoslsError, OSError, ValueError) as exc:
        print(f"helmfosls: error: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
