"""Command-line front end.

Every command reads one JSON config, derives all randomness from its master
seed, writes CSV/JSON outputs atomically into ``--out`` and finishes with a
``manifest.json``.  Outputs never depend on ``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import __version__, rng
from .envmodel import DEFAULT_MAX_SITES, Environment, PerturbationSpec, classify, moments
from .errors import BudgetExceeded, DegenerateWindow, Divergent, NotErgodic, RwreError, SpecError, TailUnbounded
from .fits import FitMode
from .hittime import envelope_bounds_all, profile, write_profile_csv
from .parallel import ordered_map
from .speedlab import Budget, envelope_stats, fit_growth, growth_target, theorem_suite
from .stationary import decay_fit, stationary_exact, write_stationary_csv
from .walker import geometric_schedule, simulate, write_checkpoints_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_BUDGET = 4

COMMANDS = ("env", "hit", "walk", "stationary", "fit", "suite")


@dataclass
class ExperimentConfig:
    spec: PerturbationSpec
    master_seed: int = 0
    n_max: int = 10_000
    steps: int = 0
    replicates: int = 1
    env_seeds: int = 1
    outputs: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("n_max", "env_seeds", "replicates"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise SpecError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.steps, int) or isinstance(self.steps, bool) or self.steps < 0:
            raise SpecError(f"steps must be a nonnegative integer, got {self.steps!r}")
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed <= rng.MASK64:
            raise SpecError("master_seed must be an unsigned 64-bit integer")
        if not isinstance(self.options, dict):
            raise SpecError("options must be an object")
        cap = self.options.get("max_sites", DEFAULT_MAX_SITES)
        if not isinstance(cap, int) or isinstance(cap, bool) or cap < 1:
            raise SpecError(f"options.max_sites must be a positive integer, got {cap!r}")

    def to_dict(self) -> dict:
        d = {
            "spec": self.spec.to_dict(),
            "master_seed": self.master_seed,
            "n_max": self.n_max,
            "steps": self.steps,
            "replicates": self.replicates,
            "env_seeds": self.env_seeds,
            "options": self.options,
        }
        if self.outputs is not None:
            d["outputs"] = self.outputs
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict) or "spec" not in d:
            raise SpecError("config must be an object with a 'spec' entry")
        known = {"spec", "master_seed", "n_max", "steps", "replicates", "env_seeds", "outputs", "options"}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown config keys: {sorted(extra)}")
        kw = {k: d[k] for k in known - {"spec"} if k in d}
        return cls(spec=PerturbationSpec.from_dict(d["spec"]), **kw)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def env_seed(self, i: int) -> int:
        return rng.derive_seed(self.master_seed, "env", i)

    def walk_seed(self, i: int) -> int:
        return rng.derive_seed(self.master_seed, "walk", i)

    def environment(self, i: int) -> Environment:
        """Environment ``i``; ``options.max_sites`` caps how many sites it may materialise."""
        return Environment(self.spec, self.env_seed(i), max_sites=self.options.get("max_sites", DEFAULT_MAX_SITES))


# ---------------------------------------------------------------- io


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


class Outputs:
    """Directory writer that only ever exposes complete files."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self.written: list[str] = []

    def _commit(self, name: str, writer) -> None:
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.root)
        os.close(fd)
        try:
            writer(tmp)
            os.replace(tmp, os.path.join(self.root, name))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.written.append(name)

    def text(self, name: str, content: str) -> None:
        def w(path):
            with open(path, "w", newline="") as fh:
                fh.write(content)

        self._commit(name, w)

    def json(self, name: str, obj) -> None:
        self.text(name, _dump(obj))

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)
        self.text(name, buf.getvalue())

    def via(self, name: str, fn, *args) -> None:
        """Write with a ``fn(path, *args)`` style exporter."""
        self._commit(name, lambda path: fn(path, *args))


def _f(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- commands


def _env_job(job):
    cfg, i = job
    env = cfg.environment(i)
    p = env.probs(cfg.n_max)
    xi, y = env.draws(0, cfg.n_max + 1)
    return i, env.seed, np.array(p), xi, y


def cmd_env(cfg: ExperimentConfig, out: Outputs, workers: int) -> dict:
    results = ordered_map(_env_job, [(cfg, i) for i in range(cfg.env_seeds)], workers)
    for i, seed, p, xi, y in results:
        lr = np.log(p) - np.log1p(-p)
        rows = [
            [n, _f(p[n]), "" if n == 0 else _f(xi[n]), "" if n == 0 else _f(y[n]), "" if n == 0 else _f(lr[n])]
            for n in range(len(p))
        ]
        out.csv(f"env_{i}.csv", ["n", "p", "xi", "y", "log_ratio"], rows)
        out.text(f"env_{i}.json", cfg.environment(i).to_json() + "\n")
    m = moments(cfg.spec)
    return {
        "command": "env",
        "regime": classify(cfg.spec).value,
        "moments": {
            "lambda": m.lam,
            "mean_zeta": m.mean_zeta,
            "var_zeta": m.var_zeta,
            "s2": m.s2,
            "sigma2": m.sigma2,
            "mean_y": m.mean_y,
            "symmetric_balance": m.symmetric_balance,
        },
        "clamp_free_from": cfg.spec.clamp_free_from(),
        "environments": [{"index": r[0], "seed": r[1]} for r in results],
    }


def _hit_job(job):
    cfg, i = job
    env = cfg.environment(i)
    return env, profile(env, cfg.n_max)


def cmd_hit(cfg: ExperimentConfig, out: Outputs, workers: int) -> dict:
    results = ordered_map(_hit_job, [(cfg, i) for i in range(cfg.env_seeds)], workers)
    envs = []
    for i, (env, prof) in enumerate(results):
        out.via(f"profile_{i}.csv", write_profile_csv, env, prof)
        lower, upper, _ = envelope_bounds_all(env, cfg.n_max)
        envs.append(
            {
                "index": i,
                "seed": env.seed,
                "log_T_final": prof.log_T[-1],
                "log_lower_final": lower[-1],
                "log_upper_final": upper[-1],
            }
        )
    return {"command": "hit", "n_max": cfg.n_max, "environments": envs}


def _walk_job(job):
    cfg, i, r, schedule = job
    return simulate(cfg.environment(i), cfg.steps, cfg.walk_seed(i), schedule, replicate=r)


def _walks(cfg: ExperimentConfig, workers: int):
    if cfg.steps < 1:
        raise ValueError("walk commands need steps >= 1")
    ratio = float(cfg.options.get("schedule_ratio", 1.5))
    schedule = geometric_schedule(cfg.steps, ratio)
    jobs = [(cfg, i, r, schedule) for i in range(cfg.env_seeds) for r in range(cfg.replicates)]
    return ordered_map(_walk_job, jobs, workers)


def cmd_walk(cfg: ExperimentConfig, out: Outputs, workers: int) -> dict:
    summaries = _walks(cfg, workers)
    out.via("checkpoints.csv", write_checkpoints_csv, summaries)
    final = np.array([s.running_max for s in summaries])
    return {
        "command": "walk",
        "steps": cfg.steps,
        "walks": [
            {"env_seed": s.env_seed, "walk_seed": s.seed, "replicate": s.replicate,
             "position": s.position, "running_max": s.running_max}
            for s in summaries
        ],
        "running_max_median": float(np.median(final)),
    }


def _stationary_job(job):
    cfg, i = job
    env = cfg.environment(i)
    tol = float(cfg.options.get("tolerance", 1e-10))
    dist = stationary_exact(env, cfg.n_max, tolerance=tol)
    window = cfg.options.get("fit_window")
    fit = decay_fit(dist, cfg.spec.alpha, tuple(window) if window else None)
    return env, dist, fit


def cmd_stationary(cfg: ExperimentConfig, out: Outputs, workers: int) -> dict:
    results = ordered_map(_stationary_job, [(cfg, i) for i in range(cfg.env_seeds)], workers)
    envs = []
    for i, (env, dist, fit) in enumerate(results):
        out.via(f"stationary_{i}.csv", write_stationary_csv, env, dist, cfg.spec.alpha)
        envs.append(
            {"index": i, "seed": env.seed, "decay_prefactor": fit.prefactor, "r_squared": fit.r_squared,
             "window": list(fit.window), "truncation_tail": dist.truncation_tail}
        )
    return {
        "command": "stationary",
        "environments": envs,
        "decay_prefactor_median": float(np.median([e["decay_prefactor"] for e in envs])),
    }


def _fit_job(job):
    cfg, i, mode, exponent, window = job
    prof = profile(cfg.environment(i), cfg.n_max)
    return fit_growth(prof, mode, exponent, window)


def cmd_fit(cfg: ExperimentConfig, out: Outputs, workers: int) -> dict:
    opts = cfg.options
    if "mode" in opts:
        mode = FitMode(opts["mode"])
        exponent = opts.get("exponent")
    else:
        mode, exponent, _ = growth_target(cfg.spec)
    window = tuple(opts["window"]) if "window" in opts else None
    fits = ordered_map(_fit_job, [(cfg, i, mode, exponent, window) for i in range(cfg.env_seeds)], workers)
    out.csv(
        "growth_fits.csv",
        ["env", "env_seed", "mode", "exponent", "prefactor", "r_squared", "window_lo", "window_hi", "points"],
        [
            [i, cfg.env_seed(i), f.mode.value, _f(f.exponent), _f(f.prefactor), _f(f.r_squared),
             f.window[0], f.window[1], f.points]
            for i, f in enumerate(fits)
        ],
    )
    key = "exponent" if mode is FitMode.FREE_EXPONENT else "prefactor"
    report = {
        "command": "fit",
        "mode": mode.value,
        "growth": [{"exponent": f.exponent, "prefactor": f.prefactor, "r_squared": f.r_squared} for f in fits],
        f"median_{key}": float(np.median([getattr(f, key) for f in fits])),
    }
    if "beta" in opts and cfg.steps > 0:
        stat = envelope_stats(_walks(cfg, workers), float(opts["beta"]), opts.get("constant"))
        header = ["t"] + [f"q{lv:g}" for lv in stat.levels]
        rows = [[int(t)] + [_f(v) for v in stat.quantiles[:, k]] for k, t in enumerate(stat.times)]
        out.csv("envelope.csv", header, rows)
        report["envelope"] = {
            "beta": stat.beta,
            "constant_hypothesis": stat.constant_hypothesis,
            "final_t": int(stat.times[-1]),
            "final_median": stat.final_median,
            "fraction_within": stat.fraction_within,
        }
    return report


def cmd_suite(cfg: ExperimentConfig, out: Outputs, workers: int) -> dict:
    budget = Budget(n_max=cfg.n_max, steps=cfg.steps, replicates=cfg.replicates, env_seeds=cfg.env_seeds)
    report = theorem_suite(cfg.spec, budget, cfg.master_seed, workers)
    report["command"] = "suite"
    return report


HANDLERS = {
    "env": cmd_env,
    "hit": cmd_hit,
    "walk": cmd_walk,
    "stationary": cmd_stationary,
    "fit": cmd_fit,
    "suite": cmd_suite,
}


# ---------------------------------------------------------------- entry point


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, BudgetExceeded):
        return EXIT_BUDGET
    if isinstance(exc, SpecError):
        return EXIT_CONFIG
    if isinstance(exc, (NotErgodic, TailUnbounded, Divergent, DegenerateWindow, RwreError, ValueError)):
        return EXIT_PRECONDITION
    raise exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rwrelab", description="Random walks in perturbed random environments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="path to the JSON experiment config")
    ap.add_argument("--out", help="output directory (overrides the config's 'outputs')")
    ap.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    return ap


def run(command: str, cfg: ExperimentConfig, out_dir: str, workers: int = 1) -> int:
    """Execute ``command`` and write its artifacts; returns the exit status."""
    out = Outputs(out_dir)
    try:
        report = HANDLERS[command](cfg, out, workers)
    except Exception as exc:
        code = _exit_code(exc)
        _fail(out_dir, command, code, exc)
        return code
    out.json("report.json", report)
    config_text = cfg.to_json()
    manifest = {
        "command": command,
        "config": json.loads(config_text),
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seeds": {
            "master": cfg.master_seed,
            "env": [cfg.env_seed(i) for i in range(cfg.env_seeds)],
            "walk": [cfg.walk_seed(i) for i in range(cfg.env_seeds)],
        },
        "version": __version__,
        "files": sorted(out.written) + ["manifest.json"],
    }
    out.json("manifest.json", manifest)
    return EXIT_OK


def _fail(out_dir: str | None, command: str | None, code: int, exc: BaseException) -> None:
    record = {"command": command, "exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out_dir:
        try:
            Outputs(out_dir).json("error.json", record)
        except OSError:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_json(fh.read())
        if args.seed is not None:
            cfg.master_seed = args.seed
            cfg.__post_init__()
        out_dir = out_dir or cfg.outputs
        if not out_dir:
            raise SpecError("no output directory: pass --out or set 'outputs' in the config")
        if args.workers < 1:
            raise SpecError("--workers must be at least 1")
    except (OSError, SpecError, TypeError) as exc:
        _fail(out_dir, args.command, EXIT_CONFIG, exc)
        return EXIT_CONFIG
    return run(args.command, cfg, out_dir, args.workers)


if __name__ == "__main__":
    sys.exit(main())
