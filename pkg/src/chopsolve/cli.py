"""Batch experiment runner.

Subcommands: ``deblur`` and ``tomo`` run one solver experiment end to end
(problem generation, noise, rescaling, solve, artifact export);
``dot-sweep`` reproduces the blocked inner-product error study;
``formats`` prints the precision presets.  Every run is deterministic
given its configuration: artifacts are byte-identical across repeats.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ChopsolveError, ConfigError
from .linops import SparseOperator, augmented_rhs, estimate_sigma_bounds, tikhonov_augment
from .precision import (
    FORMATS,
    BlockedReduceConfig,
    chopped_dot,
    get_format,
    op_stats,
    unit_roundoff,
)
from .problems import (
    PhantomKind,
    ProblemKind,
    add_noise,
    gen_deblur,
    gen_tomo,
    rescale_problem,
    write_pgm,
)
from .solvers import SolverConfig, cgls, chebyshev_si, history_to_csv

__all__ = ["ExperimentConfig", "run_experiment", "dot_error_sweep", "sweep_to_csv", "main"]

OUTPUT_ROOT_ENV = "CHOPSOLVE_OUT"

SUMMARY_SCHEMA = {
    "type": "object",
    "required": [
        "problem",
        "solver",
        "scale",
        "termination",
        "iterations",
        "best_iter",
        "best_rel_error",
        "final_rel_error",
        "op_stats",
        "artifacts",
    ],
    "properties": {
        "problem": {"type": "object"},
        "solver": {"type": "object"},
        "scale": {"type": "number"},
        "termination": {"enum": ["tolerance", "max-iter", "non-finite"]},
        "iterations": {"type": "integer", "minimum": 0},
        "best_iter": {"type": "integer", "minimum": 0},
        "best_rel_error": {"type": ["number", "null"]},
        "final_rel_error": {"type": ["number", "null"]},
        "sigma_bounds": {
            "type": ["array", "null"],
            "items": {"type": "number"},
            "minItems": 2,
            "maxItems": 2,
        },
        "op_stats": {"type": "object", "additionalProperties": {"type": "integer"}},
        "artifacts": {"type": "array", "items": {"type": "string"}},
    },
}


@dataclass
class ExperimentConfig:
    kind: str = "deblur"
    grid_n: int = 32
    blur_sigma: float = 1.0
    bandwidth: int = 4
    n_angles: int | None = None
    n_detectors: int | None = None
    phantom: str = "shapes"
    noise_level: float = 0.0
    seed: int = 0
    rescale: float = 1.0
    solver: str = "cgls"
    fmt: str = "fp64"
    block_size: int = 256
    max_iter: int = 100
    tol: float = 0.0
    eps: float = 1e-6
    lam: float = 0.0
    power_iters: int = 100
    output_dir: str = "runs/experiment"

    def validate(self) -> None:
        if self.kind not in ("deblur", "tomo"):
            raise ConfigError(f"unknown problem kind {self.kind!r}")
        if self.solver not in ("cgls", "chebyshev"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.fmt not in FORMATS:
            raise ConfigError(f"unknown format {self.fmt!r}; choose from {sorted(FORMATS)}")
        try:
            PhantomKind(self.phantom)
        except ValueError:
            raise ConfigError(f"unknown phantom {self.phantom!r}") from None
        if self.solver == "chebyshev" and self.lam <= 0:
            raise ConfigError("chebyshev requires lam > 0 (lam is the spectral lower bound)")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be nonnegative")
        if self.rescale <= 0:
            raise ConfigError("rescale must be positive")


def _resolve_output_dir(path: str) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    p = Path(path)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one experiment and write history.csv, summary.json, and PGMs.

    Returns the summary dict (also written to summary.json).
    """
    cfg.validate()
    fmt = get_format(cfg.fmt)
    phantom_kind = PhantomKind(cfg.phantom)

    if cfg.kind == "deblur":
        problem = gen_deblur(cfg.grid_n, cfg.blur_sigma, cfg.bandwidth, phantom_kind)
    else:
        problem = gen_tomo(cfg.grid_n, cfg.n_angles, cfg.n_detectors, phantom_kind)
    problem = add_noise(problem, cfg.noise_level, cfg.seed)
    if cfg.rescale != 1.0:
        problem = rescale_problem(problem, cfg.rescale)

    op = SparseOperator(problem.A)
    solver_cfg = SolverConfig(
        fmt=fmt,
        reduce=BlockedReduceConfig(cfg.block_size),
        max_iter=cfg.max_iter,
        tol=cfg.tol,
        lam=cfg.lam,
        track_error_against=problem.x_true,
    )

    stats = op_stats()
    stats.reset()
    sigma_bounds = None
    if cfg.solver == "chebyshev":
        sigma_lo, sigma_hi = estimate_sigma_bounds(op, cfg.lam, cfg.power_iters, cfg.seed)
        sigma_bounds = [sigma_lo, sigma_hi]
        aug = tikhonov_augment(op, cfg.lam)
        result = chebyshev_si(
            aug, augmented_rhs(problem.b, op.n_cols), sigma_lo, sigma_hi, cfg.eps, solver_cfg
        )
    elif cfg.lam > 0:
        aug = tikhonov_augment(op, cfg.lam)
        result = cgls(aug, augmented_rhs(problem.b, op.n_cols), solver_cfg)
    else:
        result = cgls(op, problem.b, solver_cfg)

    out = _resolve_output_dir(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    artifacts = ["history.csv", "summary.json", "x_true.pgm", "x_final.pgm", "x_best.pgm"]
    (out / "history.csv").write_text(history_to_csv(result), encoding="ascii")
    write_pgm(out / "x_true.pgm", problem.x_true, cfg.grid_n)
    write_pgm(out / "x_final.pgm", result.x_final, cfg.grid_n)
    write_pgm(out / "x_best.pgm", result.x_best, cfg.grid_n)
    if problem.kind is ProblemKind.DEBLUR:
        write_pgm(out / "b.pgm", problem.b, cfg.grid_n)
        artifacts.append("b.pgm")

    rels = [rec.rel_error for rec in result.history]
    summary = {
        "problem": {
            "kind": cfg.kind,
            "grid_n": cfg.grid_n,
            "phantom": cfg.phantom,
            "noise_level": cfg.noise_level,
            "seed": cfg.seed,
            "rescale": cfg.rescale,
            **(
                {"blur_sigma": cfg.blur_sigma, "bandwidth": cfg.bandwidth}
                if cfg.kind == "deblur"
                else {"n_angles": cfg.n_angles, "n_detectors": cfg.n_detectors}
            ),
        },
        "solver": {
            "name": cfg.solver,
            "fmt": cfg.fmt,
            "block_size": cfg.block_size,
            "max_iter": cfg.max_iter,
            "tol": cfg.tol,
            "eps": cfg.eps,
            "lam": cfg.lam,
        },
        "scale": problem.scale,
        "termination": result.termination.value,
        "iterations": len(result.history),
        "best_iter": result.best_iter,
        "best_rel_error": None if result.best_iter == 0 else rels[result.best_iter - 1],
        "final_rel_error": rels[-1] if rels else None,
        "sigma_bounds": sigma_bounds,
        "op_stats": stats.snapshot(),
        "artifacts": sorted(artifacts),
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )
    return summary


# ---------------------------------------------------------------------------
# blocked inner-product error study


def dot_error_sweep(
    n: int,
    fmts: list[str],
    block_sizes: list[int],
    trials: int = 20,
    seed: int = 0,
) -> list[tuple[str, int, float]]:
    """Mean |chopped dot - working-precision dot| per (format, block size).

    Draws ``trials`` seeded uniform(0, 1) vector pairs of length n, shared
    across all table cells.  The working-precision reference sums the raw
    products in float64 using the same blocked order, so the passthrough
    row is exactly zero.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pairs = [(rng.uniform(size=n), rng.uniform(size=n)) for _ in range(trials)]
    fp64 = get_format("fp64")

    rows = []
    for name in fmts:
        fmt = get_format(name)
        from .precision import chop

        chopped_pairs = [(chop(x, fmt), chop(y, fmt)) for x, y in pairs]
        for block in block_sizes:
            cfg = BlockedReduceConfig(block)
            total = 0.0
            for (x, y), (xc, yc) in zip(pairs, chopped_pairs):
                ref = chopped_dot(x, y, fp64, cfg)
                got = chopped_dot(xc, yc, fmt, cfg)
                total += abs(got - ref)
            rows.append((name, block, total / trials))
    return rows


def sweep_to_csv(rows: list[tuple[str, int, float]]) -> str:
    lines = ["fmt,block_size,mean_abs_error"]
    for name, block, err in rows:
        lines.append(f"{name},{block},{err!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# command line


def _format_table() -> str:
    header = f"{'name':<10}{'sig bits':>9}{'max exp':>9}{'unit roundoff':>15}{'max finite':>14}{'subnormals':>12}"
    lines = [header]
    for name, fmt in FORMATS.items():
        u = unit_roundoff(fmt)
        lines.append(
            f"{name:<10}{fmt.significand_bits:>9}{fmt.max_exponent:>9}"
            f"{u:>15.2e}{fmt.max_finite:>14.5g}{str(fmt.supports_subnormals).lower():>12}"
        )
    return "\n".join(lines)


def _add_experiment_flags(p: argparse.ArgumentParser, kind: str) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--grid", type=int, dest="grid_n")
    p.add_argument("--phantom", choices=[k.value for k in PhantomKind])
    p.add_argument("--noise", type=float, dest="noise_level")
    p.add_argument("--seed", type=int)
    p.add_argument("--rescale", type=float)
    p.add_argument("--solver", choices=["cgls", "chebyshev"])
    p.add_argument("--fmt", choices=sorted(FORMATS))
    p.add_argument("--block-size", type=int, dest="block_size")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--tol", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--power-iters", type=int, dest="power_iters")
    p.add_argument("--out", dest="output_dir")
    if kind == "deblur":
        p.add_argument("--blur-sigma", type=float, dest="blur_sigma")
        p.add_argument("--bandwidth", type=int)
    else:
        p.add_argument("--angles", type=int, dest="n_angles")
        p.add_argument("--detectors", type=int, dest="n_detectors")


_CONFIG_SECTIONS = {
    "problem": {
        "kind",
        "grid_n",
        "blur_sigma",
        "bandwidth",
        "n_angles",
        "n_detectors",
        "phantom",
        "noise_level",
        "seed",
        "rescale",
    },
    "solver": {
        "solver",
        "fmt",
        "block_size",
        "max_iter",
        "tol",
        "eps",
        "lam",
        "power_iters",
    },
    "output": {"output_dir"},
}
_CONFIG_ALIASES = {("solver", "name"): "solver", ("output", "dir"): "output_dir"}


def _load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    values: dict = {}
    for section in parser.sections():
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            name = _CONFIG_ALIASES.get((section, key), key)
            if name not in _CONFIG_SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[name] = raw
    return values


def _coerce(name: str, raw):
    """Coerce a config-file string to the ExperimentConfig field type."""
    if not isinstance(raw, str):
        return raw
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    if kind in ("int", "int | None"):
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def _build_experiment_config(kind: str, args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig(kind=kind)
    if args.config:
        for name, raw in _load_config_file(args.config).items():
            if name == "kind" and raw != kind:
                raise ConfigError(f"config file is for kind {raw!r}, command is {kind!r}")
            setattr(cfg, name, _coerce(name, raw))
    for name in asdict(cfg):
        flag = getattr(args, name, None)
        if flag is not None:
            setattr(cfg, name, flag)
    cfg.kind = kind
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="chopsolve",
        description="Reduced-precision iterative solvers for ill-posed inverse problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("formats", help="print the precision presets")

    for kind, text in (("deblur", "Gaussian deblurring"), ("tomo", "parallel-beam tomography")):
        p = sub.add_parser(kind, help=f"run a {text} experiment")
        _add_experiment_flags(p, kind)

    p = sub.add_parser("dot-sweep", help="blocked inner-product error study")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--fmts", default="fp16,fp32,fp64")
    p.add_argument("--block-sizes", default="16,64,256,1024,4096", dest="block_sizes")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path (default: stdout)")

    args = parser.parse_args(argv)
    try:
        if args.command == "formats":
            print(_format_table())
        elif args.command == "dot-sweep":
            rows = dot_error_sweep(
                args.n,
                [s.strip() for s in args.fmts.split(",") if s.strip()],
                [int(s) for s in args.block_sizes.split(",") if s.strip()],
                args.trials,
                args.seed,
            )
            csv_text = sweep_to_csv(rows)
            if args.out:
                path = _resolve_output_dir(args.out)
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(csv_text, encoding="ascii")
            else:
                sys.stdout.write(csv_text)
        else:
            cfg = _build_experiment_config(args.command, args)
            summary = run_experiment(cfg)
            print(
                f"{cfg.kind}: termination={summary['termination']} "
                f"iterations={summary['iterations']} best_iter={summary['best_iter']} "
                f"best_rel_error={summary['best_rel_error']}"
            )
    except (ChopsolveError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
