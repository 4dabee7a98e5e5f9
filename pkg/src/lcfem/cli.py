"""Command-line front end: ``lcfem run <config-file> [options]``.

The configuration file is YAML with the keys of :class:`RunConfig`; every
command-line flag overrides the matching key.  Example::

    preset: twist
    formulation: penalty
    levels: 3
    refine: paired-both
    out: runs/twist
    params:
      zeta: 1.0e5
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .output import write_manifest, write_stats_csv, write_vtk
from .physics import energy_density_field
from .problems import PRESETS, preset
from .solver import SolverError, initial_guess, nested_iteration, work_units

__all__ = ["RunConfig", "load_config", "run", "main"]

log = logging.getLogger(__name__)

REFINE_MODES = ("adaptive", "uniform", "paired-both")


@dataclass
class RunConfig:
    preset: str = "twist"
    formulation: str = "penalty"
    levels: int = 3
    refine: str = "adaptive"
    out: str = "lcfem-out"
    seed: int = 0
    perturbation: float = 0.0
    flag_fraction: float | None = None
    boundary_file: str | None = None
    write_vtk: bool = True
    params: dict = field(default_factory=dict)

    def validate(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.formulation not in ("penalty", "lagrangian"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if int(self.levels) < 1:
            raise ValueError("levels must be at least 1")
        if self.refine not in REFINE_MODES:
            raise ValueError(f"refine must be one of {', '.join(REFINE_MODES)}")
        if self.flag_fraction is not None and not 0 < self.flag_fraction <= 1:
            raise ValueError("flag fraction must lie in (0, 1]")
        return self


def load_config(path, **overrides):
    """Read a YAML run configuration and apply non-``None`` overrides."""
    data = {}
    if path is not None:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a mapping at the top level")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown keys {', '.join(sorted(unknown))}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**data).validate()


def _perturbed_initial(bc, amplitude, seed):
    rng = np.random.default_rng(seed)

    def build(space, constraints):
        state = initial_guess(space, bc, constraints)
        if amplitude > 0:
            u = state.u.copy()
            u[constraints.free] += amplitude * rng.standard_normal(constraints.n_free)
            state.u = constraints.apply(u)
        return state

    return build


def _solve_mode(rc, mode, out_dir):
    overrides = dict(rc.params)
    overrides["formulation"] = rc.formulation
    if rc.flag_fraction is not None:
        overrides["flag_fraction"] = rc.flag_fraction
    if rc.boundary_file:
        overrides["boundary"] = rc.boundary_file
    cfg, mesh, bc = preset(rc.preset, **overrides)
    out_dir.mkdir(parents=True, exist_ok=True)

    def on_level(rec, state, est, flags):
        if not rc.write_vtk:
            return
        m = state.space.mesh
        write_vtk(
            out_dir / f"level_{rec.level:02d}.vtk", m,
            point_vectors={"director": state.director[:m.n_vertices]},
            cell_scalars={"wF": energy_density_field(state, cfg), "theta": est.theta,
                          "flag": flags.astype(float)},
            title=f"{rc.preset} {mode} level {rec.level}")

    state, stats = nested_iteration(cfg, mesh, bc, int(rc.levels), mode, on_level,
                                    initial=_perturbed_initial(bc, rc.perturbation, rc.seed))
    return cfg, bc, stats


def _summary(stats):
    return {
        "levels": len(stats.levels),
        "fine_dof": stats.fine_dof,
        "work_units": stats.work_units,
        "wall_time": stats.wall_time,
        "newton_iters": [r.newton_iters for r in stats.levels],
        "energy_G": [r.energy.G for r in stats.levels],
    }


def run(rc):
    """Run one configuration; returns a process exit status."""
    rc.validate()
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = ("adaptive", "uniform") if rc.refine == "paired-both" else (rc.refine,)
    manifest = {"status": "RUNNING", "run_config": asdict(rc), "results": {}}
    results = {}
    status = 0
    for mode in modes:
        sub = out / mode if len(modes) > 1 else out
        name = f"stats_{mode}" if len(modes) > 1 else "stats"
        try:
            cfg, bc, stats = _solve_mode(rc, mode, sub)
        except SolverError as exc:
            log.error("%s run failed: %s", mode, exc)
            if exc.stats is not None and exc.stats.levels:
                stats = exc.stats
                stats.work_units = work_units(stats)
                write_stats_csv(out / f"{name}.csv", stats)
            manifest["status"] = "FAILED"
            manifest["error"] = f"{mode}: {exc}"
            status = 1
            break
        results[mode] = stats
        manifest["problem"] = cfg.as_dict()
        manifest["boundary"] = {"id": bc.id, "description": bc.description}
        if "bc_interpretation" in cfg.notes:
            manifest["bc_interpretation_note"] = cfg.notes["bc_interpretation"]
    if "uniform" in results and "adaptive" in results:
        # compare against the finest adaptive Hessian
        results["uniform"].work_units = work_units(results["uniform"], results["adaptive"].finest_nnz)
        manifest["work_unit_divisor"] = "finest adaptive Hessian nonzeros"
    for mode, stats in results.items():
        name = f"stats_{mode}" if len(modes) > 1 else "stats"
        write_stats_csv(out / f"{name}.csv", stats)
        write_stats_csv(out / f"{name}_table.csv", stats, digits=6)
        manifest["results"][mode] = _summary(stats)
    if status == 0:
        manifest["status"] = "OK"
    write_manifest(out / "manifest.json", manifest)
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="lcfem", description="Frank-Oseen director solver with adaptive refinement")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment described by a YAML file")
    p.add_argument("config", help="YAML run configuration ('-' for defaults only)")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--formulation", choices=("penalty", "lagrangian"))
    p.add_argument("--levels", type=int)
    p.add_argument("--refine", choices=REFINE_MODES)
    p.add_argument("--flag-fraction", type=float, dest="flag_fraction")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-vtk", action="store_false", dest="write_vtk", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    path = None if args.config == "-" else args.config
    try:
        rc = load_config(path, preset=args.preset, formulation=args.formulation, levels=args.levels,
                         refine=args.refine, flag_fraction=args.flag_fraction, out=args.out,
                         seed=args.seed, write_vtk=args.write_vtk)
    except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
        print(f"lcfem: {exc}", file=sys.stderr)
        return 2
    return run(rc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
