"""Command-line entry point: ``gsmsynth {preprocess,optimize,evaluate,realize}``.

Run configuration is a JSON document; ``--preset`` supplies complete defaults
and individual flags override them. Exit codes: 0 success, 2 validation
error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (AssignmentError, ConfigurationError, DatasetError, DimensionError, DomainError,
                     FitInfeasibleError, GsmSynthError, InvalidInputError, MissingSampleError)
from .optimizer import (STRATEGIES, Problem, StageSchedule, dof_strategy, initial_design, staged_optimize,
                        write_trace_csv)
from .pattern import (BeamSpec, chebyshev_baseline, metrics, standard_beam_table, scan_beam_table, sidelobe_set,
                      write_metrics_report, write_pattern_cut, xpol_set)
from .realization import chi_sweep, fit_toy_element, realization_target, write_chi_sweep_csv, write_realization_report
from .toyem import (ArrayModel, build_cut_fields, build_sphere_fields, coupling_matrix, export_dataset,
                    import_dataset, import_sphere_fields, load_checkpoint, save_checkpoint)

__all__ = ["RunConfig", "PRESETS", "load_config", "main", "complex_dof_count"]

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

PRESETS = {
    "paper-8x8": {
        "grid": {"rows": 8, "cols": 8, "dx": 0.5, "dy": 0.5, "ports": 1},
        "strategy": "PointSymmetry",
        "beams": {"table": "standard", "sll_db": -15.0, "xpr_db": -30.0},
        "schedule": {"alphas": [0, 0.1, 1, 10, 100, 1e3, 1e4, 1e5], "tol": 1e-4, "max_iter": 500},
        "seed": 0,
        "margin_db": 0.01,
        "realization": {"gamma_l": 1.0, "chi_step_deg": 1.0, "pole_threshold_deg": 5.0,
                        "lambda_step": 0.1, "angle_step_deg": 1.0},
    },
    "toy-4x4": {
        "grid": {"rows": 4, "cols": 4, "dx": 0.5, "dy": 0.5, "ports": 1},
        "strategy": "PointSymmetry",
        "beams": {"scan": [-20, -10, 0, 10, 20], "sll_db": -15.0, "xpr_db": -30.0},
        "schedule": {"alphas": [0, 0.1, 1, 10, 100, 1e3, 1e4, 1e5], "tol": 1e-4, "max_iter": 500},
        "seed": 0,
        "margin_db": 0.01,
        "realization": {"gamma_l": 1.0, "chi_step_deg": 1.0, "pole_threshold_deg": 5.0,
                        "lambda_step": 0.1, "angle_step_deg": 1.0},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


@dataclass
class RunConfig:
    """Validated run configuration."""

    rows: int
    cols: int
    dx: float
    dy: float
    ports: int
    strategy: str
    beams: dict
    schedule: StageSchedule
    seed: int
    margin_db: float
    realization: dict
    dataset: Path | None = None
    checkpoint: Path | None = None
    out: Path | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            g = d["grid"]
            sch = d.get("schedule", {})
            schedule = StageSchedule(tuple(sch.get("alphas", (0, 0.1, 1, 10, 100, 1e3, 1e4, 1e5))),
                                     float(sch.get("tol", 1e-4)), int(sch.get("max_iter", 500)))
            cfg = cls(int(g["rows"]), int(g["cols"]), float(g.get("dx", 0.5)), float(g.get("dy", 0.5)),
                      int(g.get("ports", 1)), str(d.get("strategy", "PointSymmetry")), dict(d["beams"]),
                      schedule, int(d.get("seed", 0)), float(d.get("margin_db", 0.01)),
                      dict(d.get("realization", {})),
                      Path(d["dataset"]) if d.get("dataset") else None,
                      Path(d["checkpoint"]) if d.get("checkpoint") else None,
                      Path(d["out"]) if d.get("out") else None, d)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"invalid configuration: {exc!r}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1 or self.ports < 1:
            raise ConfigurationError("grid rows, cols and ports must be positive")
        if self.dx <= 0 or self.dy <= 0:
            raise ConfigurationError("element spacings must be positive")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        for key in ("sll_db", "xpr_db"):
            if float(self.beams.get(key, -1.0)) >= 0:
                raise ConfigurationError(f"beams.{key} must be a negative dB value")
        thetas = []
        if "scan" in self.beams:
            thetas = [float(t) for t in self.beams["scan"]]
        elif "explicit" in self.beams:
            for b in self.beams["explicit"]:
                thetas.append(float(b["theta"]))
                a, c = b["band"]
                if not -90 <= a < float(b["theta"]) < c <= 90:
                    raise ConfigurationError(f"beam band {b['band']} must bracket theta {b['theta']} within [-90, 90]")
        elif self.beams.get("table") != "standard":
            raise ConfigurationError("beams needs 'table': 'standard', a 'scan' list or an 'explicit' list")
        if any(not -90 <= t <= 90 for t in thetas):
            raise ConfigurationError("beam angles must lie in [-90, 90] degrees")
        if self.margin_db < 0:
            raise ConfigurationError("margin_db must be nonnegative")
        for p in (self.dataset, self.checkpoint):
            if p is not None and not Path(p).exists():
                raise ConfigurationError(f"path {p} does not exist")

    def beam_table(self) -> list[BeamSpec]:
        sll = float(self.beams.get("sll_db", -15.0))
        xpr = float(self.beams.get("xpr_db", -30.0))
        if self.beams.get("table") == "standard":
            return standard_beam_table(sll, xpr)
        if "scan" in self.beams:
            return scan_beam_table([float(t) for t in self.beams["scan"]], self.cols, sll, xpr, self.dx)
        return [BeamSpec((float(b["theta"]), 0.0), sll, xpr, sidelobe_set(*b["band"]), xpol_set())
                for b in self.beams["explicit"]]

    def model(self) -> ArrayModel:
        return ArrayModel(self.rows, self.cols, self.dx, self.dy, self.ports)


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    base: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
        base = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        try:
            base = _merge(base, json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not base:
        raise ConfigurationError("give --config or --preset")
    base = _merge(base, {k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(base)


def complex_dof_count(n_modes: int, n_ports: int, n_classes: int, rows: int, cols: int, states: int) -> int:
    """Complex design values: class GSMs, static and dynamic excitations."""
    return (n_modes + n_ports) ** 2 * n_classes + cols * rows * n_ports + cols * states


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out is None:
        raise ConfigurationError("an output directory (--out) is required")
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def _load_dataset(cfg: RunConfig):
    if cfg.dataset is None:
        raise ConfigurationError("a dataset (--dataset) is required")
    model, G, fields = import_dataset(cfg.dataset)
    if (model.rows, model.cols, model.n_ports) != (cfg.rows, cfg.cols, cfg.ports):
        raise DimensionError(f"dataset grid {model.rows}x{model.cols} (P={model.n_ports}) does not match "
                             f"the configuration {cfg.rows}x{cfg.cols} (P={cfg.ports})")
    return model, G, fields


def cmd_preprocess(cfg: RunConfig, log=print) -> Path:
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    model = cfg.model()
    G = coupling_matrix(model, "toeplitz")
    fields = build_cut_fields(model)
    sphere = build_sphere_fields(model)
    export_dataset(model, G, fields, out, sphere)
    K = model.n_elements
    log(f"dataset: K={K} N={model.n_modes} P={model.n_ports} G={G.matrix.shape[0]}x{G.matrix.shape[1]}")
    log(f"coupling blocks: {K * K} total, {K * K - K} nonzero, "
        f"{(2 * model.rows - 1) * (2 * model.cols - 1) - 1} distinct offsets evaluated")
    log(f"elapsed: {time.perf_counter() - t0:.2f} s")
    return out


def _problem(cfg: RunConfig, G, fields):
    assignment = dof_strategy(cfg.strategy, cfg.rows, cfg.cols)
    beams = cfg.beam_table()
    return Problem(G, fields, beams, assignment, cfg.ports, cfg.margin_db)


def cmd_optimize(cfg: RunConfig, log=print, dry_run: bool = False) -> dict:
    _, G, fields = _load_dataset(cfg)
    problem = _problem(cfg, G, fields)
    a = problem.assignment
    x0 = initial_design(a, G.n_modes, cfg.ports, problem.n_states, cfg.seed)
    dof = complex_dof_count(G.n_modes, cfg.ports, a.n_classes, cfg.rows, cfg.cols, problem.n_states)
    summary = {"strategy": cfg.strategy, "classes": a.n_classes, "beams": problem.n_states,
               "complex_dof": dof, "real_parameters": 2 * dof, "seed": cfg.seed}
    log(f"design: D={a.n_classes} classes, S={problem.n_states} beams, {dof} complex values ({2 * dof} real)")
    if dry_run:
        return summary
    out = _out_dir(cfg)
    t0 = time.perf_counter()

    def report(i, x, tr):
        log(f"stage {i} alpha={cfg.schedule.alphas[i]:g}: {len(tr.records) - 1} iterations, "
            f"cost {tr.records[-1].cost:.6g}{' (stalled)' if tr.stalled[-1] else ''}")

    x, trace = staged_optimize(x0, cfg.schedule, problem, callback=report)
    save_checkpoint(x, out / "checkpoint", a, {"seed": cfg.seed, "strategy": cfg.strategy})
    write_trace_csv(trace, out / "trace.csv")
    args = problem.penalty_arguments(x)
    summary.update({"iterations": len(trace.records) - len(trace.stage_starts),
                    "final_cost": trace.records[-1].cost,
                    "max_penalty_argument": float(args.max()),
                    "targets_met": bool(np.all(args <= 1.0))})
    lines = [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in summary.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    log(f"done in {time.perf_counter() - t0:.1f} s; targets met: {summary['targets_met']}")
    return summary


def _checkpoint(cfg: RunConfig):
    if cfg.checkpoint is None:
        raise ConfigurationError("a checkpoint (--checkpoint) is required")
    return load_checkpoint(cfg.checkpoint)


def cmd_evaluate(cfg: RunConfig, log=print, baseline: bool = False) -> list[dict]:
    out = _out_dir(cfg)
    beams = cfg.beam_table()
    rows = []
    if baseline:
        theta = np.round(np.arange(-90.0, 90.05, 0.1), 10)
        for s, b in enumerate(beams):
            base = chebyshev_baseline(cfg.cols, b.sll_db, cfg.dx, b.target[0])
            rows.append({"beam": s + 1, "theta_t": b.target[0], "sll_dB": base.max_sidelobe_db(),
                         "sll_target": b.sll_db, "pass": base.max_sidelobe_db() <= b.sll_db + 0.1})
            af = np.abs(base.array_factor(theta))
            with np.errstate(divide="ignore"):
                db = 20 * np.log10(af / af.max())
            with open(out / f"baseline_beam{s + 1:02d}.csv", "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["theta_deg", "af_dB"])
                wr.writerows([[f"{t:g}", f"{v:.6f}"] for t, v in zip(theta, db)])
    else:
        _, G, fields = _load_dataset(cfg)
        x, assignment, _ = _checkpoint(cfg)
        problem = _problem(cfg, G, fields)
        if assignment is not None and not np.array_equal(assignment.class_of, problem.assignment.class_of):
            raise DimensionError("checkpoint was optimized with a different DOF assignment")
        problem.check(x)
        sphere = import_sphere_fields(cfg.dataset)
        f = problem.coefficients(x)
        for s, b in enumerate(beams):
            m = metrics(f[:, s], b, fields, sphere)
            rows.append({"beam": s + 1, "theta_t": b.target[0], "directivity_dBi": m.directivity_dbi,
                         "sll_dB": m.sll_db, "xpr_dB": m.xpr_db, "sll_target": b.sll_db,
                         "xpr_target": b.xpr_db, "pass": m.passes(b)})
            Fs = np.einsum("iap,i->ap", fields.flat(), f[:, s])
            write_pattern_cut(out / f"pattern_beam{s + 1:02d}.csv", fields.angles, Fs, b)
    keys = list(rows[0].keys())
    with open(out / "metrics.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    write_metrics_report(out / "metrics.txt", rows)
    for r in rows:
        log("  ".join(f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    return rows


def cmd_realize(cfg: RunConfig, log=print) -> list[dict]:
    out = _out_dir(cfg)
    x, _, _ = _checkpoint(cfg)
    rc = cfg.realization
    gamma_l = rc.get("gamma_l", 1.0)
    grid = np.arange(0.0, 180.0, float(rc.get("chi_step_deg", 1.0)))
    rows = []
    for d, gsm in enumerate(x.class_gsms):
        row = {"class": d + 1}
        try:
            sw = chi_sweep(gsm, gamma_l, grid, float(rc.get("pole_threshold_deg", 5.0)))
            write_chi_sweep_csv(sw, out / f"class{d + 1:02d}_chi_sweep.csv")
            target = realization_target(gsm, gamma_l, np.radians(sw.chi_star_deg))
            row.update({f"lambda{n + 1}": float(np.real(v)) for n, v in enumerate(target.lambdas)})
            row.update({"chi_star_deg": sw.chi_star_deg, "chi_argmin_deg": sw.chi_argmin_deg,
                        "near_pole": sw.near_pole, "flat_sweep": sw.flat})
            try:
                fit = fit_toy_element(target, float(rc.get("lambda_step", 0.1)), float(rc.get("angle_step_deg", 1.0)))
                row.update({"phi_deg": fit.element.phi_deg, "phi_snapped_deg": fit.snapped.phi_deg,
                            "residual": fit.residual, "residual_snapped": fit.residual_snapped,
                            "snap_bound": fit.snap_bound})
            except (FitInfeasibleError, DimensionError) as exc:
                row["fit_error"] = str(exc)
        except (GsmSynthError, np.linalg.LinAlgError) as exc:
            row["error"] = str(exc)
        rows.append(row)
        log(f"class {d + 1}: " + ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                          for k, v in row.items() if k != "class"))
    write_realization_report(out / "realization.txt", rows)
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(out / "realization_summary.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        wr.writerows(rows)
    return rows


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsmsynth", description="Coupled-array GSM synthesis pipeline.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("preprocess", "optimize", "evaluate", "realize"):
        s = sub.add_parser(verb)
        s.add_argument("--config", type=Path)
        s.add_argument("--preset", choices=sorted(PRESETS))
        s.add_argument("--dataset", type=Path)
        s.add_argument("--checkpoint", type=Path)
        s.add_argument("--out", type=Path)
        s.add_argument("--seed", type=int)
        s.add_argument("--strategy", choices=STRATEGIES)
        if verb == "optimize":
            s.add_argument("--dry-run", action="store_true", help="report the design size and exit")
        if verb == "evaluate":
            s.add_argument("--baseline", action="store_true", help="evaluate the Chebyshev baseline instead")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        overrides = {"dataset": args.dataset and str(args.dataset), "checkpoint": args.checkpoint and str(args.checkpoint),
                     "out": args.out and str(args.out), "seed": args.seed, "strategy": args.strategy}
        cfg = load_config(args.config, args.preset, overrides)
        if args.verb == "preprocess":
            cmd_preprocess(cfg)
        elif args.verb == "optimize":
            cmd_optimize(cfg, dry_run=args.dry_run)
        elif args.verb == "evaluate":
            cmd_evaluate(cfg, baseline=args.baseline)
        else:
            cmd_realize(cfg)
    except (ConfigurationError, DimensionError, DatasetError, DomainError, AssignmentError,
            InvalidInputError, MissingSampleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, np.linalg.LinAlgError, GsmSynthError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
