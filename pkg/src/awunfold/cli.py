"""Command-line front end.

Subcommands: ``certify``, ``design``, ``simulate``, ``report``, ``sample``.
Exit codes: 0 success, 1 usage or configuration error, 2 infeasible,
3 divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, catalog
from .certify import (
    CertificationError,
    CertifiedEllipsoid,
    InfeasibleError,
    certify,
    verify_certificate,
)
from .config import (
    ConfigError,
    build_design,
    build_gains,
    build_plant,
    build_reference,
    build_solver_options,
    load_config,
    parse_vector,
    resolve,
    validate,
)
from .design import SamplingError, run_design, sample_shell
from .model import assemble_closed_loop, gains_hash, save_gains, save_json
from .sim import DivergenceError, integrate

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("awunfold")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def certificate_document(cert: CertifiedEllipsoid, sys, ref, gains) -> dict:
    doc = {"schema_version": 1}
    doc.update(cert.to_dict())
    doc["margins"] = verify_certificate(sys, cert, ref).to_dict()
    doc["gains_hash"] = gains_hash(gains)
    doc["reference_vertices"] = ref.vertices.tolist()
    return doc


class Run:
    """Output directory plus the manifest written at the end of a command."""

    def __init__(self, args, resolved: dict | None, seed: int | None = None):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = args.command
        self.resolved = resolved
        self.seed = seed
        self.started = _now()
        self.inputs = {}
        for attr in ("config", "report"):
            path = getattr(args, attr, None)
            if path:
                self.inputs[str(path)] = _sha256(path)

    def finish(self) -> None:
        manifest = {
            "tool": "awunfold",
            "version": __version__,
            "command": self.command,
            "argv": sys.argv[1:],
            "seed": self.seed,
            "started": self.started,
            "finished": _now(),
            "resolved_config": self.resolved or {},
            "input_hashes": self.inputs,
        }
        validate(manifest, "manifest")
        save_json(manifest, self.out / "manifest.json")


def _apply_certify_flags(doc: dict, args) -> None:
    for key in ("eps", "abstol", "reltol", "feastol", "maxiters"):
        value = getattr(args, key, None)
        if value is not None:
            doc["certify"][key] = value


def cmd_certify(args) -> int:
    doc = resolve(load_config(args.config))
    _apply_certify_flags(doc, args)
    plant = build_plant(doc)
    key = "controller" if "controller" in doc else "controller_init"
    gains = build_gains(doc, key, plant)
    sys_ = assemble_closed_loop(plant, gains)
    ref = build_reference(doc, sys_.dim)
    run = Run(args, doc)
    try:
        cert = certify(sys_, ref, doc["certify"]["eps"], build_solver_options(doc))
    except InfeasibleError as err:
        print(f"infeasible: {err}")
        run.finish()
        return EXIT_INFEASIBLE
    cert_doc = certificate_document(cert, sys_, ref, gains)
    validate(cert_doc, "certificate")
    save_json(cert_doc, run.out / "certificate.json")
    m = cert_doc["margins"]
    print(f"alpha = {cert.alpha:.6f}")
    print(f"decay-rate margin = {-m['lyapunov_max_eig']:.3e}, "
          f"P conditioning = {m['P_min_eig']:.3e}, "
          f"max H_j P^-1 H_j^T = {m['H_row_max']:.9f}, solver status = {cert.solver_status}")
    run.finish()
    return EXIT_OK


def _resolve_seed(doc: dict, flag: int | None) -> int:
    if flag is not None:
        doc["design"]["seed"] = flag
    if doc["design"]["seed"] is None:
        doc["design"]["seed"] = int(np.random.SeedSequence().entropy % 2**32)
        print(f"seed = {doc['design']['seed']} (randomized)")
    return doc["design"]["seed"]


def cmd_design(args) -> int:
    doc = resolve(load_config(args.config))
    if args.step is not None:
        doc["design"]["step"] = args.step
    seed = _resolve_seed(doc, args.seed)
    plant = build_plant(doc)
    gains0 = build_gains(doc, "controller_init", plant)
    ref = build_reference(doc, plant.n + gains0.n_c)
    cfg = build_design(doc)
    run = Run(args, doc, seed)
    out = run.out

    def checkpoint(record):
        save_gains(record.gains, out / f"gains_stage_{record.k:02d}.json")
        with open(out / f"stage_{record.k:02d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "grad_norm"])
            for i, (loss, g) in enumerate(zip(record.loss_history, record.gradient_norm_history), 1):
                writer.writerow([i, f"{loss:.17g}", f"{g:.17g}"])

    try:
        report = run_design(plant, gains0, ref, cfg, build_solver_options(doc), on_stage=checkpoint)
    except InfeasibleError as err:
        print(f"infeasible: {err}")
        run.finish()
        return EXIT_INFEASIBLE
    report_doc = report.to_dict()
    validate(report_doc, "report")
    save_json(report_doc, out / "report.json")
    save_gains(report.best_gains, out / "best_gains.json")
    sys_best = assemble_closed_loop(plant, report.best_gains)
    save_json(certificate_document(report.best_certificate, sys_best, ref, report.best_gains),
              out / "certificate.json")
    with open(out / "alpha_per_stage.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "horizon", "alpha", "alpha_max", "final_loss", "status"])
        writer.writerow([0, 0.0, f"{report.alpha0:.17g}", f"{report.alpha0:.17g}", "", "initial"])
        for s in report.stages:
            writer.writerow([s.k, f"{s.horizon:.17g}", "" if s.alpha is None else f"{s.alpha:.17g}",
                             f"{s.alpha_max:.17g}",
                             f"{s.loss_history[-1]:.17g}" if s.loss_history else "", s.status])
    # winner response from the scaled first reference vertex, on the ellipsoid boundary
    x0 = report.alpha_max * ref.vertices[0]
    try:
        integrate(sys_best, x0, cfg.T, cfg.step).to_csv(out / "winner_trajectory.csv")
    except DivergenceError as err:
        log.warning("winner trajectory diverged: %s", err)
    print(f"alpha_0 = {report.alpha0:.6f}, alpha_max = {report.alpha_max:.6f} "
          f"(stage {report.best_stage}), {report.elapsed:.1f} s")
    run.finish()
    return EXIT_OK


def cmd_simulate(args) -> int:
    doc = resolve(load_config(args.config))
    sim = doc["simulate"]
    if args.x0 is not None:
        sim["x0"] = parse_vector(args.x0).tolist()
    if args.mode is not None:
        sim["mode"] = args.mode
    if args.step is not None:
        sim["step"] = args.step
    if args.horizon is not None:
        sim["horizon"] = args.horizon
    plant = build_plant(doc)
    key = "controller" if "controller" in doc else "controller_init"
    gains = build_gains(doc, key, plant)
    sys_ = assemble_closed_loop(plant, gains)
    if sim["x0"] is None:
        raise ConfigError("$.simulate.x0", "initial state required (use --x0)")
    x0 = np.asarray(sim["x0"], dtype=float)
    if x0.shape == (plant.n,):
        x0 = np.concatenate([x0, np.zeros(gains.n_c)])
        sim["x0"] = x0.tolist()
    if x0.shape != (sys_.dim,):
        raise ConfigError("$.simulate.x0", f"expected {plant.n} or {sys_.dim} entries, got {x0.size}")
    zeta = None if sim["mode"] == "exact" else doc["design"]["zeta"]
    run = Run(args, doc)
    try:
        traj = integrate(sys_, x0, sim["horizon"], sim["step"], zeta)
    except DivergenceError as err:
        print(f"diverged at t = {err.time:.6g}")
        run.finish()
        return EXIT_DIVERGED
    traj.to_csv(run.out / "trajectory.csv")
    print(f"final |x| = {np.linalg.norm(traj.final_state):.6e}, "
          f"energy = {traj.loss:.6e}, max |sat(u)| = {np.max(np.abs(np.clip(traj.inputs, -1, 1))):.4f}")
    run.finish()
    return EXIT_OK


def cmd_sample(args) -> int:
    doc = resolve(load_config(args.config))
    seed = _resolve_seed(doc, args.seed)
    plant = build_plant(doc)
    gains0 = build_gains(doc, "controller_init", plant).without_antiwindup()
    sys0 = assemble_closed_loop(plant, gains0)
    ref = build_reference(doc, sys0.dim)
    cfg = build_design(doc)
    run = Run(args, doc, seed)
    try:
        cert0 = certify(sys0, ref, cfg.eps, build_solver_options(doc))
    except InfeasibleError as err:
        print(f"infeasible: {err}")
        run.finish()
        return EXIT_INFEASIBLE
    count = args.count or cfg.J
    X = sample_shell(cert0, cfg.beta, count, plant.n, cfg.quadrant_mask, np.random.default_rng(seed),
                     cfg.sample_controller_states)
    with open(run.out / "samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(sys0.dim)])
        for row in X:
            writer.writerow([f"{v:.17g}" for v in row])
    print(f"{count} shell samples written (alpha_0 = {cert0.alpha:.6f})")
    run.finish()
    return EXIT_OK


def format_report(doc: dict, baselines: bool = False) -> str:
    lines = [f"{'stage':>5}  {'horizon':>8}  {'alpha':>12}  {'final loss':>12}  incumbent"]
    lines.append(f"{0:>5}  {'-':>8}  {doc['alpha0']:>12.6f}  {'-':>12}  {'*' if doc['best_stage'] == 0 else ''}")
    for s in doc["stages"]:
        alpha = "-" if s["alpha"] is None else f"{s['alpha']:.6f}"
        loss = f"{s['loss_history'][-1]:.6g}" if s["loss_history"] else "-"
        mark = "*" if s["k"] == doc["best_stage"] else ""
        lines.append(f"{s['k']:>5}  {s['horizon']:>8.4g}  {alpha:>12}  {loss:>12}  {mark}")
    lines.append(f"alpha_max = {doc['alpha_max']:.6f} at stage {doc['best_stage']}")
    if baselines:
        lines.append("reference sizes from conventional designs (different optimization problem):")
        for name, value in catalog.BASELINE_ALPHAS.items():
            lines.append(f"  {name}: {value}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    try:
        doc = json.loads(Path(args.report).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError("$", f"invalid JSON: {err}") from err
    if doc.get("schema_version") != 1:
        raise ConfigError("$.schema_version",
                          f"unsupported report schema version {doc.get('schema_version')!r} (expected 1)")
    validate(doc, "report")
    print(format_report(doc, args.baselines))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="awunfold", description="Anti-windup design by unfolded-loop training and LMI certification.")
    parser.add_argument("--version", action="version", version=f"awunfold {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seed=False):
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", default=".", metavar="DIR")
        if seed:
            p.add_argument("--seed", type=int, metavar="N")

    p = sub.add_parser("certify", help="largest certified ellipsoid for fixed gains")
    common(p)
    p.add_argument("--eps", type=float, help="strictness margin of the LMIs")
    p.add_argument("--abstol", type=float)
    p.add_argument("--reltol", type=float)
    p.add_argument("--feastol", type=float)
    p.add_argument("--maxiters", type=int)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("design", help="run the incremental training and certification loop")
    common(p, seed=True)
    p.add_argument("--step", type=float, metavar="REAL")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="simulate the closed loop and write a trajectory CSV")
    common(p)
    p.add_argument("--x0", metavar="V1,V2,...")
    p.add_argument("--mode", choices=["exact", "smooth"])
    p.add_argument("--step", type=float, metavar="REAL")
    p.add_argument("--horizon", type=float, metavar="T")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="draw initial states from the training shell")
    common(p, seed=True)
    p.add_argument("--count", type=int)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("report", help="summarize a design report")
    p.add_argument("report", metavar="REPORT")
    p.add_argument("--baselines", action="store_true", help="also print reference sizes")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except (CertificationError, SamplingError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
