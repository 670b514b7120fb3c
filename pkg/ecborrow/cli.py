"""
ecborrow — command-line runner.

Usage:
    ecborrow generate --mech demo --n-rct 100 --n-ec 200 --seed 7 --out data/
    ecborrow analyze --rct data/rct.csv --ec data/ec.csv --calibration linear --out results/
    ecborrow analyze --config analysis.json --k-vector 0:200:5
    ecborrow mc --mech mech2 --reps 200 --threads 4 --out mc/
    ecborrow aic --rct data/rct.csv

Exit codes: 0 success, 1 a stage or input failed, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Optional

from ecborrow import __version__
from ecborrow.config import CALIBRATIONS, FAMILIES, REGRESSORS, AnalysisConfig
from ecborrow.core.logger import RunLogger
from ecborrow.data.io import file_digest, read_ec_csv, read_rct_csv, write_ec_csv, write_frame, write_json, write_rct_csv
from ecborrow.errors import ConfigError, EcBorrowError, PipelineStageError
from ecborrow.pipeline import AnalysisResult, aic_union, run_analysis
from ecborrow.simulation.mechanisms import MECHANISMS, generate
from ecborrow.simulation.monte_carlo import evaluate_acceptance, monte_carlo

SCHEMA_VERSION = 1

DEFAULT_SIZES = {
    "demo": (100, 200),
    "exchangeable": (100, 200),
    "mech1": (100, 400),
    "mech2": (100, 400),
}

logger = logging.getLogger("ecborrow")


def _configure_logging(verbose: bool = False, quiet_modules: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        datefmt="%H:%M:%S",
        force=True,
    )
    if quiet_modules and not verbose:
        # per-replicate INFO lines would drown the progress bar
        for name in ("ecborrow.borrowing", "ecborrow.models", "ecborrow.pipeline", "ecborrow.data"):
            logging.getLogger(name).setLevel(logging.WARNING)


# ── Execution Log ────────────────────────────────────────────────

class ExecutionLog:
    """Saves a JSON log of what a command did; the only output carrying timestamps."""

    def __init__(self, out_dir: str, command: str):
        self._entries: list[dict] = []
        self._out_dir = os.path.abspath(out_dir)
        self._command = command
        self._start = datetime.now()

    def add(self, step: str, status: str, details: str = ""):
        self._entries.append({
            "timestamp": datetime.now().isoformat(),
            "step": step,
            "status": status,
            "details": details,
        })

    @property
    def entries(self) -> list[dict]:
        return list(self._entries)

    def save(self) -> Optional[str]:
        """Write execution_log.json into the output directory, falling back to tmp."""
        log_dir = self._out_dir
        try:
            os.makedirs(log_dir, exist_ok=True)
        except OSError:
            log_dir = os.path.join(tempfile.gettempdir(), "ecborrow", os.path.basename(self._out_dir))
            os.makedirs(log_dir, exist_ok=True)

        filepath = os.path.join(log_dir, "execution_log.json")
        data = {
            "ecborrow_version": __version__,
            "command": self._command,
            "started": self._start.isoformat(),
            "finished": datetime.now().isoformat(),
            "steps": self._entries,
        }
        try:
            with open(filepath, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2)
            return filepath
        except OSError as e:
            logger.warning(f"Failed to save execution log: {e}")
            return None


# ── Summary Report ───────────────────────────────────────────────

def print_summary(command: str, out_dir: str, start_time: float, files: list[str], success: bool = True):
    """Print a summary report at the end of a run."""
    elapsed = time.time() - start_time
    print("\n" + "─" * 60)
    print("📊 Run Summary")
    print("─" * 60)
    print(f"  Command:      {command}")
    print(f"  Output:       {os.path.abspath(out_dir)}")
    print(f"  Files:        {len(files)} written")
    print(f"  Duration:     {elapsed:.1f}s")
    print(f"  Result:       {'✅ Success' if success else '❌ Failed'}")
    print("─" * 60)


# ── Config assembly ──────────────────────────────────────────────

ANALYSIS_FLAGS = {
    "rct": "rct_csv",
    "ec": "ec_csv",
    "out": "out_dir",
    "family": "family",
    "trim": "trim",
    "regressor": "regressor",
    "known_ps": "known_ps",
    "k_vector": "k_vector",
    "reference": "reference",
    "delta": "sensitivity_delta",
    "calibration": "calibration",
    "aic": "aic_select",
    "seed": "seed",
    "threads": "max_workers",
    "verbose": "verbose",
}


def build_config(args: argparse.Namespace, base: Optional[AnalysisConfig] = None) -> AnalysisConfig:
    """Defaults, then the --config file, then flags (flags win)."""
    base = base or AnalysisConfig()
    if getattr(args, "config", None):
        base = AnalysisConfig.from_file(args.config, base=base)
    overrides = {
        field: getattr(args, flag)
        for flag, field in ANALYSIS_FLAGS.items()
        if hasattr(args, flag) and getattr(args, flag) is not None
    }
    return base.merged(overrides)


# ── Sub-Commands ─────────────────────────────────────────────────

def cmd_generate(mechanism: str, n_rct: Optional[int], n_ec: Optional[int], seed: int, out_dir: str,
                 quiet: bool = False) -> list[str]:
    """Write rct.csv, ec.csv and meta.json for one simulated dataset."""
    default_rct, default_ec = DEFAULT_SIZES[mechanism]
    run_logger = RunLogger(out_dir, title=f"ecborrow generate {mechanism}", quiet=quiet)
    run_logger.set_stage("GENERATE")
    data = generate(mechanism, n_rct or default_rct, n_ec or default_ec, seed)
    out = Path(out_dir)
    written = [
        write_rct_csv(data.rct, out / "rct.csv"),
        write_ec_csv(data.ec, out / "ec.csv"),
        write_json(data.meta(), out / "meta.json"),
    ]
    run_logger.log_step(f"{mechanism} seed {seed}",
                        f"n_rct={data.spec.n_rct}, n_ec={data.spec.n_ec}, true ATE {data.true_ate:.4f}")
    logger.info(f"Generated {mechanism} (seed {seed}) into {out}")
    return [str(p) for p in written]


def build_report(result: AnalysisResult, inputs: dict[str, dict]) -> dict[str, Any]:
    """report.json payload; deterministic for identical inputs and settings."""
    cfg = result.config
    settings = {k: v for k, v in cfg.to_dict().items() if k not in ("max_workers", "verbose")}
    table = result.table()
    report: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "ecborrow_version": __version__,
        "config": settings,
        "config_digest": cfg.digest,
        "inputs": inputs,
        "family": result.family.value,
        "covariates": list(result.covariates),
        "reference": {
            "mode": "aipw" if cfg.reference == "aipw" else "value",
            "value": result.reference_value,
        },
        "estimators": table.to_dict(orient="records"),
        "selection": result.selection.to_dict(),
        "control_model": result.control_fit.to_dict(),
    }
    if result.aic_selection is not None:
        report["aic"] = result.aic_selection
    if result.bias_model is not None:
        report["calibration"] = {
            "kind": cfg.calibration,
            "bias_model": result.bias_model.to_dict(),
            "selection": result.calibrated_selection.to_dict(),
        }
    return report


def write_analysis_outputs(result: AnalysisResult, out_dir: str, inputs: dict[str, dict]) -> list[str]:
    out = Path(out_dir)
    written = [
        write_json(build_report(result, inputs), out / "report.json"),
        write_frame(result.selection.grid.to_frame(), out / "mse_curve.csv"),
        write_frame(result.influences.to_frame(), out / "influences.csv"),
    ]
    if result.sensitivity is not None:
        written.append(write_frame(result.sensitivity.to_frame(with_ci=True), out / "sensitivity.csv"))
    if result.calibrated_ec is not None:
        written += [
            write_ec_csv(result.calibrated_ec, out / "calibrated_ec.csv"),
            write_frame(result.calibrated_influences.to_frame(), out / "influences_calibrated.csv"),
            write_frame(result.calibrated_selection.grid.to_frame(), out / "mse_curve_calibrated.csv"),
        ]
    return [str(p) for p in written]


def cmd_analyze(config: AnalysisConfig, quiet: bool = False) -> int:
    if not config.rct_csv or not config.ec_csv:
        raise ConfigError("analyze needs both --rct and --ec (flags or config file)")

    start = time.time()
    exec_log = ExecutionLog(config.out_dir, "analyze")
    run_logger = RunLogger(config.out_dir, title="ecborrow analyze", quiet=quiet)
    written: list[str] = []
    success = False
    try:
        rct = read_rct_csv(config.rct_csv, family=config.family)
        ec = read_ec_csv(config.ec_csv, rct=rct)
        inputs = {
            "rct": {"path": config.rct_csv, "sha256": file_digest(config.rct_csv), "n": rct.n},
            "ec": {"path": config.ec_csv, "sha256": file_digest(config.ec_csv), "n": ec.n},
        }
        exec_log.add("LOAD", "ok", f"rct n={rct.n}, ec n={ec.n}, p={rct.p}")

        result = run_analysis(rct, ec, config, run_logger=run_logger)
        for stage in result.stages:
            exec_log.add(stage.stage.name, "ok" if stage.passed else "failed", stage.details)

        run_logger.set_stage("COMPARISON")
        run_logger.log_table("Estimator comparison", result.table().set_index("estimator"))
        written = write_analysis_outputs(result, config.out_dir, inputs)
        exec_log.add("WRITE", "ok", f"{len(written)} files")
        run_logger.log_success(f"k* = {result.selection.k_star}; outputs in {config.out_dir}")
        success = True
    except PipelineStageError as exc:
        exec_log.add(exc.stage, "failed", str(exc.cause))
        logger.error(str(exc))
    except ConfigError:
        raise
    except EcBorrowError as exc:
        exec_log.add("LOAD", "failed", str(exc))
        run_logger.log_error(str(exc))
        logger.error(f"{type(exc).__name__}: {exc}")
    finally:
        exec_log.save()

    print_summary("analyze", config.out_dir, start, written, success)
    return 0 if success else 1


def cmd_mc(mechanism: str, reps: int, n_rct: Optional[int], n_ec: Optional[int], config: AnalysisConfig,
           seed: int, reference: Optional[str], workers: int, out_dir: str, progress: bool = True) -> int:
    start = time.time()
    exec_log = ExecutionLog(out_dir, "mc")
    default_rct, default_ec = DEFAULT_SIZES[mechanism]
    n_rct, n_ec = n_rct or default_rct, n_ec or default_ec
    if reference not in (None, "aipw", "truth"):
        reference = float(AnalysisConfig.parse_reference(reference))

    written: list[str] = []
    try:
        summary = monte_carlo(mechanism, reps, n_rct, n_ec, config=config, seed=seed, reference=reference,
                              max_workers=workers, progress=progress)
    except EcBorrowError as exc:
        exec_log.add("MONTE_CARLO", "failed", str(exc))
        exec_log.save()
        logger.error(f"{type(exc).__name__}: {exc}")
        print_summary("mc", out_dir, start, written, success=False)
        return 1
    exec_log.add("MONTE_CARLO", "ok", f"{reps - summary.n_failed}/{reps} replicates")

    out = Path(out_dir)
    acceptance = evaluate_acceptance(mechanism, summary.records, summary.true_ate)
    acceptance["failed_replicates"] = summary.n_failed
    acceptance["settings"] = {"reps": reps, "n_rct": n_rct, "n_ec": n_ec, "seed": seed,
                              "reference": reference if reference is not None else "default",
                              "calibration": config.calibration, "regressor": config.regressor}
    written += [
        str(write_frame(summary.to_frame(), out / "mc_summary.csv")),
        str(write_frame(summary.records, out / "mc_records.csv")),
        str(write_json(acceptance, out / "acceptance.json")),
    ]
    exec_log.add("ACCEPTANCE", "passed" if acceptance["passed"] else "not met",
                 ", ".join(c["name"] for c in acceptance["criteria"] if not c["passed"]))
    exec_log.save()

    run_logger = RunLogger(out_dir, title=f"ecborrow mc {mechanism}", quiet=not progress)
    run_logger.set_stage("MONTE_CARLO")
    run_logger.log_table(f"{mechanism}: {reps} replicates (true ATE {summary.true_ate:.4f})",
                         summary.to_frame(extras=True).set_index("estimator"))
    for c in acceptance["criteria"]:
        mark = "pass" if c["passed"] else "FAIL"
        run_logger.log_step(f"[{mark}] {c['name']}", f"{c['value']} (threshold {c['threshold']})")
        if not c["passed"]:
            run_logger.log_warning(f"acceptance criterion {c['name']} not met")
    for note in acceptance["notes"]:
        run_logger.log_warning(note)
    print_summary("mc", out_dir, start, written, success=True)
    return 0


def cmd_aic(rct_csv: str, family: Optional[str], out_dir: str) -> int:
    rct = read_rct_csv(rct_csv, family=family)
    fam = family or ("binomial" if rct.outcome_kind.value == "binary" else "gaussian")
    payload = aic_union(rct, fam)
    payload["rct"] = {"path": rct_csv, "sha256": file_digest(rct_csv)}
    path = write_json(payload, Path(out_dir) / "aic.json")
    print(json.dumps({k: payload[k] for k in ("treated", "control", "union")}, indent=2))
    logger.info(f"AIC selection written to {path}")
    return 0


# ── Argument parsing ─────────────────────────────────────────────

def _add_analysis_flags(p: argparse.ArgumentParser, with_paths: bool = True) -> None:
    if with_paths:
        p.add_argument("--rct", metavar="CSV", help="RCT data file (covariates, a, y)")
        p.add_argument("--ec", metavar="CSV", help="External-control data file (covariates, y)")
    p.add_argument("--config", metavar="JSON", help="Settings file; flags override its values")
    p.add_argument("--family", choices=FAMILIES, default=None, help="Outcome family (default: inferred)")
    p.add_argument("--trim", type=float, default=None, help="Propensity clamp, in (0, 0.5) (default 0.01)")
    p.add_argument("--regressor", choices=REGRESSORS, default=None, help="Outcome regression for AIPW")
    p.add_argument("--k-vector", dest="k_vector", default=None,
                   help="'auto', a list '0,10,20', or a range 'start:stop:step'")
    p.add_argument("--calibration", choices=CALIBRATIONS, default=None, help="EC outcome calibration")
    p.add_argument("--known-ps", dest="known_ps", type=float, default=None, metavar="P",
                   help="Known randomization probability for the RCT-only AIPW")
    p.add_argument("--delta", type=int, default=None, help="Half-width of the sensitivity sweep around k*")
    p.add_argument("--seed", type=int, default=None, help="Seed for any resampling")
    p.add_argument("--threads", type=int, default=None, help="Worker cap (default: $ECBORROW_THREADS or 1)")
    p.add_argument("--verbose", action="store_true", default=None, help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecborrow",
        description=f"ecborrow v{__version__} — adaptive borrowing of external controls",
    )
    parser.add_argument("--version", "-v", action="version", version=f"ecborrow v{__version__}")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    gen = subparsers.add_parser("generate", help="Simulate an RCT / EC dataset pair")
    gen.add_argument("--mech", choices=MECHANISMS, default="demo")
    gen.add_argument("--n-rct", dest="n_rct", type=int, default=None)
    gen.add_argument("--n-ec", dest="n_ec", type=int, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default="ecborrow_data")

    ana = subparsers.add_parser("analyze", help="Run AIB (and CAIB) on a dataset pair")
    _add_analysis_flags(ana)
    ana.add_argument("--reference", default=None, help="'aipw' or a literal value")
    ana.add_argument("--aic", action="store_true", default=None,
                     help="Restrict covariates to the union of per-arm AIC selections")
    ana.add_argument("--out", default=None, help="Output directory")
    ana.add_argument("--quiet", action="store_true", help="No console tables")

    mc = subparsers.add_parser("mc", help="Monte Carlo study of one mechanism")
    _add_analysis_flags(mc, with_paths=False)
    mc.add_argument("--mech", choices=MECHANISMS, required=True)
    mc.add_argument("--reps", type=int, default=200)
    mc.add_argument("--n-rct", dest="n_rct", type=int, default=None)
    mc.add_argument("--n-ec", dest="n_ec", type=int, default=None)
    mc.add_argument("--reference", default=None,
                    help="'truth', 'aipw' or a literal value (default: truth)")
    mc.add_argument("--out", default="ecborrow_mc")
    mc.add_argument("--no-progress", dest="no_progress", action="store_true")

    aic = subparsers.add_parser("aic", help="Forward-AIC covariate selection per RCT arm")
    aic.add_argument("--rct", required=True, metavar="CSV")
    aic.add_argument("--family", choices=FAMILIES, default=None)
    aic.add_argument("--out", default=".")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2

    _configure_logging(bool(getattr(args, "verbose", False)), quiet_modules=args.command == "mc")
    try:
        if args.command == "generate":
            files = cmd_generate(args.mech, args.n_rct, args.n_ec, args.seed, args.out)
            for f in files:
                print(f"  📝 {f}")
            return 0

        if args.command == "analyze":
            return cmd_analyze(build_config(args), quiet=args.quiet)

        if args.command == "mc":
            # `reference` here may be 'truth', which the analysis config does not know
            reference, args.reference = args.reference, None
            config = build_config(args, base=AnalysisConfig(calibration="linear"))
            seed = args.seed if args.seed is not None else config.seed
            return cmd_mc(args.mech, args.reps, args.n_rct, args.n_ec, config, seed, reference,
                          workers=config.max_workers, out_dir=args.out, progress=not args.no_progress)

        if args.command == "aic":
            return cmd_aic(args.rct, args.family, args.out)
    except ConfigError as exc:
        print(f"ecborrow: configuration error: {exc}", file=sys.stderr)
        return 2
    except EcBorrowError as exc:
        print(f"ecborrow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
