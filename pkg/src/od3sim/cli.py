"""Experiment runner: simulate, certify, and emit plot-ready CSV/JSON.

Verbs:
    run             simulate one configuration and certify every bound
    suite           randomized property suite over many seeds
    validate-trace  recompute a config's realized drifts vs its claims
    version         print the package version

Configuration is a JSON file mirroring :class:`RunConfig`; command-line flags
override config fields, and the ``OD3_OUT`` environment variable overrides
every other output-directory source.  Artifacts per run: ``trajectory.csv``
(step-by-step prices, allocations, welfare for both the online loop and the
oracle), ``bounds.csv`` + ``summary.json`` (the certifier's output), and
``meta.json`` (config echo plus derived constants).  Re-running the same
config and seed reproduces byte-identical files.

Exit codes: 0 when every non-flagged certificate passed, 1 on certificate
failure, 2 on bad usage/config/ingestion/solver errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from od3sim import __version__
from od3sim.bounds import BoundReport, run_certificates, welfare_series
from od3sim.model import Dimensions, GlobalParams, derive_global_params
from od3sim.od3 import OnlineState, SignConvention, quadratic_population, run_od3
from od3sim.oracle import OracleError, OracleSolution, curvature_probe, solve_trace
from od3sim.traces import (
    IngestionError,
    SystemTrace,
    attach_targets,
    ingest_capacity_csv,
    rescale_capacities,
    synth_trace,
    validate_trace,
)

__all__ = [
    "RunConfig",
    "PRESETS",
    "SUITE_GRID",
    "SuiteInstance",
    "suite_instance",
    "certify_instance",
    "run_suite",
    "run_experiment",
    "build_problem",
    "main",
]

BUNDLED_CSV = "bundled"  # sentinel accepted by RunConfig.capacity_csv


@dataclass
class RunConfig:
    """One experiment, JSON-serializable; flags override individual fields.

    Fields:
        n_users / n_suppliers: population shape (N, R).
        horizon: steps T; None means "length of the capacity CSV".
        scales: per-user quadratic scale, scalar or length-N list.
        gamma: capacity drift bound: drives synthesis when no CSV is given,
            and serves as the claimed bound for ``validate-trace`` always.
        alpha: target gradient-drift bound for the synthetic target walk
            (and the claimed bound for ``validate-trace``).
        base_target: starting bliss value for every user/supplier coordinate
            (None: uniform random in [0, 10)).
        seed: RNG seed for trace synthesis and probe draws.
        capacity_csv: CSV path, or "bundled" for the packaged sample profile.
        capacity_columns: one column name per supplier.
        capacity_range: optional [lo, hi] affine rescale of the CSV capacities.
        eta: "proven-max", "paper-1overN", or a positive float.
        p0: "warm" (start at p*(0)), "zero", or an explicit length-R list.
        sign: "dual_descent" or "paper_literal".
        out: output directory (overridden by --out, then by $OD3_OUT).
        label: subdirectory name for this run's artifacts.
    """

    n_users: int = 2
    n_suppliers: int = 1
    horizon: int | None = 50
    scales: float | list[float] = 1.0
    gamma: float = 0.0
    alpha: float = 0.0
    base_target: float | None = None
    seed: int = 0
    capacity_csv: str | None = None
    capacity_columns: list[str] = field(default_factory=lambda: ["capacity_mw"])
    capacity_range: list[float] | None = None
    eta: str | float = "proven-max"
    p0: str | list[float] = "warm"
    sign: str = "dual_descent"
    out: str | None = None
    label: str = "run"

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config field(s) {unknown}; known: {sorted(known)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS: dict[str, RunConfig] = {
    # Fixed-point sanity check: static targets, warm start, everything exact.
    "static-smoke": RunConfig(
        n_users=2,
        n_suppliers=1,
        horizon=50,
        gamma=0.0,
        alpha=0.0,
        seed=11,
        eta="proven-max",
        p0="warm",
        label="static-smoke",
    ),
    # Ten users, one supplier, eta = 1/N, real-shaped capacity profile from
    # the bundled CSV rescaled into a 40-50 MW band; eta sits outside the
    # proven step-size range, so envelope certificates come back flagged.
    "sec5": RunConfig(
        n_users=10,
        n_suppliers=1,
        horizon=None,
        gamma=0.45,  # claimed capacity-drift bound for the rescaled profile
        alpha=0.04,
        base_target=6.0,
        seed=20,
        capacity_csv=BUNDLED_CSV,
        capacity_columns=["capacity_mw"],
        capacity_range=[40.0, 50.0],
        eta="paper-1overN",
        p0="zero",
        label="sec5",
    ),
}


# =====================================================================
# Problem construction
# =====================================================================


def _bundled_csv_path() -> Path:
    return Path(str(resources.files("od3sim").joinpath("data/sample_capacity.csv")))


def build_problem(config: RunConfig) -> tuple[SystemTrace, list, GlobalParams, dict]:
    """Materialize (trace, utilities, params, meta) from a config.

    CSV capacities get synthetic targets walked at the configured alpha; pure
    synthetic runs draw both from :func:`od3sim.traces.synth_trace`.
    """
    dims = Dimensions(n_users=config.n_users, n_suppliers=config.n_suppliers)
    meta: dict = {}
    base_targets = None
    if config.base_target is not None:
        base_targets = np.full((dims.n_users, dims.n_suppliers), float(config.base_target))

    if config.capacity_csv is not None:
        path = _bundled_csv_path() if config.capacity_csv == BUNDLED_CSV else Path(
            config.capacity_csv
        )
        if not path.exists():
            raise IngestionError(f"capacity csv not found: {path}")
        csv_trace = ingest_capacity_csv(path, config.capacity_columns)
        meta["capacity_source"] = str(path)
        if config.capacity_range is not None:
            lo, hi = (float(v) for v in config.capacity_range)
            csv_trace, rescale_meta = rescale_capacities(csv_trace, lo, hi)
            meta["capacity_rescale"] = rescale_meta
        horizon = csv_trace.horizon if config.horizon is None else int(config.horizon)
        if horizon > csv_trace.horizon:
            raise ValueError(
                f"horizon {horizon} exceeds csv length {csv_trace.horizon}"
            )
        csv_trace = SystemTrace.from_arrays(
            csv_trace.capacities[:horizon], csv_trace.targets[:horizon]
        )
        walk = synth_trace(
            dims, horizon, gamma=0.0, alpha=config.alpha, seed=config.seed,
            base_targets=base_targets,
        )
        trace = attach_targets(csv_trace, walk.targets)
    else:
        if config.horizon is None:
            raise ValueError("horizon is required when no capacity csv is given")
        trace = synth_trace(
            dims,
            int(config.horizon),
            gamma=config.gamma,
            alpha=config.alpha,
            seed=config.seed,
            base_targets=base_targets,
        )

    utilities = quadratic_population(trace, config.scales)
    params = derive_global_params(utilities, trace)  # eta defaults to proven max
    if config.eta == "proven-max":
        pass
    elif config.eta == "paper-1overN":
        params = params.with_eta(1.0 / trace.n_users)
    else:
        try:
            eta = float(config.eta)
        except (TypeError, ValueError):
            raise ValueError(
                f"eta must be 'proven-max', 'paper-1overN', or a float; got {config.eta!r}"
            ) from None
        if not eta > 0:
            raise ValueError(f"eta must resolve to a positive real, got {eta}")
        params = params.with_eta(eta)
    return trace, utilities, params, meta


def _resolve_p0(config: RunConfig, oracle: Sequence[OracleSolution], r: int) -> np.ndarray:
    if isinstance(config.p0, str):
        if config.p0 == "warm":
            return np.array(oracle[0].price_opt, dtype=float)
        if config.p0 == "zero":
            return np.zeros(r)
        raise ValueError(f"p0 must be 'warm', 'zero', or a list of floats; got {config.p0!r}")
    p0 = np.asarray(config.p0, dtype=float)
    if p0.shape != (r,):
        raise ValueError(f"p0 has shape {p0.shape}, expected ({r},)")
    return p0


# =====================================================================
# Artifact writers
# =====================================================================


def _fmt(x: float) -> str:
    """Shortest round-trip decimal; keeps reruns byte-identical."""
    return repr(float(x))


def _write_trajectory_csv(
    path: Path,
    trace: SystemTrace,
    online: Sequence[OnlineState],
    oracle: Sequence[OracleSolution],
    online_welfare: np.ndarray,
) -> None:
    n, r = trace.n_users, trace.n_suppliers
    header = ["t"]
    header += [f"p_s{k}" for k in range(r)]
    header += [f"p_opt_s{k}" for k in range(r)]
    for i in range(n):
        header += [f"q_u{i}_s{k}" for k in range(r)]
    for i in range(n):
        header += [f"q_opt_u{i}_s{k}" for k in range(r)]
    header += [f"agg_q_s{k}" for k in range(r)]
    header += [f"cap_s{k}" for k in range(r)]
    header += ["welfare_online", "welfare_opt"]
    lines = [",".join(header)]
    for t in range(trace.horizon):
        on, opt = online[t], oracle[t]
        row = [str(t)]
        row += [_fmt(v) for v in on.price]
        row += [_fmt(v) for v in opt.price_opt]
        row += [_fmt(on.allocations[k, i]) for i in range(n) for k in range(r)]
        row += [_fmt(opt.allocations_opt[k, i]) for i in range(n) for k in range(r)]
        row += [_fmt(v) for v in on.aggregate]
        row += [_fmt(v) for v in trace.capacities[t]]
        row += [_fmt(online_welfare[t]), _fmt(opt.welfare_opt)]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _meta_payload(
    config: RunConfig,
    trace: SystemTrace,
    params: GlobalParams,
    report: BoundReport,
    build_meta: dict,
    d0: float,
) -> dict:
    curvature = curvature_probe(
        quadratic_population(trace, config.scales)[0],
        trace.capacities[0],
        seed=config.seed,
    )
    return {
        "version": __version__,
        "config": config.to_dict(),
        "horizon": trace.horizon,
        "realized_gamma": trace.realized_gamma,
        "realized_alpha": trace.realized_alpha,
        "sigma": params.sigma,
        "lipschitz_grad": params.lipschitz_grad,
        "eta": params.eta,
        "eta_max": params.eta_max,
        "eta_in_proven_range": params.eta_in_proven_range,
        "c": report.c,
        "b": report.b,
        "tracking_floor": (
            report.b / (1.0 - report.c) if np.isfinite(report.c) and report.c < 1 else None
        ),
        "lprime": report.lprime,
        "w_constant": report.w_constant,
        "d0": d0,
        "box_lo": [float(v) for v in np.atleast_1d(report.box_lo)],
        "box_hi": [float(v) for v in np.atleast_1d(report.box_hi)],
        "dual_curvature": dataclasses.asdict(curvature),
        **build_meta,
    }


def _print_report(report: BoundReport, out=None) -> None:
    out = out if out is not None else sys.stdout  # late-bound so capture works
    summary = report.summary()
    width = max(len(k) for k in summary)
    for bound_id in sorted(summary):
        s = summary[bound_id]
        status = "PASS" if s["pass_rate"] == 1.0 else "FAIL"
        if s["flagged"]:
            status += "*"
        print(
            f"  {bound_id:<{width}}  {status:<5} rows={s['rows']:<4} "
            f"worst_slack={s['worst_slack']:.3e} at step {s['argmin_step']}",
            file=out,
        )
    if any(s["flagged"] for s in summary.values()):
        print(
            "  (* flagged: diagnostic or out-of-regime rows; they do not gate the exit code)",
            file=out,
        )


def run_experiment(config: RunConfig, out_dir: str | Path) -> int:
    """Simulate, certify, and write artifacts; returns the process exit code."""
    trace, utilities, params, build_meta = build_problem(config)
    sign = SignConvention.parse(config.sign)
    oracle = solve_trace(trace, utilities)
    p0 = _resolve_p0(config, oracle, trace.n_suppliers)
    online = run_od3(trace, utilities, params, p0, sign)
    report = run_certificates(
        trace, utilities, params, online, oracle, sign, probe_seed=config.seed
    )
    d0 = float(np.linalg.norm(p0 - oracle[0].price_opt))

    out_path = Path(out_dir) / config.label
    out_path.mkdir(parents=True, exist_ok=True)
    _write_trajectory_csv(
        out_path / "trajectory.csv", trace, online, oracle, welfare_series(utilities, online)
    )
    report.to_csv(out_path / "bounds.csv")
    (out_path / "summary.json").write_text(report.summary_json() + "\n", encoding="utf-8")
    meta = _meta_payload(config, trace, params, report, build_meta, d0)
    (out_path / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    print(
        f"run '{config.label}': T={trace.horizon} N={trace.n_users} R={trace.n_suppliers} "
        f"eta={params.eta:.6g}"
        + (" (proven range)" if params.eta_in_proven_range else " (OUTSIDE proven range)")
        + f" sign={sign.value} d0={d0:.6g}"
    )
    _print_report(report)
    failures = report.failures()
    print(f"artifacts: {out_path}")
    if failures:
        worst = min(failures, key=lambda r: r.slack)
        print(
            f"overall: FAIL ({len(failures)} certificate row(s) failed; worst "
            f"{worst.bound_id} at step {worst.step}: lhs={worst.lhs:.6g} rhs={worst.rhs:.6g})"
        )
        return 1
    print("overall: PASS")
    return 0


# =====================================================================
# Randomized property suite
# =====================================================================

# Population/drift grid covered round-robin by seed; 54 combinations.
SUITE_GRID: list[tuple[int, int, float, float]] = [
    (n, r, g, a)
    for n in (2, 10, 50)
    for r in (1, 3)
    for g in (0.0, 0.1, 1.0)
    for a in (0.0, 0.1, 1.0)
]

SUITE_HORIZON = 120


@dataclass
class SuiteInstance:
    """One materialized suite case: problem data plus the cold-start price."""

    seed: int
    trace: SystemTrace
    utilities: list
    params: GlobalParams
    oracle: list[OracleSolution]
    p0: np.ndarray


def suite_instance(seed: int, horizon: int = SUITE_HORIZON) -> SuiteInstance:
    """Build suite case ``seed``: grid combo ``seed % 54``, unit scales,
    proven-max step size, and a cold start beyond the tracking floor.

    The start price is p*(0) plus a random direction scaled by
    D = max(1, 1.5 * b/(1-c), 1.5 * max_t ||p*(t)||), so the transient term
    dominates at t=0 regardless of the drift regime.
    """
    n, r, gamma, alpha = SUITE_GRID[seed % len(SUITE_GRID)]
    trace = synth_trace(Dimensions(n_users=n, n_suppliers=r), horizon, gamma, alpha, seed)
    utilities = quadratic_population(trace)
    params = derive_global_params(utilities, trace)
    oracle = solve_trace(trace, utilities)
    rng = np.random.default_rng([seed, 9182736])
    u = rng.normal(size=r)
    norm = float(np.linalg.norm(u))
    u = u / norm if norm > 0 else np.eye(r)[0]
    max_opt = max(float(np.linalg.norm(sol.price_opt)) for sol in oracle)
    d = max(1.0, 1.5 * params.tracking_floor, 1.5 * max_opt)
    p0 = oracle[0].price_opt + d * u
    return SuiteInstance(
        seed=seed, trace=trace, utilities=utilities, params=params, oracle=oracle, p0=p0
    )


def certify_instance(inst: SuiteInstance) -> tuple[list[OnlineState], BoundReport]:
    online = run_od3(inst.trace, inst.utilities, inst.params, inst.p0)
    report = run_certificates(
        inst.trace, inst.utilities, inst.params, online, inst.oracle, probe_seed=inst.seed
    )
    return online, report


def run_suite(seeds: int, horizon: int = SUITE_HORIZON) -> dict:
    """Run ``seeds`` suite cases and aggregate pass rates per bound id."""
    per_bound: dict[str, dict] = {}
    for seed in range(seeds):
        inst = suite_instance(seed, horizon)
        _, report = certify_instance(inst)
        for row in report.rows:
            agg = per_bound.setdefault(
                row.bound_id,
                {
                    "rows": 0,
                    "passed": 0,
                    "flagged": row.flagged,
                    "worst_slack": np.inf,
                    "worst_seed": None,
                    "worst_step": None,
                },
            )
            agg["rows"] += 1
            agg["passed"] += int(row.passed)
            agg["flagged"] = agg["flagged"] or row.flagged
            if row.slack < agg["worst_slack"]:
                agg.update(worst_slack=row.slack, worst_seed=seed, worst_step=row.step)
    for agg in per_bound.values():
        agg["pass_rate"] = agg["passed"] / agg["rows"]
        del agg["passed"]
        agg["worst_slack"] = float(agg["worst_slack"])
    gating = [k for k, v in per_bound.items() if not v["flagged"]]
    return {
        "seeds": seeds,
        "horizon": horizon,
        "grid_size": len(SUITE_GRID),
        "per_bound": per_bound,
        "all_pass": all(per_bound[k]["pass_rate"] == 1.0 for k in gating),
    }


# =====================================================================
# Entry point
# =====================================================================


def _load_config(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ValueError(f"unknown preset {args.preset!r}; have {sorted(PRESETS)}")
        config = dataclasses.replace(PRESETS[args.preset])
    elif getattr(args, "config", None):
        config = RunConfig.from_json(args.config)
    else:
        config = RunConfig()
    if getattr(args, "eta", None) is not None:
        config.eta = args.eta
    if getattr(args, "sign", None) is not None:
        config.sign = args.sign.replace("-", "_")
    if getattr(args, "out", None) is not None:
        config.out = args.out
    return config


def _out_dir(config_out: str | None) -> Path:
    env = os.environ.get("OD3_OUT")
    if env:
        return Path(env)
    return Path(config_out) if config_out else Path("od3sim_out")


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="od3sim",
        description="Simulate the online price-coordination loop and certify its bounds.",
        epilog=(
            "Output directory resolution: $OD3_OUT > --out > config.out > ./od3sim_out. "
            f"Config defaults: {json.dumps(RunConfig().to_dict())}"
        ),
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", metavar="PATH", help="JSON config file (see RunConfig)")
        p.add_argument(
            "--preset", metavar="NAME", help=f"named config: {', '.join(sorted(PRESETS))}"
        )
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument(
            "--eta",
            metavar="VAL",
            help="step size: proven-max | paper-1overN | positive float",
        )
        p.add_argument(
            "--sign",
            choices=["dual-descent", "paper-literal", "dual_descent", "paper_literal"],
            help="price update direction (default dual-descent)",
        )

    p_run = sub.add_parser("run", help="simulate one configuration and certify it")
    add_common(p_run)

    p_suite = sub.add_parser("suite", help="randomized property suite")
    p_suite.add_argument("--seeds", type=int, default=100, metavar="K")
    p_suite.add_argument("--out", metavar="DIR")

    p_val = sub.add_parser(
        "validate-trace", help="check a config's realized drifts against its claims"
    )
    add_common(p_val)

    sub.add_parser("version", help="print the package version")

    args = parser.parse_args(argv)
    try:
        if args.verb == "version":
            print(__version__)
            return 0
        if args.verb == "suite":
            summary = run_suite(args.seeds)
            out = _out_dir(getattr(args, "out", None))
            out.mkdir(parents=True, exist_ok=True)
            path = out / "suite_summary.json"
            path.write_text(
                json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            width = max(len(k) for k in summary["per_bound"])
            for bound_id in sorted(summary["per_bound"]):
                s = summary["per_bound"][bound_id]
                status = "PASS" if s["pass_rate"] == 1.0 else "FAIL"
                if s["flagged"]:
                    status += "*"
                print(
                    f"  {bound_id:<{width}}  {status:<5} pass_rate={s['pass_rate']:.4f} "
                    f"worst_slack={s['worst_slack']:.3e} (seed {s['worst_seed']}, "
                    f"step {s['worst_step']})"
                )
            print(f"suite: {summary['seeds']} seeds -> {path}")
            print(f"overall: {'PASS' if summary['all_pass'] else 'FAIL'}")
            return 0 if summary["all_pass"] else 1
        config = _load_config(args)
        if args.verb == "validate-trace":
            trace, _, _, _ = build_problem(config)
            result = validate_trace(trace, config.gamma, config.alpha)
            print(result.message())
            return 0 if result.passed else 1
        return run_experiment(config, _out_dir(config.out))
    except (ValueError, OracleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
