"""Command-line front end: solve, power, simulate, and sweep subcommands.

``solve`` writes the optimal policy with its stationary distribution, an
analytic metrics row, and a verification report. ``power`` maps a policy
file to thresholds and average powers. ``simulate`` runs the configured
scheme over a seed list, one CSV row per seed plus an aggregate. ``sweep``
walks a parameter grid with all schemes on shared arrival sample paths and
emits a CSV sufficient to replot the throughput, delay, and power curves
(optionally as SVG via --emit-plots).

Exit codes: 0 success, 2 infeasible instance, 3 configuration error,
4 numerical failure. Set TWRONC_LOG=INFO or DEBUG for progress logging.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    ScenarioConfig,
    SweepSpec,
    apply_sweep_value,
    default_config,
    load_config,
)
from .lp import assemble_lp, recover_policy, solve_lp, verify_solution, write_lp_text
from .model import (
    ChainError,
    Policy,
    PolicyError,
    StationaryDistribution,
    SystemParams,
    analytic_metrics,
)
from .policyfile import PolicyFileError, load_policy, save_policy
from .power import (
    power_profile,
    snr_targets,
    state_power,
    threshold_driven_average,
    thresholds_from_policy,
)
from .sim import SimConfig, SimulationError, simulate

log = logging.getLogger("twronc")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4

RESULT_COLUMNS = [
    "sweep_variable", "sweep_value",
    "lambda_a", "lambda_b", "n_a", "n_b", "d_max", "rate_r", "scale_a", "scale_b",
    "scheme", "mode", "seed",
    "mu1", "mu1_se", "mu2", "mu2_se", "mu_tot",
    "mean_queue", "mean_delay", "mean_delay_se",
    "power_a", "power_a_se", "power_b", "power_b_se", "power_sum", "clipped_fraction",
    "power_a_policy_pi", "power_b_policy_pi",
    "packets_in_a", "packets_in_b", "packets_out_a", "packets_out_b",
    "status", "error",
]

POWER_COLUMNS = [
    "lambda_a", "lambda_b", "n_a", "n_b", "d_max", "rate_r", "scale_a", "scale_b",
    "pi_source", "avg_power_a", "avg_power_b", "avg_power_sum",
    "max_factorization_residual",
]

# fields averaged across seeds in aggregate rows; the paired _se column gets
# the standard error of the seed means
_AGG_FIELDS = [
    ("mu1", "mu1_se"), ("mu2", "mu2_se"), ("mu_tot", None),
    ("mean_queue", None), ("mean_delay", "mean_delay_se"),
    ("power_a", "power_a_se"), ("power_b", "power_b_se"),
    ("power_sum", None), ("clipped_fraction", None),
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(float(value))  # builtin float: repr round-trips exactly
    return str(value)


def _write_csv(path: Path, columns: list[str], rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])


def _base_row(params: SystemParams, sweep_variable: str | None = None,
              sweep_value: float | None = None) -> dict:
    return {
        "sweep_variable": sweep_variable,
        "sweep_value": sweep_value,
        "lambda_a": params.lambda_a,
        "lambda_b": params.lambda_b,
        "n_a": params.n_a,
        "n_b": params.n_b,
        "d_max": params.d_max,
        "rate_r": params.rate_r,
        "scale_a": params.scale_a,
        "scale_b": params.scale_b,
        "status": "ok",
        "error": None,
    }


def _analytic_row(params: SystemParams, policy: Policy, pi: StationaryDistribution,
                  **base) -> dict:
    metrics = analytic_metrics(pi, policy, params)
    avg_a, avg_b, _table = threshold_driven_average(policy, pi, params)
    profile = power_profile(policy, pi, params)
    row = _base_row(params, **base)
    row.update(
        scheme="optimal-policy", mode="analytic", seed="analytic",
        mu1=metrics.mu1, mu2=metrics.mu2, mu_tot=metrics.mu_tot,
        mean_queue=metrics.mean_queue, mean_delay=metrics.mean_delay,
        power_a=avg_a, power_b=avg_b, power_sum=avg_a + avg_b,
        power_a_policy_pi=profile.avg_power_a, power_b_policy_pi=profile.avg_power_b,
        status="optimal",
    )
    return row


def _report_row(params: SystemParams, report, **base) -> dict:
    row = _base_row(params, **base)
    row.update(
        scheme=report.scheme, mode=report.mode, seed=report.seed,
        mu1=report.mu1_hat, mu1_se=report.mu1_se,
        mu2=report.mu2_hat, mu2_se=report.mu2_se,
        mu_tot=report.mu_tot_hat,
        mean_queue=report.mean_queue_hat,
        mean_delay=report.mean_delay_hat, mean_delay_se=report.mean_delay_se,
        power_a=report.avg_power_a_hat, power_a_se=report.avg_power_a_se,
        power_b=report.avg_power_b_hat, power_b_se=report.avg_power_b_se,
        power_sum=report.avg_power_a_hat + report.avg_power_b_hat,
        clipped_fraction=report.clipped_fraction,
        packets_in_a=report.packets_in_a, packets_in_b=report.packets_in_b,
        packets_out_a=report.packets_out_a, packets_out_b=report.packets_out_b,
    )
    return row


def _aggregate_row(rows: list[dict]) -> dict:
    agg = dict(rows[0])
    agg["seed"] = "aggregate"
    for col in ("packets_in_a", "packets_in_b", "packets_out_a", "packets_out_b"):
        agg[col] = None
    for field, se_field in _AGG_FIELDS:
        values = [r[field] for r in rows
                  if r.get(field) is not None and not math.isnan(r[field])]
        if not values:
            agg[field] = math.nan
            continue
        agg[field] = float(np.mean(values))
        if se_field:
            agg[se_field] = (float(np.std(values, ddof=1) / math.sqrt(len(values)))
                             if len(values) > 1 else math.nan)
    return agg


def _solve_instance(params: SystemParams):
    """Assemble and solve one instance; returns (solution, policy, pi)."""
    problem = assemble_lp(params)
    solution = solve_lp(problem)
    if solution.status != "optimal":
        return solution, None, None
    policy, pi = recover_policy(solution, params)
    return solution, policy, pi


def _scenario(args, with_sweep: bool = False) -> ScenarioConfig:
    config = load_config(args.config) if args.config else default_config(with_sweep)
    if getattr(args, "seeds", None):
        seeds = tuple(int(s.strip()) for s in args.seeds.split(",") if s.strip())
        config = ScenarioConfig(params=config.params,
                                sim=type(config.sim)(
                                    horizon=config.sim.horizon, warmup=config.sim.warmup,
                                    seeds=seeds, power_cap=config.sim.power_cap,
                                    relay_buffer=config.sim.relay_buffer),
                                sweep=config.sweep, output=config.output)
    return config


def _out_dir(args, config: ScenarioConfig) -> Path:
    return Path(args.out) if args.out else Path(config.output.directory)


def cmd_solve(args) -> int:
    config = _scenario(args)
    out = _out_dir(args, config)
    params = config.params
    problem = assemble_lp(params)
    if args.dump_lp:
        out.mkdir(parents=True, exist_ok=True)
        (out / "lp_dump.txt").write_text(write_lp_text(problem))
    solution = solve_lp(problem)
    if solution.status == "infeasible":
        print(f"infeasible: {solution.certificate}", file=sys.stderr)
        return EXIT_INFEASIBLE
    if solution.status != "optimal":
        print(f"solver failure: {solution.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    policy, pi = recover_policy(solution, params)
    verification = verify_solution(solution, params)
    out.mkdir(parents=True, exist_ok=True)
    save_policy(out / "policy.txt", params, policy, pi)
    (out / "verification.txt").write_text(verification.summary() + "\n")
    _write_csv(out / "metrics.csv", RESULT_COLUMNS, [_analytic_row(params, policy, pi)])
    log.info("solve: objective %.6f, delay %.4f <= %.4f",
             solution.objective, verification.delay_value, params.d_max)
    print(f"optimal idle-slot fraction {solution.objective!r}; wrote {out}/policy.txt")
    if not verification.passed:
        print(f"verification FAILED:\n{verification.summary()}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_power(args) -> int:
    config = _scenario(args)
    out = _out_dir(args, config)
    params, policy, pi = load_policy(args.policy)
    targets = snr_targets(params.rate_r)
    table = thresholds_from_policy(policy, pi, params.scale_a, params.scale_b)
    power_a, power_b = state_power(table, targets)
    profile = power_profile(policy, pi, params)
    chan_a, chan_b, _ = threshold_driven_average(policy, pi, params)

    out.mkdir(parents=True, exist_ok=True)
    lines = ["# twronc thresholds v1", "# i j p q h_th_a h_th_b residual power_a power_b pi"]
    for i in range(params.n_a + 1):
        for j in range(params.n_b + 1):
            lines.append(" ".join(repr(float(v)) for v in (
                i, j, table.p[i, j], table.q[i, j], table.h_th_a[i, j], table.h_th_b[i, j],
                table.residual[i, j], power_a[i, j], power_b[i, j], pi.pi[i, j],
            )))
    (out / "thresholds.txt").write_text("\n".join(lines) + "\n")

    def power_row(source, avg_a, avg_b):
        return {
            "lambda_a": params.lambda_a, "lambda_b": params.lambda_b,
            "n_a": params.n_a, "n_b": params.n_b, "d_max": params.d_max,
            "rate_r": params.rate_r, "scale_a": params.scale_a, "scale_b": params.scale_b,
            "pi_source": source, "avg_power_a": avg_a, "avg_power_b": avg_b,
            "avg_power_sum": avg_a + avg_b,
            "max_factorization_residual": table.max_residual,
        }

    _write_csv(out / "power.csv", POWER_COLUMNS, [
        power_row("policy", profile.avg_power_a, profile.avg_power_b),
        power_row("threshold-chain", chan_a, chan_b),
    ])
    print(f"average power (threshold-chain): A {chan_a!r}, B {chan_b!r}; "
          f"max factorization residual {table.max_residual!r}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = _scenario(args)
    out = _out_dir(args, config)
    params = config.params
    scheme = args.scheme or "optimal-policy"
    mode = args.mode or "probability-driven"
    policy = pi = thresholds = None
    if scheme == "optimal-policy":
        if not args.policy:
            raise ConfigError("scheme optimal-policy requires --policy")
        params, policy, pi = load_policy(args.policy)
        if mode == "channel-driven":
            thresholds = thresholds_from_policy(policy, pi, params.scale_a, params.scale_b)
    rows = []
    for seed in config.sim.seeds:
        sim_config = SimConfig(
            params=params, scheme=scheme, mode=mode if scheme == "optimal-policy" else
            "probability-driven", horizon=config.sim.horizon, warmup=config.sim.warmup,
            seed=seed, power_cap=config.sim.power_cap, relay_buffer=config.sim.relay_buffer,
        )
        report = simulate(sim_config, policy=policy, thresholds=thresholds)
        if scheme != "optimal-policy":
            report_row = _report_row(params, report)
            report_row["mode"] = None
        else:
            report_row = _report_row(params, report)
        rows.append(report_row)
        log.info("simulate seed %s: mu1 %.4f mu2 %.4f delay %.4f",
                 seed, report.mu1_hat, report.mu2_hat, report.mean_delay_hat)
    rows.append(_aggregate_row(rows))
    _write_csv(out / "simulation.csv", RESULT_COLUMNS, rows)
    print(f"wrote {out}/simulation.csv ({len(rows)} rows)")
    return EXIT_OK


def _sweep_point(task) -> list[dict]:
    """All rows for one grid point; runs in a worker process.

    Any failure at the point (infeasible budget, solver or simulation
    trouble) becomes a row with status/error set; the sweep carries on.
    """
    config, variable, value, modes = task
    params = apply_sweep_value(config.params, variable, value)
    base = dict(sweep_variable=variable, sweep_value=value)

    def error_row(status, error):
        row = _base_row(params, **base)
        row.update(scheme="optimal-policy", mode="analytic", seed="analytic",
                   status=status, error=error)
        return [row]

    try:
        solution, policy, pi = _solve_instance(params)
        if solution.status != "optimal":
            return error_row(solution.status, solution.certificate or solution.message)
        rows: list[dict] = [_analytic_row(params, policy, pi, **base)]
        thresholds = thresholds_from_policy(policy, pi, params.scale_a, params.scale_b)
        for scheme in ("optimal-policy", "random-ma", "combined-ma"):
            scheme_modes = modes if scheme == "optimal-policy" else ["probability-driven"]
            for mode in scheme_modes:
                seed_rows = []
                for seed in config.sim.seeds:
                    sim_config = SimConfig(
                        params=params, scheme=scheme, mode=mode,
                        horizon=config.sim.horizon, warmup=config.sim.warmup,
                        seed=seed, power_cap=config.sim.power_cap,
                        relay_buffer=config.sim.relay_buffer)
                    report = simulate(sim_config, policy=policy, thresholds=thresholds)
                    row = _report_row(params, report, **base)
                    if scheme != "optimal-policy":
                        row["mode"] = None
                    seed_rows.append(row)
                rows.extend(seed_rows)
                rows.append(_aggregate_row(seed_rows))
        return rows
    except Exception as exc:  # noqa: BLE001  (row-level isolation by design)
        return error_row("error", str(exc))


def cmd_sweep(args) -> int:
    config = _scenario(args, with_sweep=True)
    if config.sweep is None:
        raise ConfigError("sweep requires a [sweep] section (or no --config for defaults)")
    out = _out_dir(args, config)
    modes = [args.mode] if args.mode else ["probability-driven", "channel-driven"]
    sweep: SweepSpec = config.sweep
    tasks = [(config, sweep.variable, value, modes) for value in sweep.grid()]
    workers = int(os.environ.get("TWRONC_WORKERS", "0")) or min(len(tasks), os.cpu_count() or 1)
    log.info("sweep: %d points of %s, %d worker(s)", len(tasks), sweep.variable, workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(task) for task in tasks]
    rows = [row for point_rows in results for row in point_rows]  # grid order
    _write_csv(out / "sweep.csv", RESULT_COLUMNS, rows)
    print(f"wrote {out}/sweep.csv ({len(rows)} rows)")
    if args.emit_plots or "svg" in config.output.formats:
        emit_plots(out / "sweep.csv", out)
        print(f"wrote plots to {out}")
    return EXIT_OK


def emit_plots(csv_path: Path, out_dir: Path):
    """Render throughput/delay/power curves from a sweep CSV (convenience)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    curves: dict[str, list[tuple[float, dict]]] = {}
    for row in rows:
        if row["seed"] not in ("analytic", "aggregate") or not row["sweep_value"]:
            continue
        label = row["scheme"] if not row["mode"] else f"{row['scheme']} ({row['mode']})"
        curves.setdefault(label, []).append((float(row["sweep_value"]), row))
    specs = [
        ("mu_tot", "total throughput (packets/slot)", "throughput.svg"),
        ("mean_delay", "mean delay (slots)", "delay.svg"),
        ("power_sum", "average power (A + B)", "power.svg"),
    ]
    for field, ylabel, filename in specs:
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, points in sorted(curves.items()):
            xs = [x for x, row in points if row.get(field)]
            ys = [float(row[field]) for _x, row in points if row.get(field)]
            if xs:
                ax.plot(xs, ys, marker="o", label=label)
        ax.set_xlabel(rows[0]["sweep_variable"] if rows else "sweep value")
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.4)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_dir / filename)
        plt.close(fig)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twronc",
        description="Delay-constrained throughput-optimal opportunistic "
                    "network coding for a buffered two-way relay uplink.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="scenario config file (INI)")
        p.add_argument("--out", help="output directory (overrides [output] directory)")

    p_solve = sub.add_parser("solve", help="solve the policy optimization")
    common(p_solve)
    p_solve.add_argument("--dump-lp", action="store_true",
                         help="also write the LP interchange dump")
    p_solve.set_defaults(func=cmd_solve)

    p_power = sub.add_parser("power", help="thresholds and average powers for a policy")
    common(p_power)
    p_power.add_argument("--policy", required=True, help="policy file from solve")
    p_power.set_defaults(func=cmd_power)

    p_sim = sub.add_parser("simulate", help="Monte Carlo simulation of one scheme")
    common(p_sim)
    p_sim.add_argument("--policy", help="policy file (required for optimal-policy)")
    p_sim.add_argument("--scheme", choices=["optimal-policy", "random-ma", "combined-ma"])
    p_sim.add_argument("--mode", choices=["probability-driven", "channel-driven"])
    p_sim.add_argument("--seeds", help="comma-separated seed list (overrides config)")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="parameter sweep over all schemes")
    common(p_sweep)
    p_sweep.add_argument("--seeds", help="comma-separated seed list (overrides config)")
    p_sweep.add_argument("--mode", choices=["probability-driven", "channel-driven"],
                         help="restrict the optimal-policy simulations to one mode")
    p_sweep.add_argument("--emit-plots", action="store_true",
                         help="render SVG curves from the sweep CSV")
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def _setup_logging():
    level_name = os.environ.get("TWRONC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PolicyFileError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChainError, SimulationError, PolicyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
