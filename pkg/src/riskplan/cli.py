"""Command-line front end.

Subcommands: `run` (episodes/sweeps into a results directory),
`report` (metrics and plot data from stored episodes), `inspect`
(render one diagnostics file), `validate-config`.

Exit codes: 0 ok, 1 usage/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import yaml

from . import benchmark
from .benchmark import (EPISODE_COLUMNS, PLANNERS, read_episodes_csv,
                        run_sweep, sweep_metrics, write_diagnostics,
                        write_episodes_csv, write_metrics_csv)
from .config import ConfigError, config_to_dict, default_config, load_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

RESULTS_ENV = "RISKPLAN_RESULTS"


class UsageError(ValueError):
    pass


def _results_root(args) -> str:
    if args.out:
        return args.out
    return os.environ.get(RESULTS_ENV, "results")


def _load(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = default_config(args.scenario or "freeway_enter")
    return cfg


def _apply_overrides(cfg, args):
    if getattr(args, "beta", None) is not None:
        if not 0.0 <= args.beta <= 1.0:
            raise UsageError(f"beta must lie in [0, 1], got {args.beta}")
        cfg.sweep.betas = (args.beta,)
    if getattr(args, "planner", None) is not None:
        if args.planner not in PLANNERS:
            raise UsageError(
                f"unknown planner {args.planner!r}; choose from {sorted(PLANNERS)}")
        cfg.sweep.planners = (args.planner,)
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise UsageError("trials must be >= 1")
        cfg.scenario.trials = args.trials
    if getattr(args, "seed", None) is not None:
        cfg.scenario.master_seed = args.seed
    if getattr(args, "iterations", None) is not None:
        if args.iterations < 1:
            raise UsageError("iterations must be >= 1")
        cfg.planner.iterations = args.iterations
    if getattr(args, "execute_mode", None) is not None:
        cfg.scenario.execute_mode = args.execute_mode
    cfg.validate()
    return cfg


def _run_id(cfg_dict: dict) -> str:
    blob = json.dumps(cfg_dict, sort_keys=True).encode()
    return "run-" + hashlib.sha256(blob).hexdigest()[:12]


def cmd_run(args) -> int:
    cfg = _apply_overrides(_load(args), args)
    cfg_dict = config_to_dict(cfg)
    run_id = args.run_id or _run_id(cfg_dict)
    out_dir = os.path.join(_results_root(args), run_id)
    os.makedirs(out_dir, exist_ok=True)

    progress = None
    if args.verbose:
        def progress(rec):
            print(f"  {rec.planner} beta={rec.beta:g} trial={rec.trial}: "
                  f"{rec.outcome} ({rec.steps} steps)")

    records = run_sweep(cfg, jobs=args.jobs, record_diagnostics=not args.no_diagnostics,
                        progress=progress)
    write_episodes_csv(os.path.join(out_dir, "episodes.csv"), records)
    reports = sweep_metrics(records, cfg)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), reports)
    if not args.no_diagnostics:
        write_diagnostics(os.path.join(out_dir, "diagnostics"), records)

    config_blob = yaml.safe_dump(cfg_dict, sort_keys=True)
    with open(os.path.join(out_dir, "config.yaml"), "w") as fh:
        fh.write(config_blob)
    manifest = {
        "run_id": run_id,
        "config_sha256": hashlib.sha256(config_blob.encode()).hexdigest(),
        "master_seed": cfg.scenario.master_seed,
        "episodes": len(records),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    print(f"wrote {len(records)} episodes to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _svg_line_chart(series: dict, title: str, x_label: str, y_label: str,
                    width=480, height=320, y_max=None) -> str:
    """Minimal multi-series line chart."""
    pad = 50
    xs = sorted({x for pts in series.values() for x, _ in pts})
    if not xs:
        return "<svg xmlns='http://www.w3.org/2000/svg'/>"
    x_lo, x_hi = min(xs), max(xs)
    ys = [y for pts in series.values() for _, y in pts]
    y_lo, y_hi = 0.0, (y_max if y_max is not None else max(ys + [1e-9]) * 1.1)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def px(x):
        return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    colors = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#f39c12", "#555555"]
    parts = [f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>",
             f"<text x='{width/2:.0f}' y='18' text-anchor='middle' font-size='13'>{title}</text>",
             f"<line x1='{pad}' y1='{height-pad}' x2='{width-pad}' y2='{height-pad}' stroke='black'/>",
             f"<line x1='{pad}' y1='{pad}' x2='{pad}' y2='{height-pad}' stroke='black'/>",
             f"<text x='{width/2:.0f}' y='{height-12}' text-anchor='middle' font-size='11'>{x_label}</text>",
             f"<text x='14' y='{height/2:.0f}' text-anchor='middle' font-size='11' "
             f"transform='rotate(-90 14 {height/2:.0f})'>{y_label}</text>"]
    for x in xs:
        parts.append(f"<text x='{px(x):.1f}' y='{height-pad+14:.1f}' text-anchor='middle' "
                     f"font-size='9'>{x:g}</text>")
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = colors[i % len(colors)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in sorted(pts))
        dash = " stroke-dasharray='4,3'" if name == "reference" else ""
        parts.append(f"<polyline fill='none' stroke='{color}'{dash} points='{coords}'/>")
        parts.append(f"<text x='{width-pad+4}' y='{pad + 14*i}' font-size='10' "
                     f"fill='{color}'>{name}</text>")
    parts.append("</svg>")
    return "\n".join(parts)


def cmd_report(args) -> int:
    episodes_path = os.path.join(args.results_dir, "episodes.csv")
    if not os.path.exists(episodes_path):
        raise UsageError(f"no episodes.csv in {args.results_dir}")
    records = read_episodes_csv(episodes_path)
    if not records:
        raise UsageError("no episodes to report")
    cfg_path = os.path.join(args.results_dir, "config.yaml")
    cfg = load_config(cfg_path) if os.path.exists(cfg_path) else default_config()

    reports = sweep_metrics(records, cfg)
    write_metrics_csv(os.path.join(args.results_dir, "metrics.csv"), reports)

    report_dir = os.path.join(args.results_dir, "report")
    os.makedirs(report_dir, exist_ok=True)

    beta_star_series = {}
    tw_series = {}
    betas = sorted({rep.beta for rep in reports})
    for rep in reports:
        beta_star_series.setdefault(rep.planner, []).append((rep.beta, rep.beta_star))
        tw_series.setdefault(rep.planner, []).append((rep.beta, rep.t_w))
    beta_star_series["reference"] = [(b, b) for b in betas]

    with open(os.path.join(report_dir, "beta_star.csv"), "w", newline="") as fh:
        fh.write("planner,beta,beta_star\n")
        for name, pts in sorted(beta_star_series.items()):
            for b, v in sorted(pts):
                fh.write(f"{name},{b:g},{v:.6f}\n")
    with open(os.path.join(report_dir, "waiting_time.csv"), "w", newline="") as fh:
        fh.write("planner,beta,t_w\n")
        for name, pts in sorted(tw_series.items()):
            for b, v in sorted(pts):
                fh.write(f"{name},{b:g},{v:.6f}\n")
    with open(os.path.join(report_dir, "outcomes.csv"), "w", newline="") as fh:
        fh.write("planner,beta,p_suc,p_col,p_max\n")
        for rep in reports:
            fh.write(f"{rep.planner},{rep.beta:g},{rep.p_suc:.6f},"
                     f"{rep.p_col:.6f},{rep.p_max:.6f}\n")

    with open(os.path.join(report_dir, "beta_star.svg"), "w") as fh:
        fh.write(_svg_line_chart(beta_star_series, "observed vs allowed risk",
                                 "beta", "beta*", y_max=1.0))
    with open(os.path.join(report_dir, "waiting_time.svg"), "w") as fh:
        fh.write(_svg_line_chart(tw_series, "expected waiting time", "beta", "t_w [s]"))

    for rep in reports:
        print(f"{rep.planner:18s} beta={rep.beta:4.2f}  P_suc={rep.p_suc:5.2f}  "
              f"P_col={rep.p_col:5.2f}  P_max={rep.p_max:5.2f}  "
              f"T_suc={rep.t_suc_mean:5.2f}  beta*={rep.beta_star:5.3f}  "
              f"t_w={rep.t_w:6.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def cmd_inspect(args) -> int:
    try:
        with open(args.diagnostics) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read diagnostics: {exc}") from exc
    schema = payload.get("schema")
    if schema != "riskplan-diagnostics/1":
        raise UsageError(f"unsupported diagnostics schema {schema!r} "
                         "(expected riskplan-diagnostics/1)")
    steps = payload["steps"]
    idx = args.step
    if not 0 <= idx < len(steps):
        raise UsageError(f"step {idx} out of range (0..{len(steps) - 1})")
    step = steps[idx]
    print(f"planner={payload['planner']} beta={payload['beta']:g} "
          f"trial={payload['trial']} outcome={payload['outcome']} "
          f"t={step['t']:.1f}s chosen={step['chosen']}")
    print(f"{'action':>12s} {'prob':>6s} {'Q_R':>8s} {'rho_env':>8s} "
          f"{'rho_col':>8s} {'N':>6s}")
    for a, p, q, re, rc, n in zip(step["actions"], step["probs"], step["q_r"],
                                  step["rho_env"], step["rho_col"], step["visits"]):
        print(f"{a:>12s} {p:6.3f} {q:8.4f} {re:8.4f} {rc:8.4f} {n:6d}")
    beta = payload["beta"]
    env_ok = "OK" if step["rho_env_exp"] <= beta + 1e-9 else "VIOLATED"
    col_ok = "OK" if step["rho_col_exp"] <= 0.01 + 1e-9 else "VIOLATED"
    print(f"rho_env_exp={step['rho_env_exp']:.4f} <= beta={beta:g}: {env_ok}; "
          f"rho_col_exp={step['rho_col_exp']:.4f}: {col_ok}; "
          f"lambda=({step['lambda_env']:.3f}, {step['lambda_col']:.3f})"
          + (" [infeasible-fallback]" if step.get("infeasible") else ""))
    return EXIT_OK


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    cfg.validate()
    print(f"config ok: scenario={cfg.scenario.kind} trials={cfg.scenario.trials} "
          f"planners={list(cfg.sweep.planners)} betas={list(cfg.sweep.betas)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskplan",
                                description="Risk-constrained traffic planner benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run episodes and write a results directory")
    run.add_argument("--config", help="experiment config (YAML)")
    run.add_argument("--scenario", choices=["freeway_enter", "left_turn"],
                     help="scenario template when no config file is given")
    run.add_argument("--planner", help=f"planner override: {sorted(PLANNERS)}")
    run.add_argument("--beta", type=float, help="risk level override")
    run.add_argument("--trials", type=int, help="trial count override")
    run.add_argument("--seed", type=int, help="master seed override")
    run.add_argument("--iterations", type=int, help="search iterations override")
    run.add_argument("--execute-mode", choices=["sample", "mode"], dest="execute_mode")
    run.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    run.add_argument("--out", help=f"results root (default ${RESULTS_ENV} or ./results)")
    run.add_argument("--run-id", help="results subdirectory name (default: config hash)")
    run.add_argument("--no-diagnostics", action="store_true")
    run.add_argument("--verbose", action="store_true")
    run.set_defaults(fn=cmd_run)

    rep = sub.add_parser("report", help="compute metrics and plot data")
    rep.add_argument("results_dir")
    rep.set_defaults(fn=cmd_report)

    ins = sub.add_parser("inspect", help="print a stored root policy")
    ins.add_argument("diagnostics")
    ins.add_argument("--step", type=int, default=0)
    ins.set_defaults(fn=cmd_inspect)

    val = sub.add_parser("validate-config", help="parse and check a config file")
    val.add_argument("config")
    val.set_defaults(fn=cmd_validate_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI fault barrier
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
