"""Command-line entry point.

Subcommands:
  generate     roll out the configured behavior policy and write the
               dataset CSV (with logged behavior probabilities) + sidecar
  fit          fit the configured parametric model on a dataset CSV and
               write its JSON parameters
  evaluate     run the full experiment described by a config file and
               write the report JSON
  error-maps   export the per-grid-point model-error comparison CSV
  reproduce    run one of the canned studies: table1 | table2 | consistency

Exit codes: 0 success, 2 config error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import read_dataset_csv, write_dataset_csv, Dataset
from .envs.base import behavior_prob_table, generate_trajectories
from .experiments import (
    ConfigError,
    build_behavior_policy,
    build_env,
    build_eval_policy,
    build_parametric,
    derive_seed,
    emit_error_maps,
    run_experiment,
    validate_config,
)
from .models import model_to_json
from .reproduce import (
    reproduce_consistency,
    reproduce_table1,
    reproduce_table2,
    write_report,
)


def _load_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")


def _cmd_generate(args: argparse.Namespace) -> None:
    cfg = validate_config(_load_config(args.config))
    if args.seed is not None:
        cfg["seed"] = args.seed
    env, handle = build_env(cfg["env"])
    eval_policy = build_eval_policy(cfg, env, handle)
    behavior = build_behavior_policy(cfg, env, handle, eval_policy)
    from .envs.planning_toy import BEHAVIOR_STARTS

    starts = BEHAVIOR_STARTS if cfg["env"]["kind"] == "planning_toy" else None
    trajectories, probs = generate_trajectories(
        env, behavior, cfg["n_behavior_trajectories"],
        seed=derive_seed(cfg["seed"], 0, 0), starts=starts,
    )
    ds = Dataset.from_trajectories(trajectories, env.n_actions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "dataset.csv"
    write_dataset_csv(csv_path, ds, behavior_probs=behavior_prob_table(trajectories, probs))
    print(f"wrote {csv_path} ({len(ds)} transitions, {len(ds.initial_states)} trajectories)")


def _cmd_fit(args: argparse.Namespace) -> None:
    cfg = validate_config(_load_config(args.config))
    ds, _ = read_dataset_csv(args.data)
    if cfg["model"]["kind"] == "env_analytic":
        raise ConfigError("model.kind: analytic models have no parameters to fit")
    _, handle = build_env(cfg["env"])
    model = build_parametric(cfg, ds, handle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "model.json"
    path.write_text(model_to_json(model))
    print(f"wrote {path}")


def _cmd_evaluate(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.mcts_trace:
        cfg["mcts_trace"] = True
    if args.rollout_log:
        cfg["rollout_log"] = True
    report = run_experiment(cfg, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(report.to_json())
    _write_diagnostic_jsonl(report, out)
    print(f"wrote {path}")
    for name, agg in sorted(report.aggregates.items()):
        line = f"  {name}: rmse={agg['rmse']:.6g}"
        if "relative_rmse" in agg:
            line += f" relative={agg['relative_rmse']:.4g}"
        print(line)


def _write_diagnostic_jsonl(report, out: Path) -> None:
    """Per-rollout and per-decision JSON lines, when the config asked for
    them to be collected."""
    rollout_lines = []
    trace_lines = []
    for rec in report.per_repetition:
        for name, est in rec["estimates"].items():
            for row in est.get("rollouts", []):
                rollout_lines.append({"rep": rec["rep"], "estimator": name, **row})
            for row in est.get("mcts_trace", []):
                trace_lines.append({"rep": rec["rep"], "estimator": name, **row})
    if rollout_lines:
        with (out / "rollouts.jsonl").open("w") as fh:
            for row in rollout_lines:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        print(f"wrote {out / 'rollouts.jsonl'}")
    if trace_lines:
        with (out / "mcts_trace.jsonl").open("w") as fh:
            for row in trace_lines:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        print(f"wrote {out / 'mcts_trace.jsonl'}")


def _cmd_schema(args: argparse.Namespace) -> None:
    from .experiments import schema_reference

    print(json.dumps(schema_reference(), indent=1, sort_keys=True))


def _cmd_error_maps(args: argparse.Namespace) -> None:
    cfg = _load_config(args.config)
    grid = {
        "x_range": [args.x_min, args.x_max],
        "y_range": [args.y_min, args.y_max],
        "resolution": args.resolution,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "error_maps.csv"
    rows = emit_error_maps(cfg, grid, path)
    correct = sum(1 for r in rows if r["correct"]) / len(rows)
    print(f"wrote {path} ({len(rows)} rows, correct-selection fraction {correct:.3f})")


def _cmd_reproduce(args: argparse.Namespace) -> None:
    seed = args.seed if args.seed is not None else 0
    if args.which == "table1":
        payload = reproduce_table1(seed=seed, jobs=args.jobs)
        print(f"pattern fraction: {payload['pattern_fraction']:.2f}")
    elif args.which == "table2":
        payload = reproduce_table2(seed=seed, jobs=args.jobs)
        print(f"horizon: {payload['horizon']} (exact match: {payload['exact_match_horizon']})")
        for variant, errs in payload["errors"].items():
            print(f"  {variant}: " + ", ".join(f"{k}={v:.4g}" for k, v in errs.items()))
    else:
        payload = reproduce_consistency(seed=seed, jobs=args.jobs)
        print("median abs error by batch size:", payload["median_abs_error"])
    path = write_report(payload, args.out, f"{args.which}.json")
    print(f"wrote {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moesim",
        description="Batch off-policy evaluation with a mixture-of-experts simulator.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        if config_required:
            p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel repetitions")

    p_gen = sub.add_parser("generate", help="generate behavior data")
    common(p_gen)
    p_gen.set_defaults(fn=_cmd_generate)

    p_fit = sub.add_parser("fit", help="fit the parametric model on a dataset")
    common(p_fit)
    p_fit.add_argument("--data", required=True, help="dataset CSV path")
    p_fit.set_defaults(fn=_cmd_fit)

    p_eval = sub.add_parser("evaluate", help="run a full experiment")
    common(p_eval)
    p_eval.add_argument("--mcts-trace", action="store_true",
                        help="log per-decision planner statistics")
    p_eval.add_argument("--rollout-log", action="store_true",
                        help="log per-rollout returns and model usage")
    p_eval.set_defaults(fn=_cmd_evaluate)

    p_schema = sub.add_parser("schema", help="print the config schema and defaults")
    p_schema.set_defaults(fn=_cmd_schema)

    p_maps = sub.add_parser("error-maps", help="export model-error grids")
    common(p_maps)
    p_maps.add_argument("--x-min", type=float, default=-4.0)
    p_maps.add_argument("--x-max", type=float, default=14.0)
    p_maps.add_argument("--y-min", type=float, default=-1.0)
    p_maps.add_argument("--y-max", type=float, default=15.0)
    p_maps.add_argument("--resolution", type=int, default=20)
    p_maps.set_defaults(fn=_cmd_error_maps)

    p_rep = sub.add_parser("reproduce", help="run a canned study")
    p_rep.add_argument("which", choices=["table1", "table2", "consistency"])
    common(p_rep, config_required=False)
    p_rep.set_defaults(fn=_cmd_reproduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
