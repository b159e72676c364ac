"""Command-line pipeline: data generation, model training, experiments, serving.

A typical workspace is built in stages:

    xselector make-data   --out ws/data --seed 7
    xselector train       --data ws/data --out ws/models --eval-code SYN4
    xselector make-manifest --data ws/data --models ws/models --eval-code SYN4
    xselector simulate-logs --workspace ws --scenario high --sessions 12
    xselector train-user-model --workspace ws --scenario high
    xselector experiment  --workspace ws --config experiment.json --out ws/results
    xselector serve       --config ws/service.json --port 8765

`demo` runs every stage with small defaults and writes a ready service config.
Path-valued config entries can be overridden with XSELECTOR_<KEY> environment
variables (e.g. XSELECTOR_LOG_DIR).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import datagen
from .explanations import load_manifest
from .market import load_price_csv, write_price_csv
from .policy import PolicyConfig, load_policy, save_policy, train_policy
from .predictor import (
    PredictorConfig,
    load_predictions_csv,
    load_predictor,
    predictions_for_series,
    save_predictor,
    select_scenarios,
    three_class_accuracy,
    binary_sign_accuracy,
    train_predictor,
)
from .selector import StrategyKind
from .simulate import (
    ExperimentConfig,
    ModelBundle,
    UserPopulation,
    run_experiment,
    write_summary_csv,
)
from .user_model import (
    UserModelConfig,
    cross_validate,
    load_records,
    load_user_model,
    save_records,
    save_user_model,
    train_user_model,
)


def _data_codes(data_dir: Path) -> list[str]:
    return sorted(p.stem.removeprefix("prices_") for p in data_dir.glob("prices_*.csv"))


def _load_series(data_dir: Path, code: str):
    return load_price_csv(data_dir / f"prices_{code}.csv", code=code)


def cmd_make_data(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    codes = args.codes.split(",")
    panel = datagen.generate_panel(codes=codes, n_days=args.days, seed=args.seed)
    for code, series in panel.items():
        write_price_csv(out / f"prices_{code}.csv", series)
        print(f"wrote {out / f'prices_{code}.csv'} ({len(series)} days)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    codes = _data_codes(data_dir)
    if args.eval_code not in codes:
        print(f"eval code {args.eval_code} not found in {codes}", file=sys.stderr)
        return 2
    train_codes = [c for c in codes if c != args.eval_code]

    train_class = []
    for code in train_codes:
        class_set, _ = datagen.labeled_dataset(_load_series(data_dir, code), window=args.window)
        train_class.extend(class_set)
    config = PredictorConfig(window=args.window, hidden=args.hidden,
                             epochs=args.epochs, seed=args.seed)
    predictor = train_predictor(train_class, config)
    save_predictor(out / "predictor.npz", predictor)

    eval_series = _load_series(data_dir, args.eval_code)
    eval_class, eval_ratio = datagen.labeled_dataset(eval_series, window=args.window)
    acc3 = three_class_accuracy(predictor, eval_class)
    acc2 = binary_sign_accuracy(predictor, eval_ratio)
    print(f"held-out 3-class accuracy on {args.eval_code}: {acc3:.3f}")
    print(f"held-out sign accuracy on {args.eval_code}: {acc2:.3f}")

    windows = select_scenarios(predictor, eval_series, window=60)
    scenarios = {
        "window": windows.window,
        "eval_code": args.eval_code,
        "high": windows.high_start,
        "high_accuracy": windows.high_accuracy,
        "low": windows.low_start,
        "low_accuracy": windows.low_accuracy,
    }
    (out / "scenarios.json").write_text(json.dumps(scenarios, indent=2))
    print(f"scenario windows: high starts {windows.high_start} "
          f"(acc {windows.high_accuracy:.3f}), low starts {windows.low_start} "
          f"(acc {windows.low_accuracy:.3f})")

    policy_series = _load_series(data_dir, train_codes[0])
    policy_predictions = predictions_for_series(predictor, policy_series)
    policy = train_policy(
        policy_series, policy_predictions,
        PolicyConfig(seed=args.seed, exploration_episodes=args.policy_episodes),
    )
    save_policy(out / "policy.npz", policy)

    eval_predictions = predictions_for_series(predictor, eval_series)
    _write_predictions_csv(out / f"predictions_{args.eval_code}.csv",
                           eval_series, eval_predictions)
    print(f"models written to {out}")
    return 0


def _write_predictions_csv(path: Path, series, predictions: np.ndarray) -> None:
    with path.open("w", encoding="utf-8") as fh:
        fh.write("date,p_bull,p_neutral,p_bear\n")
        for day, bar in enumerate(series.bars):
            row = predictions[day]
            if np.all(np.isfinite(row)):
                cells = ",".join(repr(float(v)) for v in row)
                fh.write(f"{bar.date.isoformat()},{cells}\n")


def _scenario_days(scenarios: dict) -> list[int]:
    window = int(scenarios["window"])
    days: set[int] = set()
    for key in ("high", "low"):
        start = int(scenarios[key])
        days.update(range(start, start + window))
    return sorted(days)


def cmd_make_manifest(args: argparse.Namespace) -> int:
    data_dir = Path(args.data)
    models = Path(args.models)
    scenarios = json.loads((models / "scenarios.json").read_text())
    series = _load_series(data_dir, args.eval_code)
    out_path = Path(args.out) if args.out else data_dir / "manifest.json"
    datagen.generate_manifest(
        series, _scenario_days(scenarios), out_path, seed=args.seed,
        write_images=not args.no_images,
    )
    print(f"wrote {out_path}")
    return 0


def _load_workspace(workspace: Path):
    data_dir = workspace / "data"
    models = workspace / "models"
    scenarios = json.loads((models / "scenarios.json").read_text())
    eval_code = scenarios["eval_code"]
    series = _load_series(data_dir, eval_code)
    manifest = load_manifest(data_dir / "manifest.json")
    predictions = load_predictions_csv(models / f"predictions_{eval_code}.csv", series)
    policy = load_policy(models / "policy.npz")
    return data_dir, models, scenarios, series, manifest, predictions, policy


def cmd_simulate_logs(args: argparse.Namespace) -> int:
    workspace = Path(args.workspace)
    _, models, scenarios, series, manifest, predictions, policy = _load_workspace(workspace)
    start = int(scenarios[args.scenario])
    population = UserPopulation(
        momentum_sensitivity=0.3,
        text_susceptibility=1.2,
        saliency_susceptibility=0.8,
        prediction_weight=1.5,
        noise_sigma=args.noise,
    )
    config = ExperimentConfig(
        strategies=(StrategyKind.RANDOM,),
        scenarios={args.scenario: start},
        n_users=args.sessions,
        master_seed=args.seed,
        population=population,
    )
    result = run_experiment(config, series, manifest,
                            ModelBundle(predictions=predictions, policy=policy))
    out = Path(args.out) if args.out else workspace / "logs" / f"random_{args.scenario}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_records(out, result.records)
    print(f"wrote {len(result.records)} records to {out}")
    return 0


def cmd_train_user_model(args: argparse.Namespace) -> int:
    workspace = Path(args.workspace)
    data_dir, models, scenarios, series, manifest, _, _ = _load_workspace(workspace)
    start = int(scenarios[args.scenario])
    window = int(scenarios["window"])
    logs = Path(args.logs) if args.logs else workspace / "logs" / f"random_{args.scenario}.jsonl"
    records = load_records(logs)
    candidates_by_day = {rel: manifest[start + rel] for rel in range(window)}
    config = UserModelConfig(n_days=window, epochs=args.epochs, seed=args.seed)
    if args.cv:
        result = cross_validate(records, candidates_by_day, k=4, config=config)
        folds = ", ".join(f"{r:.3f}" for r in result.fold_correlations)
        print(f"4-fold CV correlation: mean {result.mean:.3f} (sd {result.sd:.3f}); folds {folds}")
    params = train_user_model(records, candidates_by_day, config)
    out = Path(args.out) if args.out else models / f"user_model_{args.scenario}.npz"
    save_user_model(out, params)
    print(f"wrote {out}")
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    workspace = Path(args.workspace)
    _, models, scenarios, series, manifest, predictions, policy = _load_workspace(workspace)
    plan = json.loads(Path(args.config).read_text())
    strategies = tuple(StrategyKind(s) for s in plan["strategies"])
    scenario_windows = {sid: int(scenarios[sid]) for sid in plan.get("scenarios", ["high", "low"])}
    population = UserPopulation(**plan.get("population", {}))
    user_model = None
    needs_selector = StrategyKind.XSELECTOR in strategies
    if needs_selector:
        scenario_ids = list(scenario_windows)
        if len(scenario_ids) != 1:
            print("XSELECTOR experiments run one scenario at a time "
                  "(its user model is scenario-specific)", file=sys.stderr)
            return 2
        model_path = models / f"user_model_{scenario_ids[0]}.npz"
        user_model = load_user_model(model_path)
    config = ExperimentConfig(
        strategies=strategies,
        scenarios=scenario_windows,
        n_users=int(plan.get("n_users", 20)),
        master_seed=int(plan.get("master_seed", 0)),
        population=population,
    )
    bundle = ModelBundle(predictions=predictions, policy=policy, user_model=user_model,
                         selection_mode=plan.get("selection_mode", "expected"))
    result = run_experiment(config, series, manifest, bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for sid in scenario_windows:
        csv_path = out / f"experiment_{sid}.csv"
        write_summary_csv(result, sid, csv_path)
        print(f"wrote {csv_path}")
        for strategy in strategies:
            summary = result.summary(sid, strategy)
            print(f"  {sid}/{strategy.value}: mean final assets "
                  f"{summary.final_values.mean():,.0f} JPY")
    save_records(out / "interactions.jsonl", result.records)
    return 0


ENV_PREFIX = "XSELECTOR_"
_PATH_KEYS = ("prices_csv", "manifest", "predictions_csv", "predictor", "policy",
              "log_dir", "scenarios", "ui_dir")


def load_service_state(config_path: str | Path):
    """Build a ServiceState from a JSON config file, honoring XSELECTOR_* env
    overrides for path entries."""
    from .service import ServiceState

    config = json.loads(Path(config_path).read_text())
    for key in list(config):
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None and key in _PATH_KEYS:
            config[key] = env
    base = Path(config_path).parent

    def resolve(value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else base / path

    series = load_price_csv(resolve(config["prices_csv"]), code=config.get("code"))
    manifest_path = resolve(config["manifest"])
    manifest = load_manifest(manifest_path)
    if "predictions_csv" in config:
        predictions = load_predictions_csv(resolve(config["predictions_csv"]), series)
    elif "predictor" in config:
        predictions = predictions_for_series(load_predictor(resolve(config["predictor"])), series)
    else:
        raise ValueError("service config needs predictions_csv or predictor")

    scenarios_cfg = config["scenarios"]
    if isinstance(scenarios_cfg, str):
        blob = json.loads(resolve(scenarios_cfg).read_text())
        scenarios = {"high": int(blob["high"]), "low": int(blob["low"])}
    else:
        scenarios = {k: int(v) for k, v in scenarios_cfg.items()}

    policy = load_policy(resolve(config["policy"])) if "policy" in config else None
    user_models = {}
    for sid, path in config.get("user_models", {}).items():
        user_models[sid] = load_user_model(resolve(path))
    ui_dir = resolve(config["ui_dir"]) if "ui_dir" in config else None

    return ServiceState(
        series=series,
        predictions=predictions,
        manifest=manifest,
        scenarios=scenarios,
        policy=policy,
        user_models=user_models,
        episode_length=int(config.get("episode_length", 60)),
        lot_size=int(config.get("lot_size", 100)),
        initial_cash=float(config.get("initial_cash", 3_000_000)),
        chart_window=int(config.get("chart_window", 30)),
        selection_mode=config.get("selection_mode", "expected"),
        log_dir=resolve(config.get("log_dir", "session-logs")),
        asset_dir=manifest_path.parent,
        ui_dir=ui_dir,
    )


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app, load_sessions

    state = load_service_state(args.config)
    restored = load_sessions(state)
    if restored:
        print(f"restored {restored} session(s) from {state.log_dir}")
    app = create_app(state)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_demo(args: argparse.Namespace) -> int:
    """Build a small end-to-end workspace: data, models, logs, service config."""
    workspace = Path(args.out)
    ns = argparse.Namespace
    rc = cmd_make_data(ns(out=workspace / "data", seed=args.seed, days=args.days,
                          codes="SYN1,SYN2,SYN3,SYN4"))
    if rc:
        return rc
    rc = cmd_train(ns(data=workspace / "data", out=workspace / "models",
                      eval_code="SYN4", window=30, hidden=16, epochs=300,
                      policy_episodes=150, seed=args.seed))
    if rc:
        return rc
    rc = cmd_make_manifest(ns(data=workspace / "data", models=workspace / "models",
                              eval_code="SYN4", out=None, seed=args.seed,
                              no_images=False))
    if rc:
        return rc
    for scenario in ("high", "low"):
        rc = cmd_simulate_logs(ns(workspace=workspace, scenario=scenario,
                                  sessions=args.sessions, noise=0.5,
                                  seed=args.seed, out=None))
        if rc:
            return rc
        rc = cmd_train_user_model(ns(workspace=workspace, scenario=scenario,
                                     logs=None, out=None, epochs=300,
                                     seed=args.seed, cv=args.cv))
        if rc:
            return rc
    scenarios = json.loads((workspace / "models" / "scenarios.json").read_text())
    service_config = {
        "prices_csv": f"data/prices_{scenarios['eval_code']}.csv",
        "code": scenarios["eval_code"],
        "manifest": "data/manifest.json",
        "predictions_csv": f"models/predictions_{scenarios['eval_code']}.csv",
        "policy": "models/policy.npz",
        "user_models": {
            "high": "models/user_model_high.npz",
            "low": "models/user_model_low.npz",
        },
        "scenarios": "models/scenarios.json",
        "log_dir": "session-logs",
    }
    (workspace / "service.json").write_text(json.dumps(service_config, indent=2))
    print(f"demo workspace ready; run: xselector serve --config {workspace / 'service.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xselector", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate synthetic instrument price CSVs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--days", type=int, default=400)
    p.add_argument("--codes", default="SYN1,SYN2,SYN3,SYN4")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train predictor and policy, pick scenario windows")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-code", required=True)
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--policy-episodes", type=int, default=150)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("make-manifest", help="generate explanation assets for the scenario windows")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--eval-code", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-images", action="store_true")
    p.set_defaults(func=cmd_make_manifest)

    p = sub.add_parser("simulate-logs", help="generate RANDOM-strategy interaction logs")
    p.add_argument("--workspace", required=True)
    p.add_argument("--scenario", choices=("high", "low"), default="high")
    p.add_argument("--sessions", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate_logs)

    p = sub.add_parser("train-user-model", help="fit the decision-shift model on logs")
    p.add_argument("--workspace", required=True)
    p.add_argument("--scenario", choices=("high", "low"), default="high")
    p.add_argument("--logs", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cv", action="store_true", help="report 4-fold CV correlation first")
    p.set_defaults(func=cmd_train_user_model)

    p = sub.add_parser("experiment", help="run a strategies-by-scenarios experiment")
    p.add_argument("--workspace", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("demo", help="build a full small workspace end to end")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--days", type=int, default=400)
    p.add_argument("--sessions", type=int, default=12)
    p.add_argument("--cv", action="store_true")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
