"""Command-line front end: ``ruptura <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from ruptura import __version__
from ruptura._utils import PathLike, dump_json, file_digest, load_json, parse_date, to_jsonable
from ruptura.did_match import DEFAULT_K
from ruptura.evaluator import (
    DEFAULT_RATIOS,
    STRATUM_KEYS,
    SplitPlan,
    StratumSpec,
    assign_strata,
    evaluate_model,
    save_predictions,
    split_by_region,
    stratified_outcome_stats,
)
from ruptura.exceptions import ConfigError, RupturaError, ValidationError
from ruptura.feature_builder import load_dataset, save_dataset
from ruptura.learners import (
    BASELINES,
    FAMILIES,
    ModelSpec,
    load_model,
    predict,
    save_model,
    select_on_dev,
    train,
)
from ruptura.panel_store import (
    DEFAULT_MIN_USERS,
    difference,
    filter_reliability,
    load_events,
    load_panel,
    load_region_meta,
    save_events,
    save_panel,
    zscore_per_region,
)
from ruptura.placebo import DEFAULT_EPISODES, placebo_by_window
from ruptura.rdd_estimator import (
    DEFAULT_BUFFER,
    DEFAULT_HALF_WIDTH,
    DEFAULT_MIN_POINTS,
    BatchResult,
    WindowConfig,
    buffer_ablation,
    event_profile,
    save_outcomes,
)
from ruptura.study import Study, baseline_family, resolve_seed, resolve_threads
from ruptura.synth_oracle import DEFAULT_EVENT_TYPE, SynthConfig, generate, save_synth

logger = logging.getLogger("ruptura.cli")

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

# argument destinations holding input files; their digests go into the manifest
INPUT_KEYS = ("panel", "events", "meta", "embeddings", "covariate_panel", "dataset", "model")

# never part of a manifest's config: they cannot change any output
_UNRECORDED = ("handler", "config", "threads", "log_level", "seed")

HYPERPARAMETER_FLAGS = (
    "alpha",
    "k",
    "n_estimators",
    "max_depth",
    "max_features",
    "bootstrap",
    "epochs",
    "lr",
    "layers",
    "width",
    "batch_size",
    "max_order",
)

SYNTH_FLAGS = ("n_regions", "n_weeks", "noise_sigma", "ar_coefficient", "half_width")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def manifest_path(primary: PathLike) -> Path:
    primary = Path(primary)
    return primary.with_name(primary.stem + ".manifest.json")


@dataclass
class RunManifest:
    """What one run read, how it was configured and what it wrote.

    Carries no timestamps: the same config and inputs give the same manifest bytes.
    """

    subcommand: str
    config: Dict[str, Any]
    inputs: Dict[str, Dict[str, str]]
    seed: Optional[int]
    version: str
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "inputs": self.inputs,
            "seed": self.seed,
            "version": self.version,
            "outputs": self.outputs,
        }

    def write(self, primary: PathLike) -> Path:
        path = manifest_path(primary)
        dump_json(self.to_dict(), path)
        return path


def _build_manifest(
    args: argparse.Namespace, extras: Dict[str, Any], outputs: Sequence[PathLike]
) -> RunManifest:
    inputs: Dict[str, Dict[str, str]] = {}
    for key in INPUT_KEYS + ("config",):
        value = getattr(args, key, None)
        if value:
            inputs[key] = {"path": str(value), "sha256": file_digest(value)}
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}
    config.update(extras)
    return RunManifest(
        subcommand=args.command,
        config=to_jsonable(config),
        inputs=inputs,
        seed=args.seed,
        version=__version__,
        outputs=[str(p) for p in outputs],
    )


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Invalid integer list: {text!r}") from None


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Invalid number list: {text!r}") from None


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _max_features(text: str) -> Union[str, int, float]:
    if text in ("third", "sqrt", "log2", "all"):
        return text
    try:
        return int(text)
    except ValueError:
        return float(text)


def _as_list(value: Any, convert: Callable[[str], List[Any]]) -> List[Any]:
    # config files give lists, flags give comma-separated strings
    return convert(value) if isinstance(value, str) else list(value)


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) in (None, ""):
            flag = "--" + name.replace("_", "-")
            raise ConfigError(f"{flag} is required (as a flag or a config key)", field=name)


def _output(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _window(args: argparse.Namespace) -> WindowConfig:
    return WindowConfig(args.half_width, args.buffer, args.min_points)


def _epoch(args: argparse.Namespace) -> Optional[date]:
    return parse_date(args.epoch_date) if getattr(args, "epoch_date", None) else None


def _hyperparameters(args: argparse.Namespace, extras: Dict[str, Any]) -> Dict[str, Any]:
    params = dict(extras.get("hyperparameters", {}))
    for name in HYPERPARAMETER_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            params[name] = value
    return params


def _study(args: argparse.Namespace, **kwargs: Any) -> Study:
    return Study.from_files(
        args.panel,
        args.events,
        args.score_name,
        meta_path=getattr(args, "meta", None),
        embeddings_path=getattr(args, "embeddings", None),
        covariate_path=getattr(args, "covariate_panel", None),
        covariate_name=getattr(args, "covariate_name", "covariate"),
        epoch=_epoch(args),
        window=_window(args),
        seed=args.seed,
        threads=args.threads,
        **kwargs,
    )


def _batch_summary(result: BatchResult, config: WindowConfig) -> Dict[str, Any]:
    return {
        "event_type": result.event_type,
        "window": config.to_dict(),
        "n_outcomes": len(result.outcomes),
        "stats": result.stats.to_dict(),
        "skipped": [{"region_id": s.region_id, "reason": s.reason} for s in result.skipped],
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

Outputs = Tuple[Path, List[Path]]


def cmd_ingest(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "panel", "out")
    epoch = _epoch(args)
    panel = load_panel(args.panel, args.score_name, epoch=epoch)
    if args.min_users is not None:
        panel = filter_reliability(panel, args.min_users)
    if args.difference_lag is not None:
        panel = difference(panel, args.difference_lag)
    if args.zscore:
        panel = zscore_per_region(panel)
    out = _output(args.out)
    save_panel(panel, out)
    outputs = [out]
    if args.events:
        events_out = _output(args.events_out or out.with_name(out.stem + ".events.csv"))
        save_events(load_events(args.events, epoch=epoch), events_out)
        outputs.append(events_out)
    logger.info("Ingested %r", panel)
    return out, outputs


def cmd_estimate(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "panel", "events", "event_type", "out")
    study = _study(args)
    result = study.estimate(args.event_type)
    out = _output(args.out)
    save_outcomes(result.outcomes, out)
    summary = _batch_summary(result, study.window)
    if args.ablate_buffers:
        ablation = buffer_ablation(
            study.panel,
            study.events,
            args.event_type,
            _as_list(args.ablate_buffers, _int_list),
            study.window,
            threads=study.threads,
        )
        summary["buffer_ablation"] = {
            str(b): _batch_summary(r, study.window.with_buffer(b)) for b, r in ablation.items()
        }
    if args.strata:
        _require(args, "meta")
        by_stratum = stratified_outcome_stats(result.outcomes, study.meta, StratumSpec(args.strata))
        summary["strata"] = {k: v.to_dict() for k, v in by_stratum.items()}
    stats_out = _output(args.stats_out or out.with_name(out.stem + ".stats.json"))
    dump_json(summary, stats_out)
    outputs = [out, stats_out]
    if args.profile_out:
        profile_out = _output(args.profile_out)
        event_profile(study.panel, study.events, args.event_type, study.window).to_csv(
            profile_out, index=False
        )
        outputs.append(profile_out)
    return out, outputs


def cmd_placebo(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "panel", "out")
    args.seed = resolve_seed(args.seed)
    panel = load_panel(args.panel, args.score_name, epoch=_epoch(args))
    config = _window(args)
    threads = resolve_threads(args.threads)
    if args.half_widths:
        half_widths = _as_list(args.half_widths, _int_list)
    else:
        half_widths = [config.half_width]
    summaries = placebo_by_window(
        panel, args.n_episodes, half_widths, config, args.seed, threads=threads
    )
    out = _output(args.out)
    if args.half_widths:
        dump_json({"by_half_width": {str(t): s.to_dict() for t, s in summaries.items()}}, out)
    else:
        dump_json(summaries[config.half_width].to_dict(), out)
    return out, [out]


def cmd_features(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "panel", "events", "event_type", "out")
    dataset = _study(args).dataset(args.event_type, args.features)
    out = _output(args.out)
    sidecar = save_dataset(dataset, out)
    logger.info("Wrote %r (%d episodes skipped)", dataset, len(dataset.skipped))
    return out, [out, sidecar]


def cmd_train(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "family")
    overrides = _hyperparameters(args, extras)
    # reject bad hyperparameters before any data is read
    ModelSpec(args.family, overrides)
    _require(args, "dataset", "out")
    args.seed = resolve_seed(args.seed)
    threads = resolve_threads(args.threads)
    dataset = load_dataset(args.dataset)
    plan = split_by_region(dataset.region_ids, _as_list(args.ratios, _float_list), args.seed)
    train_set = dataset.subset(plan.train)
    if args.select_on_dev:
        spec = select_on_dev(
            args.family, train_set, dataset.subset(plan.dev), seed=args.seed, threads=threads
        )
        if overrides:
            spec = spec.with_hyperparameters(**overrides)
    else:
        spec = ModelSpec.for_features(args.family, dataset.spec, args.seed, **overrides)
    if args.per_target:
        spec = ModelSpec(spec.family, spec.hyperparameters, spec.seed, True, spec.rich)
    model = train(spec, train_set, threads=threads, split=plan.to_dict())
    out = _output(args.out)
    save_model(model, out)
    return out, [out]


def cmd_evaluate(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "model", "dataset", "out")
    model = load_model(args.model)
    if not model.split:
        raise ValidationError(f"{args.model} carries no split plan", field="model")
    args.seed = model.spec.seed
    plan = SplitPlan.from_dict(model.split)
    dataset = load_dataset(args.dataset)
    meta = load_region_meta(args.meta) if args.meta else None
    strata = StratumSpec(args.strata) if args.strata else None
    if strata is not None and meta is None:
        raise ConfigError("--strata needs --meta", field="meta")
    baseline = None
    if args.baseline != "none":
        baseline = ModelSpec(baseline_family(args.baseline), seed=model.spec.seed)
    report = evaluate_model(
        model,
        dataset,
        plan,
        baseline=baseline,
        meta=meta,
        strata=strata,
        threads=resolve_threads(args.threads),
    )
    out = _output(args.out)
    dump_json(report.to_dict(), out)
    outputs = [out]
    if args.predictions_out:
        test_set = dataset.subset(plan.test)
        labels = assign_strata(test_set.region_ids, meta, strata) if strata else None
        predictions_out = _output(args.predictions_out)
        save_predictions(
            test_set.region_ids,
            predict(model, test_set),
            test_set.targets,
            predictions_out,
            strata=labels,
        )
        outputs.append(predictions_out)
    return out, outputs


def cmd_did(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "panel", "events", "meta", "event_type", "target", "out")
    result = _study(args).did(args.target, args.event_type, args.k)
    out = _output(args.out)
    dump_json(result.to_dict(), out)
    return out, [out]


def cmd_synth(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "out_dir")
    args.seed = resolve_seed(args.seed)
    params = {name: getattr(args, name) for name in SYNTH_FLAGS if getattr(args, name) is not None}
    params.update(extras)
    params["seed"] = args.seed
    result = generate(SynthConfig.from_dict(params), threads=resolve_threads(args.threads))
    paths = save_synth(result, args.out_dir)
    return paths["truth"], list(paths.values())


def cmd_pipeline(args: argparse.Namespace, extras: Dict[str, Any]) -> Outputs:
    _require(args, "out_dir")
    args.seed = resolve_seed(args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs: List[Path] = []
    window = _window(args)
    if args.panel:
        _require(args, "events", "event_type")
        study = _study(args)
        event_type = args.event_type
    else:
        params = dict(extras.get("synth", {}))
        params["seed"] = args.seed
        params.setdefault("half_width", window.half_width)
        synth = generate(SynthConfig.from_dict(params), threads=resolve_threads(args.threads))
        outputs.extend(save_synth(synth, out_dir / "synth").values())
        study = Study.from_synth(synth, window=window, seed=args.seed, threads=args.threads)
        event_type = args.event_type or synth.config.event_type
    study.preprocess(
        min_users=args.min_users, zscore=args.zscore, difference_lag=args.difference_lag
    )

    result = study.estimate(event_type)
    outcomes_out = out_dir / "outcomes.csv"
    save_outcomes(result.outcomes, outcomes_out)
    stats_out = out_dir / "outcomes.stats.json"
    dump_json(_batch_summary(result, window), stats_out)

    dataset = study.dataset(event_type, args.features)
    dataset_out = out_dir / "dataset.csv"
    sidecar = save_dataset(dataset, dataset_out)
    plan = study.split(dataset, _as_list(args.ratios, _float_list))

    overrides = _hyperparameters(args, extras)
    model = study.train(args.family, dataset, plan, per_target=args.per_target, **overrides)
    model_out = out_dir / "model.joblib"
    save_model(model, model_out)

    report = study.evaluate(model, dataset, plan, baseline=args.baseline, strata=args.strata)
    report_out = out_dir / "report.json"
    dump_json(report.to_dict(), report_out)
    test_set = dataset.subset(plan.test)
    predictions_out = out_dir / "predictions.csv"
    save_predictions(
        test_set.region_ids, predict(model, test_set), test_set.targets, predictions_out
    )
    outputs += [outcomes_out, stats_out, dataset_out, sidecar, model_out]
    outputs += [report_out, predictions_out]

    if args.families:
        reports = study.compare(
            dataset, plan, _as_list(args.families, _str_list), baseline=args.baseline
        )
        comparison_out = out_dir / "comparison.json"
        dump_json([r.to_dict() for r in reports], comparison_out)
        outputs.append(comparison_out)
    return report_out, outputs


# keys a --config file may carry besides flag destinations
_CONFIG_EXTRAS: Dict[str, Tuple[str, ...]] = {
    "train": ("hyperparameters",),
    "pipeline": ("hyperparameters", "synth"),
    "synth": tuple(sorted(set(SynthConfig.__dataclass_fields__) - set(SYNTH_FLAGS) - {"seed"})),
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_global(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda value: argparse.SUPPRESS) if suppress else (lambda value: value)
    parser.add_argument(
        "--log-level", choices=LOG_LEVELS, default=default("WARNING"), help="Logging verbosity."
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=default(None),
        help="Parallelism cap (default: RUPTURA_THREADS or 1). Results never depend on it.",
    )
    parser.add_argument(
        "--seed", type=int, default=default(None), help="Seed (default: RUPTURA_SEED)."
    )


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        help="JSON file whose keys are option names (underscored); its values override flags.",
    )


def _add_window(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--half-width", type=int, default=DEFAULT_HALF_WIDTH, help="T (weeks).")
    parser.add_argument("--buffer", type=int, default=DEFAULT_BUFFER, help="b (weeks).")
    parser.add_argument(
        "--min-points",
        type=int,
        default=DEFAULT_MIN_POINTS,
        help="Fewest observed weeks per segment.",
    )


def _add_inputs(parser: argparse.ArgumentParser, *, events: bool = True) -> None:
    parser.add_argument("--panel", help="Panel CSV (region_id, week_index, score, n_users).")
    parser.add_argument("--score-name", default="score", help="Name of the panel's score.")
    if events:
        parser.add_argument("--events", help="Events CSV (region_id, event_type, event_week).")
    parser.add_argument(
        "--epoch-date", help="ISO date; week columns then hold dates, counted from its Monday."
    )


def _add_preprocess(parser: argparse.ArgumentParser, min_users: Optional[int]) -> None:
    parser.add_argument(
        "--min-users",
        type=int,
        default=min_users,
        help="Drop observations backed by fewer unique users.",
    )
    parser.add_argument("--zscore", action="store_true", help="Z-score each region's series.")
    parser.add_argument(
        "--difference-lag", type=int, help="Difference each series at this lag (52: seasonal)."
    )


def _add_hyperparameters(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("hyperparameters (defaults depend on family and features)")
    group.add_argument("--alpha", type=float, help="ridge: L2 penalty.")
    group.add_argument("--k", type=int, help="knn: neighbours.")
    group.add_argument("--n-estimators", type=int, help="random_forest/extra_trees: trees.")
    group.add_argument("--max-depth", type=int, help="random_forest/extra_trees: depth cap.")
    group.add_argument(
        "--max-features", type=_max_features, help="random_forest/extra_trees: split features."
    )
    group.add_argument(
        "--bootstrap",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="random_forest/extra_trees: bootstrap samples.",
    )
    group.add_argument("--epochs", type=int, help="ffn: training epochs.")
    group.add_argument("--lr", type=float, help="ffn: learning rate.")
    group.add_argument("--layers", type=int, help="ffn: hidden layers.")
    group.add_argument("--width", type=int, help="ffn: units per hidden layer.")
    group.add_argument("--batch-size", type=int, help="ffn: mini-batch size.")
    group.add_argument("--max-order", type=int, help="baseline_forecast: largest AR order.")
    parser.add_argument(
        "--per-target", action="store_true", help="Fit one model per target instead of jointly."
    )


def _add_feature_inputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--features", default="P,RC", help="Comma-separated blocks among P, RC, cov, exog."
    )
    parser.add_argument("--covariate-panel", help="Covariate panel CSV (for cov features).")
    parser.add_argument("--covariate-name", default="covariate", help="Covariate score name.")
    parser.add_argument("--embeddings", help="Embeddings CSV (for exog features).")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ruptura",
        description="Longitudinal discontinuity estimation and forecasting for region panels.",
    )
    parser.add_argument("--version", action="version", version=f"ruptura {__version__}")
    _add_global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    def command(name: str, handler: Callable[..., Outputs], help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help, description=help)
        _add_global(p, suppress=True)
        _add_config(p)
        p.set_defaults(handler=handler)
        return p

    p = command("ingest", cmd_ingest, "Load, filter and transform a panel; write it as CSV.")
    _add_inputs(p)
    _add_preprocess(p, DEFAULT_MIN_USERS)
    p.add_argument("--out", help="Output panel CSV.")
    p.add_argument("--events-out", help="Output events CSV (default: <out>.events.csv).")

    p = command("estimate", cmd_estimate, "Estimate one discontinuity per region.")
    _add_inputs(p)
    _add_window(p)
    p.add_argument("--event-type", help="Event type to estimate around.")
    p.add_argument("--out", help="Outcomes CSV.")
    p.add_argument("--stats-out", help="Cohort statistics JSON (default: <out>.stats.json).")
    p.add_argument("--profile-out", help="Per-offset cohort profile CSV.")
    p.add_argument("--ablate-buffers", help="Comma-separated buffer widths to re-run with.")
    p.add_argument("--meta", help="Region metadata CSV (for --strata).")
    p.add_argument("--strata", choices=STRATUM_KEYS, help="Add per-stratum statistics.")

    p = command("placebo", cmd_placebo, "Estimate discontinuities at random event weeks.")
    _add_inputs(p, events=False)
    _add_window(p)
    p.add_argument("--n-episodes", type=int, default=DEFAULT_EPISODES, help="Placebo episodes.")
    p.add_argument("--half-widths", help="Comma-separated half-widths to run in turn.")
    p.add_argument("--out", help="Summary JSON.")

    p = command("features", cmd_features, "Build the feature matrix and targets.")
    _add_inputs(p)
    _add_window(p)
    _add_feature_inputs(p)
    p.add_argument("--event-type", help="Event type to build episodes for.")
    p.add_argument("--out", help="Dataset CSV (a .layout.json sidecar is written beside it).")

    p = command("train", cmd_train, "Train a learner on the training regions of a dataset.")
    p.add_argument("--dataset", help="Dataset CSV written by 'features'.")
    p.add_argument("--family", choices=FAMILIES, help="Learner family.")
    p.add_argument(
        "--ratios",
        default=",".join(str(r) for r in DEFAULT_RATIOS),
        help="Train,dev,test region ratios.",
    )
    p.add_argument(
        "--select-on-dev", action="store_true", help="Pick hyperparameters on the dev regions."
    )
    _add_hyperparameters(p)
    p.add_argument("--out", help="Model file.")

    p = command("evaluate", cmd_evaluate, "Score a trained model on its test regions.")
    p.add_argument("--model", help="Model file written by 'train'.")
    p.add_argument("--dataset", help="Dataset CSV the model was trained from.")
    p.add_argument(
        "--baseline",
        default="mean",
        choices=[b[len("baseline_"):] for b in BASELINES] + ["none"],
        help="Baseline for the paired t-tests.",
    )
    p.add_argument("--strata", choices=STRATUM_KEYS, help="Also report per stratum.")
    p.add_argument("--meta", help="Region metadata CSV (for --strata).")
    p.add_argument("--predictions-out", help="Per-episode predictions CSV.")
    p.add_argument("--out", help="Report JSON.")

    p = command("did", cmd_did, "Matched difference-in-differences for one target region.")
    _add_inputs(p)
    _add_window(p)
    p.add_argument("--meta", help="Region metadata CSV.")
    p.add_argument("--event-type", help="Event type defining the target's event week.")
    p.add_argument("--target", help="Target region_id.")
    p.add_argument("--k", type=int, default=DEFAULT_K, help="Matched control regions.")
    p.add_argument("--out", help="Result JSON.")

    p = command("synth", cmd_synth, "Generate a synthetic cohort with planted effects.")
    p.add_argument("--n-regions", type=int, help="Number of regions.")
    p.add_argument("--n-weeks", type=int, help="Weeks per region.")
    p.add_argument("--noise-sigma", type=float, help="AR(1) innovation standard deviation.")
    p.add_argument("--ar-coefficient", type=float, help="AR(1) coefficient.")
    p.add_argument("--half-width", type=int, help="Half-width event weeks must accommodate.")
    p.add_argument("--out-dir", help="Directory for the generated files.")

    p = command("pipeline", cmd_pipeline, "Synthesize or load, estimate, build, train, evaluate.")
    _add_inputs(p)
    _add_window(p)
    _add_preprocess(p, DEFAULT_MIN_USERS)
    _add_feature_inputs(p)
    p.add_argument("--meta", help="Region metadata CSV (for --strata).")
    p.add_argument("--event-type", help=f"Event type (synthetic default: {DEFAULT_EVENT_TYPE}).")
    p.add_argument("--family", default="ridge", choices=FAMILIES, help="Learner family.")
    p.add_argument(
        "--ratios",
        default=",".join(str(r) for r in DEFAULT_RATIOS),
        help="Train,dev,test region ratios.",
    )
    p.add_argument(
        "--baseline",
        default="mean",
        choices=[b[len("baseline_"):] for b in BASELINES],
        help="Baseline for the paired t-tests.",
    )
    p.add_argument("--strata", choices=STRATUM_KEYS, help="Also report per stratum.")
    p.add_argument("--families", help="Comma-separated families to compare as well.")
    _add_hyperparameters(p)
    p.add_argument("--out-dir", help="Directory for every output.")
    return parser


def _apply_config(args: argparse.Namespace) -> Dict[str, Any]:
    """Overlay the ``--config`` file on the parsed flags; return its non-flag entries."""
    if not getattr(args, "config", None):
        return {}
    try:
        data = load_json(args.config)
    except FileNotFoundError:
        raise ConfigError(f"Config file {args.config} not found", field="config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"Config file {args.config} is not valid JSON: {exc}", field="config"
        ) from exc
    if not isinstance(data, dict):
        raise ConfigError("Config file must hold a JSON object", field="config")
    settable = set(vars(args)) - {"handler", "config", "command"}
    extras = set(_CONFIG_EXTRAS.get(args.command, ()))
    unknown = sorted(set(data) - settable - extras)
    if unknown:
        raise ConfigError(f"Unknown config keys for {args.command}: {unknown}", field="config")
    for key, value in data.items():
        if key in settable:
            setattr(args, key, value)
    return {key: data[key] for key in sorted(data) if key in extras}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand. Returns 0 on success, 1 on a domain error, 2 on a usage error."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else (0 if exc.code is None else 2)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        extras = _apply_config(args)
        args.threads = resolve_threads(args.threads)
        primary, outputs = args.handler(args, extras)
        written = _build_manifest(args, extras, outputs).write(primary)
        logger.info("Wrote %s", written)
    except RupturaError as exc:
        sys.stderr.write(json.dumps(to_jsonable(exc.to_dict()), sort_keys=True) + "\n")
        return exc.exit_code
    except OSError as exc:
        error = RupturaError(str(exc), "IO_ERROR", {"path": getattr(exc, "filename", None)})
        sys.stderr.write(json.dumps(error.to_dict(), sort_keys=True) + "\n")
        return error.exit_code
    return 0
