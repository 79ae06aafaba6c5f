"""Command Line Interface for Dynamic-HAT.

Each subcommand is one pipeline step; steps talk to each other only through
artifact files (see dynamic_hat.app_core.artifacts).
"""
import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from dynamic_hat import __version__
from dynamic_hat.actions_log import emit_record, log_action
from dynamic_hat.app_core import artifacts
from dynamic_hat.app_core.logging_config import configure_logging, get_logger
from dynamic_hat.exceptions import DynamicHatError, InvalidSettingError

logger = get_logger(__name__)

SPACE_PRESETS = ("full", "gpu-reduced", "desk")


# ============================================================================
# Settings: file + env, then command-line flags
# ============================================================================

def _load_settings(args: argparse.Namespace):
    from dynamic_hat.app_core.settings_manager import ConfigManager
    return ConfigManager(args.config).load()


def _override(section, args: argparse.Namespace, mapping: Dict[str, str]):
    """Copy every flag that was given (not None) onto the settings dataclass."""
    changes = {field: getattr(args, flag) for flag, field in mapping.items()
               if getattr(args, flag, None) is not None}
    return dataclasses.replace(section, **changes)


def _train_settings(args: argparse.Namespace):
    settings = _load_settings(args).train
    return _override(settings, args, {
        "steps": "steps", "batch_size": "batch_size", "lr": "learning_rate",
        "warmup": "warmup_steps", "seed": "seed",
    }).check()


def _latency_settings(args: argparse.Namespace):
    settings = _load_settings(args).latency
    return _override(settings, args, {
        "repeats": "repeats", "trim": "trim", "sentence_len": "sentence_len", "warmup": "warmup",
        "hardware": "hardware", "n_samples": "n_samples", "noise_sd": "noise_sd_ms", "seed": "seed",
    }).check()


def _search_settings(args: argparse.Namespace):
    settings = _load_settings(args).search
    return _override(settings, args, {
        "population": "population_size", "iterations": "n_iterations", "seed": "seed", "workers": "max_workers",
    }).check()


def _parse_constraints(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise InvalidSettingError(f"--constraints must be comma-separated numbers: {e}",
                                  config_key="constraints") from e
    if not values or any(v <= 0 for v in values):
        raise InvalidSettingError("--constraints needs at least one positive value", config_key="constraints")
    return values


def _print_json(payload: Dict) -> None:
    emit_record(sys.stdout, payload)


def _measure_fn(space, settings, bank_path: Optional[str]):
    """measure_fn for the selected hardware: a simulated cost model or real timing of the bank."""
    from dynamic_hat.elastic_model import load_checkpoint
    from dynamic_hat.latency import CostModel, model_measure_fn, simulated_measure_fn
    if settings.hardware == "real":
        if not bank_path:
            raise InvalidSettingError("--hardware real needs --bank", config_key="bank")
        return model_measure_fn(load_checkpoint(bank_path), settings)
    cost = CostModel.preset(settings.hardware, space, settings.noise_sd_ms)
    return simulated_measure_fn(cost, settings)


# ============================================================================
# Subcommands
# ============================================================================

def gen_corpus_command(args: argparse.Namespace) -> int:
    from dynamic_hat.corpus import generate_splits
    settings = _override(_load_settings(args).corpus, args, {
        "vocab_size": "vocab_size", "n_train": "n_train", "n_valid": "n_valid", "n_test": "n_test",
        "min_len": "min_len", "max_len": "max_len", "seed": "seed",
    })
    issues = settings.validate()
    if issues:
        raise InvalidSettingError("Invalid corpus settings: " + "; ".join(issues), config_key="corpus")
    out_dir = Path(args.out_dir)
    written = {}
    for split, corpus in generate_splits(settings).items():
        written[split] = str(artifacts.save_corpus(corpus, out_dir / f"{split}.jsonl"))
    _print_json({"corpus": written, "vocab_size": settings.vocab_size})
    return 0


def init_space_command(args: argparse.Namespace) -> int:
    from dynamic_hat.design_space import DesignSpace, cardinality
    space = {"full": DesignSpace.full, "gpu-reduced": DesignSpace.gpu_reduced,
             "desk": DesignSpace.desk}[args.preset]()
    artifacts.save_space(space, args.out)
    _print_json({"space": args.out, "preset": args.preset, "cardinality": cardinality(space)})
    return 0


def train_super_command(args: argparse.Namespace) -> int:
    from dynamic_hat.design_space import largest_config, smallest_config
    from dynamic_hat.elastic_model import inherit, init_super, save_checkpoint
    from dynamic_hat.training import train_super, validation_loss

    space = artifacts.load_space(args.space)
    corpus = artifacts.load_corpus(args.corpus)
    settings = _train_settings(args)
    init_seed = args.init_seed if args.init_seed is not None else settings.seed
    bank = init_super(space, corpus.vocab_size, init_seed)
    log = train_super(bank, space, corpus, settings)
    save_checkpoint(bank, args.out)
    if args.log:
        log.write(args.log)

    summary = {"bank": args.out, "steps": settings.steps, "final_train_loss": log.final_loss(),
               "checksum": bank.checksum()}
    if args.valid:
        valid = artifacts.load_corpus(args.valid)
        summary["valid_loss_smallest"] = validation_loss(inherit(bank, smallest_config(space)), valid)
        summary["valid_loss_largest"] = validation_loss(inherit(bank, largest_config(space)), valid)
    _print_json(summary)
    return 0


def train_scratch_command(args: argparse.Namespace) -> int:
    from dynamic_hat.training import train_from_scratch, validation_loss
    cfg = artifacts.load_config(args.config_file)
    corpus = artifacts.load_corpus(args.corpus)
    valid = artifacts.load_corpus(args.valid)
    model, log = train_from_scratch(cfg, corpus, _train_settings(args))
    if args.log:
        log.write(args.log)
    _print_json({"config_hash": cfg.config_hash(), "final_train_loss": log.final_loss(),
                 "val_loss": validation_loss(model, valid), "checksum": model.checksum()})
    return 0


def compare_scratch_command(args: argparse.Namespace) -> int:
    from dynamic_hat.elastic_model import load_checkpoint
    from dynamic_hat.training import compare_inherited_vs_scratch, rank_agreement
    bank = load_checkpoint(args.bank)
    configs = [artifacts.load_config(p) for p in args.configs or []]
    if args.library:
        configs.extend(artifacts.load_library(args.library).top_configs(args.k))
    if not configs:
        raise InvalidSettingError("compare-scratch needs --configs or --library", config_key="configs")
    rows = compare_inherited_vs_scratch(bank, configs, artifacts.load_corpus(args.corpus),
                                        artifacts.load_corpus(args.valid), _train_settings(args))
    _print_json({"rows": [r.to_dict() for r in rows], "rank_agreement": rank_agreement(rows),
                 "n_configs": len(rows)})
    return 0


def collect_latency_command(args: argparse.Namespace) -> int:
    from dynamic_hat.latency import build_latency_dataset
    space = artifacts.load_space(args.space)
    settings = _latency_settings(args)
    measure = _measure_fn(space, settings, args.bank)
    workers = args.workers if settings.hardware != "real" else 1
    dataset = build_latency_dataset(space, settings.n_samples, measure, settings.seed,
                                    hardware_id=settings.hardware, max_workers=workers)
    artifacts.save_latency_dataset(dataset, args.out)
    _print_json({"dataset": args.out, "hardware_id": dataset.hardware_id, "n_samples": len(dataset),
                 "n_failed": dataset.n_failed})
    return 0


def fit_predictor_command(args: argparse.Namespace) -> int:
    from dynamic_hat.latency import fit_predictor
    dataset = artifacts.load_latency_dataset(args.dataset)
    predictor = fit_predictor(list(dataset), holdout_frac=args.holdout, seed=args.seed)
    artifacts.save_predictor(predictor, args.out)
    _print_json({"predictor": args.out, "holdout_rmse_ms": predictor.holdout_rmse_ms,
                 "n_samples": predictor.n_samples, "rank_deficient": predictor.rank_deficient})
    return 0


def _fitness(args: argparse.Namespace, space):
    """(loss_fn, bleu_fn) for --fitness surrogate | val-loss."""
    from dynamic_hat.search import surrogate_loss
    if args.fitness == "surrogate":
        return surrogate_loss(space), None

    from dynamic_hat.elastic_model import inherit, load_checkpoint
    from dynamic_hat.eval_metrics import evaluate_model
    from dynamic_hat.training import validation_loss
    if not args.bank or not args.valid:
        raise InvalidSettingError("--fitness val-loss needs --bank and --valid", config_key="fitness")
    bank = load_checkpoint(args.bank)
    valid = artifacts.load_corpus(args.valid)

    def loss_fn(cfg) -> float:
        return validation_loss(inherit(bank, cfg), valid)

    def bleu_fn(cfg) -> float:
        return evaluate_model(inherit(bank, cfg), valid, with_loss=False).bleu

    return loss_fn, bleu_fn


def search_command(args: argparse.Namespace) -> int:
    from dynamic_hat.search import build_operating_library
    space = artifacts.load_space(args.space)
    predictor = artifacts.load_predictor(args.predictor)
    latency_settings = _latency_settings(args)
    loss_fn, bleu_fn = _fitness(args, space)
    library = build_operating_library(
        space, _parse_constraints(args.constraints), predictor, loss_fn,
        _measure_fn(space, latency_settings, args.bank), _search_settings(args),
        hardware_id=latency_settings.hardware, bleu_fn=bleu_fn,
    )
    artifacts.save_library(library, args.out)
    _print_json({"library": args.out, "n_points": len(library), "gaps": library.gaps})
    return 0


def reduce_space_command(args: argparse.Namespace) -> int:
    from dynamic_hat.design_space import cardinality, reduce_space
    space = artifacts.load_space(args.space)
    top = artifacts.load_library(args.library).top_configs(args.k)
    reduced = reduce_space(space, top)
    artifacts.save_space(reduced, args.out)
    _print_json({"space": args.out, "k": len(top), "cardinality_before": cardinality(space),
                 "cardinality_after": cardinality(reduced)})
    return 0


def evaluate_command(args: argparse.Namespace) -> int:
    from dynamic_hat.elastic_model import inherit, load_checkpoint
    from dynamic_hat.eval_metrics import evaluate_model
    bank = load_checkpoint(args.bank)
    cfg = artifacts.load_config(args.config_file)
    report = evaluate_model(inherit(bank, cfg), artifacts.load_corpus(args.corpus))
    _print_json({"config_hash": cfg.config_hash(), **report.to_dict()})
    return 0


def run_command(args: argparse.Namespace, stdin=None) -> int:
    from dynamic_hat.elastic_model import load_checkpoint
    from dynamic_hat.runtime import RuntimeController, serve_commands
    controller = RuntimeController(load_checkpoint(args.bank), artifacts.load_library(args.library),
                                   event_stream=sys.stdout if args.events else None)
    handled = serve_commands(controller, stdin if stdin is not None else sys.stdin, sys.stdout)
    logger.info(f"Runtime controller handled {handled} commands")
    return 0


def report_command(args: argparse.Namespace) -> int:
    from dynamic_hat.app_core.report import render_library_report
    library = artifacts.load_library(args.library)
    compare = artifacts.load_library(args.compare) if args.compare else None
    text = render_library_report(library, compare, title=args.title)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def validate_config_command(config_path: str = "dhat.ini") -> int:
    """
    Validate configuration file and report issues.

    Args:
        config_path: Path to dhat.ini

    Returns:
        Exit code: 0 if valid, 1 if errors found, 2 if file missing
    """
    from dynamic_hat.app_core.settings_manager import ConfigManager

    config_file = Path(config_path)
    if not config_file.exists():
        print(f"Configuration file not found: {config_path}")
        print(f"Expected location: {config_file.absolute()}")
        return 2

    print(f"Validating configuration: {config_path}")
    issues = ConfigManager(config_path).validate()
    errors = [msg for sev, msg in issues if sev == "ERROR"]
    warnings = [msg for sev, msg in issues if sev == "WARNING"]

    for i, msg in enumerate(errors, 1):
        print(f"  ERROR {i}. {msg}")
    for i, msg in enumerate(warnings, 1):
        print(f"  WARNING {i}. {msg}")

    if errors:
        print(f"Configuration has {len(errors)} error(s) that must be fixed.")
        return 1
    print("Configuration is valid." if not warnings else "Configuration is valid (warnings can be ignored).")
    return 0


def pipeline_command(args: argparse.Namespace) -> int:
    """gen-corpus -> init-space -> train-super -> collect-latency -> fit-predictor -> search, plus a manifest."""
    out = Path(args.out_dir)
    paths = {
        "corpus": str(out / "corpus" / "train.jsonl"),
        "valid": str(out / "corpus" / "valid.jsonl"),
        "space": str(out / "space.json"),
        "bank": str(out / "bank.ckpt"),
        "training_log": str(out / "training.jsonl"),
        "latency_dataset": str(out / "latency.jsonl"),
        "predictor": str(out / "predictor.json"),
        "library": str(out / "library.json"),
    }
    seed = args.seed
    common = ["--config", args.config]
    steps = [
        ["gen-corpus", "--out-dir", str(out / "corpus"), "--seed", str(seed)],
        ["init-space", "--preset", args.preset, "--out", paths["space"]],
        ["train-super", "--space", paths["space"], "--corpus", paths["corpus"], "--out", paths["bank"],
         "--log", paths["training_log"], "--seed", str(seed)]
        + (["--steps", str(args.steps)] if args.steps is not None else []),
        ["collect-latency", "--space", paths["space"], "--hardware", args.hardware, "--out",
         paths["latency_dataset"], "--seed", str(seed), "--bank", paths["bank"]],
        ["fit-predictor", "--dataset", paths["latency_dataset"], "--out", paths["predictor"],
         "--seed", str(seed)],
        ["search", "--space", paths["space"], "--predictor", paths["predictor"], "--constraints",
         args.constraints, "--hardware", args.hardware, "--fitness", args.fitness, "--bank", paths["bank"],
         "--valid", paths["valid"], "--out", paths["library"], "--seed", str(seed)],
    ]
    for step in steps:
        logger.info(f"Pipeline step: {step[0]}")
        code = run_subcommand(common + step)
        if code != 0:
            return code
    manifest = artifacts.PipelineManifest(hardware_id=args.hardware, paths=paths,
                                          seeds={"corpus": seed, "train": seed, "latency": seed, "search": seed})
    artifacts.save_manifest(manifest, out / "manifest.json")
    _print_json({"manifest": str(out / "manifest.json")})
    return 0


# ============================================================================
# Parser
# ============================================================================

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, help="Training steps (default from [train])")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="Sentences per batch (default from [train])")
    p.add_argument("--lr", type=float, help="Peak learning rate")
    p.add_argument("--warmup", type=int, help="Linear warm-up steps")
    p.add_argument("--seed", type=int, help="Seed for batch order and config sampling")
    p.add_argument("--log", help="Write the per-step training log (JSONL) here")


def _add_latency_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hardware", choices=("real", "sim-gpu", "sim-cpu"),
                   help="Latency source: measured on this machine or simulated")
    p.add_argument("--repeats", type=int, help="Timed runs per config (protocol: 300)")
    p.add_argument("--trim", type=float, help="Fraction trimmed from each tail (protocol: 0.1)")
    p.add_argument("--sentence-len", type=int, dest="sentence_len", help="Tokens per timed translation")
    p.add_argument("--latency-warmup", type=int, dest="warmup", help="Untimed runs before timing")
    p.add_argument("--noise-sd", type=float, dest="noise_sd", help="Simulated timing noise (ms)")
    p.add_argument("--bank", help="SuperTransformer checkpoint (required for --hardware real)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dhat",
        description="Dynamic-HAT - hardware-aware elastic Transformers with run-time switching",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Examples:\n"
            "  dhat gen-corpus --out-dir data\n"
            "  dhat init-space --preset desk --out space.json\n"
            "  dhat train-super --space space.json --corpus data/train.jsonl --out bank.ckpt\n"
            "  dhat collect-latency --space space.json --hardware sim-gpu --out latency.jsonl\n"
            "  dhat fit-predictor --dataset latency.jsonl --out predictor.json\n"
            "  dhat search --space space.json --predictor predictor.json --constraints 500,1000,1500 --out lib.json\n"
            "  dhat run --bank bank.ckpt --library lib.json\n"
        ),
    )
    parser.add_argument("--config", default="dhat.ini", help="Settings file (default: dhat.ini)")
    parser.add_argument("--version", action="version", version=f"Dynamic-HAT {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True

    p = sub.add_parser("gen-corpus", help="Generate the synthetic reversal corpus splits")
    p.add_argument("--out-dir", required=True, dest="out_dir", help="Directory for train/valid/test corpus files")
    p.add_argument("--vocab-size", type=int, dest="vocab_size", help="Vocabulary size including the 4 reserved ids")
    p.add_argument("--n-train", type=int, dest="n_train", help="Training pairs")
    p.add_argument("--n-valid", type=int, dest="n_valid", help="Validation pairs")
    p.add_argument("--n-test", type=int, dest="n_test", help="Test pairs")
    p.add_argument("--min-len", type=int, dest="min_len", help="Shortest source sentence")
    p.add_argument("--max-len", type=int, dest="max_len", help="Longest source sentence")
    p.add_argument("--seed", type=int, help="Corpus seed")
    p.set_defaults(handler=gen_corpus_command)

    p = sub.add_parser("init-space", help="Write a preset design space")
    p.add_argument("--preset", choices=SPACE_PRESETS, default="desk", help="Design space preset (default: desk)")
    p.add_argument("--out", required=True, help="Write the space JSON here")
    p.set_defaults(handler=init_space_command)

    p = sub.add_parser("train-super", help="Train the weight-shared SuperTransformer on a (possibly reduced) space")
    p.add_argument("--space", required=True, help="Design space JSON")
    p.add_argument("--corpus", required=True, help="Training corpus JSON")
    p.add_argument("--valid", help="Validation corpus for the summary losses")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--init-seed", type=int, dest="init_seed", help="Seed for the bank's initial weights")
    _add_train_flags(p)
    p.set_defaults(handler=train_super_command)

    p = sub.add_parser("train-scratch", help="Train one config from scratch and report its validation loss")
    p.add_argument("--config-file", required=True, dest="config_file", help="SubConfig JSON to train")
    p.add_argument("--corpus", required=True, help="Training corpus JSON")
    p.add_argument("--valid", required=True, help="Validation corpus JSON")
    _add_train_flags(p)
    p.set_defaults(handler=train_scratch_command)

    p = sub.add_parser("compare-scratch", help="Inherited vs from-scratch validation loss")
    p.add_argument("--bank", required=True, help="SuperTransformer checkpoint")
    p.add_argument("--configs", nargs="*", help="Config JSON files")
    p.add_argument("--library", help="Take the top-k configs of this library")
    p.add_argument("--k", type=int, default=3, help="Configs taken from --library (default: 3)")
    p.add_argument("--corpus", required=True, help="Training corpus JSON")
    p.add_argument("--valid", required=True, help="Validation corpus JSON")
    _add_train_flags(p)
    p.set_defaults(handler=compare_scratch_command)

    p = sub.add_parser("collect-latency", help="Measure sampled configs into a latency dataset")
    p.add_argument("--space", required=True, help="Design space JSON")
    p.add_argument("--out", required=True, help="Write the latency dataset JSON here")
    p.add_argument("--n-samples", type=int, dest="n_samples", help="Configs to sample and measure")
    p.add_argument("--seed", type=int, help="Sampling seed")
    p.add_argument("--workers", type=int, default=1, help="Parallel measurements (simulated hardware only)")
    _add_latency_flags(p)
    p.set_defaults(handler=collect_latency_command)

    p = sub.add_parser("fit-predictor", help="Fit the linear latency predictor")
    p.add_argument("--dataset", required=True, help="Latency dataset JSON")
    p.add_argument("--out", required=True, help="Write the predictor JSON here")
    p.add_argument("--holdout", type=float, default=0.2, help="Fraction held out for RMSE (default: 0.2)")
    p.add_argument("--seed", type=int, default=0, help="Split seed (default: 0)")
    p.set_defaults(handler=fit_predictor_command)

    p = sub.add_parser("search", help="Search one operating point per latency constraint")
    p.add_argument("--space", required=True, help="Design space JSON")
    p.add_argument("--predictor", required=True, help="Latency predictor JSON")
    p.add_argument("--constraints", required=True, help="Comma-separated latency budgets in ms")
    p.add_argument("--fitness", choices=("surrogate", "val-loss"), default="val-loss",
                   help="Loss used to rank candidates (default: val-loss)")
    p.add_argument("--valid", help="Validation corpus (val-loss fitness)")
    p.add_argument("--out", required=True, help="Write the operating library JSON here")
    p.add_argument("--population", type=int, help="Candidates per generation")
    p.add_argument("--iterations", type=int, help="Generations")
    p.add_argument("--workers", type=int, help="Threads evaluating fitness")
    p.add_argument("--seed", type=int, help="Search seed")
    _add_latency_flags(p)
    p.set_defaults(handler=search_command)

    p = sub.add_parser("reduce-space", help="Shrink a space to the choices used by a library's top-k configs")
    p.add_argument("--space", required=True, help="Design space JSON")
    p.add_argument("--library", required=True, help="Operating library JSON")
    p.add_argument("--k", type=int, default=5, help="Top configs kept (default: 5)")
    p.add_argument("--out", required=True, help="Write the reduced space JSON here")
    p.set_defaults(handler=reduce_space_command)

    p = sub.add_parser("evaluate", help="BLEU, token accuracy and validation loss of one inherited config")
    p.add_argument("--bank", required=True, help="SuperTransformer checkpoint")
    p.add_argument("--config-file", required=True, dest="config_file", help="SubConfig JSON to evaluate")
    p.add_argument("--corpus", required=True, help="Evaluation corpus JSON")
    p.set_defaults(handler=evaluate_command)

    p = sub.add_parser("run", help="Serve line commands with run-time operating-point switching")
    p.add_argument("--bank", required=True, help="SuperTransformer checkpoint")
    p.add_argument("--library", required=True, help="Operating library JSON")
    p.add_argument("--events", action="store_true", help="Also stream controller events to stdout")
    p.set_defaults(handler=run_command)

    p = sub.add_parser("report", help="Render a library as a Markdown table")
    p.add_argument("--library", required=True, help="Operating library JSON")
    p.add_argument("--compare", help="Second library (e.g. the reduced space)")
    p.add_argument("--title", default="Operating points", help="Report heading")
    p.add_argument("--out", help="Write the Markdown here instead of stdout")
    p.set_defaults(handler=report_command)

    p = sub.add_parser("validate-config", help="Check a settings file for errors")
    p.add_argument("path", nargs="?", default=None, help="Settings file (default: --config)")
    p.set_defaults(handler=lambda a: validate_config_command(a.path or a.config))

    p = sub.add_parser("pipeline", help="Run every step end to end and write a manifest")
    p.add_argument("--out-dir", required=True, dest="out_dir", help="Directory for every artifact and the manifest")
    p.add_argument("--preset", choices=SPACE_PRESETS, default="desk", help="Design space preset (default: desk)")
    p.add_argument("--hardware", choices=("real", "sim-gpu", "sim-cpu"), default="sim-gpu",
                   help="Latency source (default: sim-gpu)")
    p.add_argument("--constraints", default="400,600,800,1000,1200,1400", help="Comma-separated latency budgets in ms")
    p.add_argument("--fitness", choices=("surrogate", "val-loss"), default="val-loss",
                   help="Loss used to rank candidates (default: val-loss)")
    p.add_argument("--steps", type=int, help="Override SuperTransformer training steps")
    p.add_argument("--seed", type=int, default=0, help="Seed for every step (default: 0)")
    p.set_defaults(handler=pipeline_command)

    return parser


def run_subcommand(argv: Sequence[str]) -> int:
    """Parse argv, run one subcommand and return its exit status.

    A DynamicHatError becomes exit status 1 plus one JSON line on stderr.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as e:
        return int(e.code or 0)

    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        code = handler(args)
    except DynamicHatError as e:
        logger.error(str(e))
        emit_record(sys.stderr, e.to_dict())
        return 1
    if args.command not in ("run", "validate-config"):
        log_action(args.command, {"argv": list(argv), "exit": code})
    return code


def main() -> None:
    """Main CLI entry point for Dynamic-HAT"""
    configure_logging(console_output=True)
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
