"""Command line: ``dpc <train|eval|ablate|sensitivity|gradcheck> --config FILE [--set key=value]...``"""
import argparse
import logging
import sys
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from dpc.config import RunConfig, parse_config, worker_threads
from dpc.errors import DPCError, GradCheckFailed
from dpc.training import checkpoint as checkpoints
from dpc.training import harness, trainer
from dpc.training.metrics import plot_confusion_matrix, write_confusion_csv
from dpc.utils import report_generator as reports
from dpc.utils.report_generator import RunDirectory

logger = logging.getLogger("dpc")

COMMANDS = ("train", "eval", "ablate", "sensitivity", "gradcheck")

CHECKPOINT = "checkpoint.dpcc"
METRICS = "metrics.txt"
EVAL_METRICS = "eval_metrics.txt"
CONFUSION = "confusion.csv"
CONFUSION_PLOT = "confusion.png"
EVAL_CONFUSION = "eval_confusion.csv"
EVAL_CONFUSION_PLOT = "eval_confusion.png"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpc", description="Diversified prompt composition over frozen encoders")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config value, e.g. optim.lr0=0.01 (repeatable)")
    parser.add_argument("--checkpoint", help="Checkpoint to evaluate (eval only; defaults to the run directory)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser


def _summary(run: RunDirectory, title: str, sections, notes: Optional[str] = None) -> None:
    reports.generate_txt_report(title, run.digest, sections, str(run.file("summary.txt")), notes)


def cmd_train(config: RunConfig, run: RunDirectory, args) -> None:
    context = trainer.prepare_run(config)
    result = trainer.train(config, context)
    checkpoints.save_checkpoint(result.checkpoint, run.file(CHECKPOINT))
    metrics = trainer.evaluate_model(result.model, context.data.test, config.optim.batch_size, worker_threads())
    reports.write_key_values(run.file(METRICS), config.digest,
                             reports.metrics_items(result.history, metrics, context.data.labels))
    write_confusion_csv(metrics, run.file(CONFUSION), config.digest)
    plot_confusion_matrix(metrics, context.data.labels, run.file(CONFUSION_PLOT))
    _summary(run, "Prompt training", {
        "run": {"flags": config.prompt.flags.label, "template": config.prompt.template,
                "encoder digest": context.encoders.digest, "steps": result.steps},
        "test metrics": metrics.as_dict(context.data.labels),
    })
    logger.info("final test accuracy %.4f", metrics.accuracy)


def cmd_eval(config: RunConfig, run: RunDirectory, args) -> None:
    context = trainer.prepare_run(config)
    path = args.checkpoint or run.file(CHECKPOINT)
    metrics = trainer.evaluate(checkpoints.load_checkpoint(path), config, context)
    reports.write_key_values(run.file(EVAL_METRICS), config.digest, metrics.as_dict(context.data.labels, "test."))
    write_confusion_csv(metrics, run.file(EVAL_CONFUSION), config.digest)
    plot_confusion_matrix(metrics, context.data.labels, run.file(EVAL_CONFUSION_PLOT))
    logger.info("test accuracy %.4f", metrics.accuracy)


def cmd_ablate(config: RunConfig, run: RunDirectory, args) -> None:
    context = trainer.prepare_run(config)
    report = harness.ablate(config, context)
    reports.write_key_values(run.file("ablation.txt"), config.digest, reports.ablation_items(report))
    _summary(run, "Ablation", {
        "accuracy": {row.flags.label: row.accuracy for row in report.rows},
        "baseline": {"untrained template": report.baseline_accuracy},
    })


def cmd_sensitivity(config: RunConfig, run: RunDirectory, args) -> None:
    context = trainer.prepare_run(config)
    report = harness.sensitivity(config.prompt.templates, config, context)
    reports.write_key_values(run.file("sensitivity.txt"), config.digest, reports.sensitivity_items(report))
    _summary(run, "Template sensitivity", {
        "accuracy": dict(zip(report.templates, report.accuracies)),
        "spread": {"mean": report.mean, "sample std": report.std},
    })


def cmd_gradcheck(config: RunConfig, run: RunDirectory, args) -> None:
    context = trainer.prepare_run(config)
    report = harness.gradcheck_run(config, context)
    reports.write_key_values(run.file("gradcheck.txt"), config.digest, reports.gradcheck_items(report))
    if not report.passed:
        raise GradCheckFailed(report)


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sensitivity": cmd_sensitivity,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    # Load environment variables
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = parse_config(args.config, args.overrides)
        with RunDirectory(config.paths.output_dir, config.digest) as run:
            logger.info("%s run %s", args.command, run.path)
            HANDLERS[args.command](config, run, args)
    except DPCError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    return 0


def run(command: str, config_file: str, overrides: List[str] = ()) -> int:
    """Programmatic entry point mirroring the command line."""
    argv = [command, "--config", str(config_file)]
    for override in overrides:
        argv += ["--set", override]
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
