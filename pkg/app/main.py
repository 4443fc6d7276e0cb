import argparse
import json
import sys
from typing import Any, Dict, Optional, Sequence

from dotenv import load_dotenv

from app.cli.commands import COMMANDS, EXIT_FAILURE, EXIT_USAGE, dispatch
from app.config import deep_merge, load_config, parse_assignment, set_dotted
from app.exceptions import ConfigError, EngineError
from app.utils.logging import get_logger, log_error, setup_logging

logger = get_logger(__name__)

# flag dest -> dotted config key
FLAG_KEYS = {
    "ontology": "paths.ontology",
    "corpus": "paths.corpus",
    "embeddings": "paths.embeddings",
    "gold": "paths.gold",
    "predictions": "paths.predictions",
    "output": "paths.output",
    "report": "paths.report",
    "quarantine": "paths.quarantine",
    "metrics": "paths.metrics",
    "parallelism": "parallelism",
    "log_level": "log_level",
    "k": "extraction.recall.k",
    "partitions": "extraction.partitions",
    "strategy": "extraction.strategy",
    "seed": "extraction.seed",
    "anchor": "evaluation.argument_anchor",
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. extraction.recall.k=10 (repeatable)")
    parser.add_argument("--ontology", help="event type ontology (JSON lines)")
    parser.add_argument("--metrics", help="write Prometheus metrics to this file on exit")
    parser.add_argument("--parallelism", type=int, help="records processed concurrently")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _retrieval(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embeddings", help="token embedding store (JSON lines)")
    parser.add_argument("--synthesize", type=int, metavar="DIM",
                        help="build a deterministic hashed embedding store of this dimension instead")
    parser.add_argument("--k", type=int, help="number of recalled event types")


def _partitioning(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--partitions", type=int, help="number of partitions N")
    parser.add_argument("--strategy", choices=["random", "level", "average"])
    parser.add_argument("--seed", type=int, help="seed for the random strategy")
    parser.add_argument("--no-recall", dest="use_recall", action="store_false", default=None,
                        help="partition the whole ontology instead of the recalled types")


def _outputs(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--output", help="output corpus (default: stdout)")
    parser.add_argument("--report", help="JSON report file")
    parser.add_argument("--quarantine", help="sidecar for records that could not be processed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtee", description="Massive-type event extraction")
    sub = parser.add_subparsers(dest="command", required=True)

    annotate = sub.add_parser("annotate", help="annotate trigger candidates by multi-model voting")
    _common(annotate)
    annotate.add_argument("--corpus", help="input corpus with trigger candidates")
    _outputs(annotate)

    extract = sub.add_parser("extract", help="recall, partition and extract events")
    _common(extract)
    extract.add_argument("--corpus", help="sentences to extract from")
    _retrieval(extract)
    _partitioning(extract)
    _outputs(extract)

    recall = sub.add_parser("recall", help="print the top-k recalled event types per sentence")
    _common(recall)
    recall.add_argument("--corpus")
    recall.add_argument("--sentence", help="only this sentence id")
    _retrieval(recall)

    partition = sub.add_parser("partition", help="print the partition plan per sentence")
    _common(partition)
    partition.add_argument("--corpus")
    partition.add_argument("--sentence", help="only this sentence id")
    partition.add_argument("--compare", action="store_true", help="report every strategy side by side")
    _retrieval(partition)
    _partitioning(partition)

    evaluate = sub.add_parser("eval", help="score predictions against gold")
    _common(evaluate)
    evaluate.add_argument("--predictions")
    evaluate.add_argument("--gold")
    evaluate.add_argument("--report", help="JSON report file (default: stdout)")
    evaluate.add_argument("--anchor", choices=["type", "trigger"], help="argument matching convention")

    validate = sub.add_parser("validate", help="check the ontology, corpus and embedding store")
    _common(validate)
    validate.add_argument("--corpus")
    validate.add_argument("--embeddings")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Explicit flags, then --set assignments, as one nested override mapping"""
    overrides: Dict[str, Any] = {}
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides = set_dotted(overrides, key, value)
    if getattr(args, "use_recall", None) is not None:
        overrides = set_dotted(overrides, "extraction.use_recall", args.use_recall)
    for assignment in args.overrides:
        overrides = deep_merge(overrides, parse_assignment(assignment))
    return overrides


def _fail(exc: Exception) -> int:
    summary = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(summary, ensure_ascii=False) + "\n")
    return EXIT_FAILURE


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    load_dotenv()
    setup_logging(args.log_level or "INFO")
    try:
        config = load_config(args.config, overrides_from_args(args))
    except ConfigError as exc:
        log_error(logger, type(exc).__name__, str(exc), {"command": args.command})
        return _fail(exc)
    setup_logging(config.log_level)

    if args.command not in COMMANDS:
        return EXIT_USAGE
    try:
        return dispatch(args.command, config,
                        sentence_id=getattr(args, "sentence", None),
                        synthesize=getattr(args, "synthesize", None),
                        compare=getattr(args, "compare", False))
    except (EngineError, OSError) as exc:
        log_error(logger, type(exc).__name__, str(exc), {"command": args.command})
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
