"""
Command-line interface: kwspot {gen-data,train,align,decode,eval,sweep,serve}
"""
import argparse
import logging
import sys
from typing import List, Optional

from kwspot.config import configure_logging, load_experiment_config, settings
from kwspot.errors import ConfigError, DataError, KwsError
from kwspot.experiment_service import ExperimentService
from kwspot.models.configs import CriterionKind, PostMode, TopologyKind

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kwspot", description="Acoustic keyword spotting experiments")
    parser.add_argument("--config", help="experiment configuration (JSON)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--criterion", choices=[c.value for c in CriterionKind])
    parser.add_argument("--topology", choices=[t.value for t in TopologyKind])
    parser.add_argument("--post", choices=[p.value for p in PostMode])
    parser.add_argument("--log-level", default=None, help="logging level (default from settings)")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", help="generate the synthetic corpus")
    sub.add_parser("train", help="train the frame classifier and calibrate the decoders")
    align = sub.add_parser("align", help="forced-align a split with the trained model")
    align.add_argument("--split", default="train")
    decode = sub.add_parser("decode", help="write detections of a split")
    decode.add_argument("--split", default="test")
    evaluate = sub.add_parser("eval", help="EER/FAF/ROC and RTF for every post-processing mode")
    evaluate.add_argument("--split", default="test")
    sweep = sub.add_parser("sweep", help="keyword-filler ROC over filler weights")
    sweep.add_argument("--split", default="test")
    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8001)
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "serve":
        import uvicorn

        uvicorn.run("kwspot.main:app", host=args.host, port=args.port, reload=settings.debug, log_level="info")
        return EXIT_OK

    config = load_experiment_config(
        args.config, seed=args.seed, threads=args.threads, criterion=args.criterion,
        topology=args.topology, post=args.post,
    )
    service = ExperimentService(config)
    if args.command == "gen-data":
        service.gen_data()
    elif args.command == "train":
        service.train()
    elif args.command == "align":
        service.align(args.split)
    elif args.command == "decode":
        service.decode(args.split)
    elif args.command == "eval":
        reports, timing = service.evaluate(args.split)
        for mode, report in reports.items():
            print(f"{mode}\tEER={report.eer:.4f}\tFAF={report.faf:.2f}\tRTF={timing.rtf[mode]:.4f}")
    elif args.command == "sweep":
        result = service.sweep(args.split)
        print(f"kwfiller\tEER={result.eer:.4f}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return run(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except KwsError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
