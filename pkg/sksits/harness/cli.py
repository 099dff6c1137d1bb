"""
Command line interface

    sksits train     --config run.yaml [--resume]
    sksits evaluate  --config run.yaml [--checkpoint DIR] [--split test] [--max-dates N]
    sksits predict   --config run.yaml [--samples ID ...] [--limit N]
    sksits ablate    --config run.yaml [--variants full skip_mean ...]
    sksits gen-data  --config run.yaml [--root DIR] [--n-samples N]

Exit codes: 0 on success, 2 for configuration errors, 3 for data errors
and 4 when training diverges.
"""
import argparse
import logging
import sys

from .. import __version__
from ..encoders import ABLATIONS
from ..exceptions import ConfigError, DatasetError, DivergenceError, EmptyEvaluation
from . import runs
from .config import load_config

logger = logging.getLogger("sksits")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


def _common(parser):
    parser.add_argument("--config", default=None, help="YAML run configuration, defaults if omitted")
    parser.add_argument("--fold", type=int, default=None, help="cross validation fold, in 1..5")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--device", default=None, help="torch device, e.g. cpu or cuda:0")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logs and progress bars")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sksits", description="Panoptic segmentation of satellite image time series"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", help="train a model, keeping the best validation epoch")
    _common(p)
    p.add_argument("--resume", action="store_true", help="resume from the last checkpoint of --out")

    p = commands.add_parser("evaluate", help="metrics of a trained model")
    _common(p)
    p.add_argument("--checkpoint", default=None, help="model directory, <out>/model by default")
    p.add_argument("--split", choices=runs.SPLITS, default="test")
    p.add_argument("--max-dates", type=int, default=None, help="keep the first N acquisitions only")

    p = commands.add_parser("predict", help="maps and figures of a split")
    _common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", choices=runs.SPLITS, default="test")
    p.add_argument("--samples", nargs="+", default=None, metavar="ID")
    p.add_argument("--limit", type=int, default=None)

    p = commands.add_parser("ablate", help="train and evaluate architecture variants")
    _common(p)
    p.add_argument("--variants", nargs="+", default=list(ABLATIONS), metavar="VARIANT")

    p = commands.add_parser("gen-data", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--root", default=None, help="<out>/data by default")
    p.add_argument("--n-samples", type=int, default=None)
    return parser


def _run(args):
    config = load_config(args.config).override(
        fold=args.fold, seed=args.seed, out=args.out, device=args.device
    )
    if args.command == "train":
        runs.train(config, resume=args.resume, verbose=args.verbose)
    elif args.command == "evaluate":
        runs.evaluate(config, checkpoint=args.checkpoint, split=args.split, max_dates=args.max_dates)
    elif args.command == "predict":
        runs.predict(
            config, checkpoint=args.checkpoint, split=args.split, sample_ids=args.samples, limit=args.limit
        )
    elif args.command == "ablate":
        print(runs.ablate(config, variants=args.variants, verbose=args.verbose).to_string())
    else:
        print(runs.generate(config, root=args.root, n_samples=args.n_samples))


def main(argv=None):
    """
    Entry point of the ``sksits`` command

    Returns
    -------
    int
        exit code
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        _run(args)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (DatasetError, EmptyEvaluation) as e:
        logger.error("data error: %s", e)
        return EXIT_DATA
    except DivergenceError as e:
        logger.error("training diverged: %s", e)
        return EXIT_DIVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
