import sys
import argparse

from errors import ConfigurationError, ShapeError, DataError, NumericError
from experiments import resolve, EXPERIMENTS


def add_common(parser):
    parser.add_argument(
        '-x', '--experiment', type=str, default="toy_three_stage", help='experiment preset. one of ' + ", ".join(EXPERIMENTS))
    parser.add_argument(
        '--config', type=str, default=None, help='YAML file overriding preset fields')
    parser.add_argument(
        '--set', type=str, action="append", default=None, help='key=value override, applied last. may be repeated')
    parser.add_argument(
        '--workspace', type=str, default=None, help='root of all relative paths. default $CMOT_WORKSPACE or .')
    parser.add_argument(
        '--run', type=str, default=None, help='name of the training run. default: experiment name')
    parser.add_argument(
        '--seed', type=int, default=None, help='seed for weight initialization, batching and tracking. default 0')
    parser.add_argument('--force', action='store_true', help="overwrite existing outputs")


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="cross-modal RGB/NIR tracking toolkit")
    subparsers = parser.add_subparsers(dest="command", required=True)

    synth = subparsers.add_parser("synth", help="render the synthetic toy benchmark")
    add_common(synth)

    train = subparsers.add_parser("train", help="train the tracking network")
    add_common(train)
    train.add_argument('--stages', type=str, default=None, choices=["three", "one"], help='training schedule')
    train.add_argument('--no-marmot', action='store_true', help='identity block in place of the modality-aware block')
    train.add_argument('-w', '--workers', type=int, default=0, help='number of CPU workers to load the next batch')
    train.add_argument('-q', '--quiet', action='store_true', help='no per-iteration console output')

    track = subparsers.add_parser("track", help="track the test split with a trained network")
    add_common(track)
    track.add_argument('--stages', type=str, default=None, choices=["three", "one"], help='picks the final checkpoint')
    track.add_argument('--checkpoint', type=str, default=None, help='checkpoint to track with')
    track.add_argument('--no-marmot', action='store_true', help='identity block in place of the modality-aware block')
    track.add_argument('--jobs', type=int, default=1, help='sequences tracked in parallel')

    evaluate = subparsers.add_parser("eval", help="score result sets against the ground truth")
    add_common(evaluate)
    evaluate.add_argument('--results', type=str, action="append", default=None,
                          help='name=directory of a result set. may be repeated')
    evaluate.add_argument('--out', type=str, default=None, help='report directory')
    evaluate.add_argument('--speed', action='store_true', help='include tracking speed from summary.csv')
    evaluate.add_argument('--jobs', type=int, default=1, help='result files read in parallel')

    report = subparsers.add_parser("report", help="plots and tables from saved report files")
    add_common(report)
    report.add_argument('--reports', type=str, action="append", default=None,
                        help='name=path of a report JSON file. may be repeated')
    report.add_argument('--out', type=str, default=None, help='report directory')

    return parser.parse_args(argv)


def run(args):
    if args.command == "synth":
        from synth import cmd_synth
        return cmd_synth(args)
    elif args.command == "train":
        from train import cmd_train
        return cmd_train(args)
    elif args.command == "track":
        from track import cmd_track
        return cmd_track(args)
    elif args.command == "eval":
        from evaluate import cmd_eval
        return cmd_eval(args)
    elif args.command == "report":
        from evaluate import cmd_report
        return cmd_report(args)
    raise ConfigurationError(f"unknown command {args.command}")


def main(argv=None):
    try:
        args = resolve(parse_args(argv))
        run(args)
    except (ConfigurationError, ShapeError, DataError, NumericError) as e:
        print("{}: {}".format(type(e).__name__, e), file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
