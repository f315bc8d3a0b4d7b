import os

import pandas as pd
from joblib import Parallel, delayed

from errors import ConfigurationError, InsufficientDataError, MissingResultsError
from datasets.sequence import load_sequences, read_results
from utils.trackmetric import evaluate
from utils.report import report, load_report, plot_curves, compare_reports, write_latex_table
from experiments import in_workspace, write_config, eval_config
from train import run_name


def parse_pairs(pairs, what):
    """name=path arguments into an ordered dict"""
    parsed = dict()
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"{what} '{pair}' is not of the form name=path")
        name, path = pair.split("=", 1)
        if name in parsed:
            raise ConfigurationError(f"{what} name {name} given twice")
        parsed[name] = path
    return parsed


def read_result_set(directory, dataset, jobs=1):
    if not os.path.isdir(directory):
        raise MissingResultsError(f"results directory {directory} does not exist")
    missing = [s.id for s in dataset if not os.path.exists(os.path.join(directory, s.id + ".txt"))]
    if len(missing) > 0:
        raise MissingResultsError(f"no results for sequence {missing[0]} in {directory}"
                                  + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    boxes = Parallel(n_jobs=jobs)(delayed(read_results)(os.path.join(directory, s.id + ".txt")) for s in dataset)
    return dict((s.id, b) for s, b in zip(dataset, boxes))


def tracking_speed(directory):
    """frames per second over all sequences, from the tracker's summary.csv"""
    path = os.path.join(directory, "summary.csv")
    if not os.path.exists(path):
        return None
    summary = pd.read_csv(path)
    seconds = summary["seconds"].sum()
    return float(summary["frames"].sum() / seconds) if seconds > 0 else None


def write_comparison(reports, outdir):
    table = compare_reports(reports)
    table.to_csv(os.path.join(outdir, "comparison.csv"), float_format="%.4f")
    write_latex_table(table, os.path.join(outdir, "comparison.tex"))
    print(table[["pr", "npr", "sr1", "sr2"]].to_string(float_format=lambda x: "%.3f" % x))
    return table


def cmd_eval(args):
    root = os.path.join(in_workspace(args, args.benchmark), args.split)
    if not os.path.isdir(root):
        raise InsufficientDataError(f"no {args.split} split at {root}")
    dataset = load_sequences(root)
    cfg = eval_config(args)

    result_sets = parse_pairs(args.results, "--results")
    if len(result_sets) == 0:
        result_sets = {run_name(args): os.path.join("results", run_name(args))}

    outdir = in_workspace(args, args.out or os.path.join("reports", "_".join(result_sets)))
    write_config(args, outdir)

    reports = dict()
    for name, directory in result_sets.items():
        directory = in_workspace(args, directory)
        results = read_result_set(directory, dataset, args.jobs)
        # speed varies between runs, so it stays out of the report unless asked for
        fps = tracking_speed(directory) if args.speed else None
        reports[name] = evaluate(results, dataset, cfg, fps=fps)
        report(reports[name], os.path.join(outdir, name), name=name)
        print("{}: {}".format(name, ", ".join("{}={:.3f}".format(k, v) for k, v in reports[name].summary().items())))

    if len(reports) > 1:
        plot_curves(reports, outdir)
        write_comparison(reports, outdir)
    return reports


def cmd_report(args):
    paths = parse_pairs(args.reports, "--reports")
    if len(paths) == 0:
        raise ConfigurationError("report needs at least one --reports name=path.json")
    reports = dict()
    for name, path in paths.items():
        path = in_workspace(args, path)
        if not os.path.exists(path):
            raise MissingResultsError(f"report {path} does not exist")
        reports[name] = load_report(path)

    outdir = in_workspace(args, args.out or os.path.join("reports", "_".join(paths)))
    write_config(args, outdir)
    for name, r in reports.items():
        report(r, os.path.join(outdir, name), name=name)
    plot_curves(reports, outdir)
    write_comparison(reports, outdir)
    return reports
