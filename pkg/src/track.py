import os

import pandas as pd
import torch
import tqdm
from joblib import Parallel, delayed

from errors import ConfigurationError, InsufficientDataError
from datasets.sequence import load_sequences, write_results
from tracking.tracker import run_sequence
from experiments import in_workspace, write_config, tracker_options
from train import getModel, run_name, final_checkpoint

MARMOT_PREFIXES = ("marmot.", "extra_marmot.")


def load_tracker(args):
    """network from the configured spec with the trained parameters. --no-marmot drops the block's keys"""
    checkpoint = in_workspace(args, args.checkpoint) if getattr(args, "checkpoint", None) else final_checkpoint(args)
    if not os.path.exists(checkpoint):
        raise ConfigurationError(f"checkpoint {checkpoint} does not exist. run 'train' first")

    net = getModel(args)
    ignore = MARMOT_PREFIXES if not net.use_marmot else ()
    net.load(checkpoint, ignore_prefixes=ignore)
    net.eval()
    return net, checkpoint


def track_one(net, sequence, options, seed, outdir):
    torch.set_num_threads(1)
    boxes, log = run_sequence(net, sequence, options, seed=seed)
    write_results(os.path.join(outdir, sequence.id + ".txt"), boxes)
    log.to_json(os.path.join(outdir, sequence.id + ".jsonl"), orient="records", lines=True)
    elapsed = float(log["elapsed"].sum())
    return dict(sequence=sequence.id, frames=len(sequence), seconds=elapsed, fps=log.attrs["fps"],
                successes=int(log["success"].sum()), updates=int(log["update"].notna().sum()))


def cmd_track(args):
    root = os.path.join(in_workspace(args, args.benchmark), args.split)
    if not os.path.isdir(root):
        raise InsufficientDataError(f"no {args.split} split at {root}. run 'synth' first")
    dataset = load_sequences(root)

    net, checkpoint = load_tracker(args)
    options = tracker_options(args)

    outdir = os.path.join(in_workspace(args, "results"), run_name(args))
    os.makedirs(outdir, exist_ok=True)
    write_config(args, outdir)
    print("tracking {} sequences with {} ({} jobs)".format(len(dataset), checkpoint, args.jobs))

    rows = Parallel(n_jobs=args.jobs)(delayed(track_one)(net, sequence, options, args.seed, outdir)
                                      for sequence in tqdm.tqdm(dataset, desc="tracking", leave=False))

    summary = pd.DataFrame(rows).set_index("sequence")
    summary.to_csv(os.path.join(outdir, "summary.csv"), float_format="%.6f")
    print("tracked {} frames at {:.1f} frames per second".format(int(summary["frames"].sum()),
                                                                  summary["frames"].sum() / summary["seconds"].sum()))
    return outdir
