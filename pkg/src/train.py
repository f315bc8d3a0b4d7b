import os

import numpy as np
import torch

from errors import InsufficientDataError
from datasets.sequence import load_sequences, dataset_statistics, switch_histogram
from models.TrackNet import build_network
from utils.trainer import run_training, CHECKPOINT_NAMES
from experiments import in_workspace, write_config, build_spec, training_config


def trained_run(args):
    return getattr(args, "run", None) or args.experiment


def run_name(args):
    """output directory name. --no-marmot on a network with the block gets its own directory"""
    name = trained_run(args)
    return name + "_nomarmot" if getattr(args, "no_marmot", False) and args.use_marmot else name


def prepare_dataset(args):
    root = os.path.join(in_workspace(args, args.benchmark), "train")
    if not os.path.isdir(root):
        raise InsufficientDataError(f"no training split at {root}. run 'synth' first")
    train_set = load_sequences(root)
    if len(train_set) == 0:
        raise InsufficientDataError(f"no sequences in {root}")

    print(dataset_statistics(train_set).to_string())
    print("modality switches per sequence: {}".format(switch_histogram(train_set)))
    return train_set


def getModel(args):
    use_marmot = args.use_marmot and not getattr(args, "no_marmot", False)
    return build_network(build_spec(args), use_marmot=use_marmot)


def final_checkpoint(args):
    """last checkpoint of the trained run. the identity substitution reuses the run trained with the block"""
    stage = "III" if args.stages == "three" else "one"
    return os.path.join(in_workspace(args, "runs"), trained_run(args), CHECKPOINT_NAMES[stage])


def cmd_train(args):
    train_set = prepare_dataset(args)

    print("setting random seed to " + str(args.seed))
    np.random.seed(args.seed)
    torch.random.manual_seed(args.seed)

    net = getModel(args)
    store = os.path.join(in_workspace(args, "runs"), run_name(args))
    write_config(args, store)

    manifest = run_training(net, train_set, training_config(args), stages=args.stages, store=store,
                            verbose=not getattr(args, "quiet", False))
    print()
    print("wrote {} checkpoints to {}".format(len(manifest["results"]), store))
    return manifest
