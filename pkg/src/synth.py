import os

import numpy as np

from datasets.synthetic import toy_benchmark_configs, sample_toy_config, save_benchmark, manifest_hash
from experiments import in_workspace, write_config


def dual_configs(n_dual, master_seed, image_size, length_range=(80, 300)):
    """configs for the dual-modality scenes that go through convert_dual. independent of the split draws"""
    rng = np.random.default_rng([master_seed, 1])
    return [sample_toy_config(rng, "dual_{:04d}".format(i), image_size=image_size,
                              length_range=length_range) for i in range(n_dual)]


def cmd_synth(args):
    root = in_workspace(args, args.benchmark)
    length_range = tuple(args.sequence_length)
    train_configs, test_configs = toy_benchmark_configs(args.n_train, args.n_test, args.master_seed,
                                                        image_size=args.image_size, length_range=length_range)
    duals = dual_configs(args.n_dual, args.master_seed, args.image_size, length_range)

    manifest = save_benchmark(root, train_configs, test_configs, duals, master_seed=args.master_seed,
                              force=args.force, extra=dict(experiment=args.experiment))
    write_config(args, root)

    print("{} train, {} test, {} converted ({} discarded) sequences in {}".format(
        len(manifest["train"]), len(manifest["test"]), len(manifest["converted"]), len(manifest["discarded"]),
        root))
    return os.path.join(root, "manifest.json"), manifest_hash(manifest)
