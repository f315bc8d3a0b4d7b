import os
import copy
import json
import hashlib
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn.functional as F

from errors import ConfigurationError, NumericError, InsufficientDataError
from datasets.sequence import Modality
from datasets.FramePatch_Dataset import FramePatchDataset, split_by_modality, batch_loader, DATA_FILTERS
from models.TrackNet import PARAMETER_GROUPS, GROUP_ALIASES
from utils.logger import Logger
from utils.printer import Printer

STAGES = ["I", "II", "III", "one"]
CHECKPOINT_NAMES = dict(I="stage1.ckpt", II="stage2.ckpt", III="stage3.ckpt", one="onestage.ckpt")


@dataclass
class StageConfig:
    stage: str
    trainable: tuple
    lr: dict
    iterations: int
    data_filter: str = "all"
    bypass_marmot: bool = False

    def __post_init__(self):
        self.trainable = tuple(self.trainable)
        self.validate()

    def validate(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown stage {self.stage}. choose from {STAGES}")
        if len(self.trainable) == 0:
            raise ConfigurationError(f"stage {self.stage}: nothing to train")
        known = PARAMETER_GROUPS + list(GROUP_ALIASES)
        unknown = [name for name in self.trainable if name not in known]
        if len(unknown) > 0:
            raise ConfigurationError(f"stage {self.stage}: unknown parameter groups {unknown}. choose from {known}")
        if set(self.lr.keys()) != set(self.trainable):
            raise ConfigurationError(f"stage {self.stage}: learning rates {sorted(self.lr)} "
                                     f"do not match trainable groups {sorted(self.trainable)}")
        if self.iterations < 1:
            raise ConfigurationError(f"stage {self.stage}: iterations must be >= 1, got {self.iterations}")
        if self.data_filter not in DATA_FILTERS + ["alternate"]:
            raise ConfigurationError(f"stage {self.stage}: unknown data filter {self.data_filter}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingConfig:
    base_lr: float = 1e-3
    stage1_iterations: int = 300
    stage2_lr: float = 1e-4
    stage2_iterations: int = 1000
    stage3_iterations: int = 300
    momentum: float = 0.9
    weight_decay: float = 5e-4
    n_frames: int = 8
    n_pos: int = 32
    n_neg: int = 96
    seed: int = 0
    workers: int = 0
    log_every: int = 10

    def to_dict(self):
        return asdict(self)


def stage_configs(cfg, use_marmot=True):
    """the freeze masks and learning rates of the three stages"""
    stage1_lr = cfg.base_lr / 10
    configs = dict(
        I=StageConfig("I", ("backbone", "head_hidden", "head_final"),
                      dict(backbone=stage1_lr, head_hidden=stage1_lr, head_final=stage1_lr),
                      cfg.stage1_iterations, "all", bypass_marmot=True),
    )
    if use_marmot:
        configs["II"] = StageConfig("II", ("branch_rgb", "branch_nir", "head_final"),
                                    dict(branch_rgb=cfg.stage2_lr, branch_nir=cfg.stage2_lr, head_final=cfg.stage2_lr),
                                    cfg.stage2_iterations, "alternate")
        configs["III"] = StageConfig("III", ("ensemble", "head_hidden", "head_final"),
                                     dict(ensemble=cfg.stage2_lr, head_hidden=stage1_lr, head_final=stage1_lr),
                                     cfg.stage3_iterations, "mixed")
    else:
        configs["III"] = StageConfig("III", ("head_hidden", "head_final"),
                                     dict(head_hidden=stage1_lr, head_final=stage1_lr),
                                     cfg.stage3_iterations, "mixed")
    return configs


def one_stage_config(cfg, use_marmot=True):
    """every group jointly, for the summed iteration budget of the three stages"""
    stage1_lr = cfg.base_lr / 10
    lr = dict(backbone=stage1_lr, head_hidden=stage1_lr, head_final=stage1_lr)
    if use_marmot:
        lr.update(branch_rgb=cfg.stage2_lr, branch_nir=cfg.stage2_lr, ensemble=cfg.stage2_lr)
        iterations = cfg.stage1_iterations + cfg.stage2_iterations + cfg.stage3_iterations
    else:
        iterations = cfg.stage1_iterations + cfg.stage3_iterations
    return StageConfig("one", tuple(lr.keys()), lr, iterations, "mixed")


def apply_freeze_mask(net, trainable, lr, momentum=0.9, weight_decay=5e-4):
    """
    only parameters of the named groups require gradients. returns an SGD optimizer with
    one parameter group per named group (aliases form a single group)
    """
    trainable = list(trainable)
    if len(trainable) == 0:
        raise ConfigurationError("empty freeze mask: nothing to train")
    for name in trainable:
        net.group_modules(name)  # raises ConfigurationError on unknown names
    if isinstance(lr, dict):
        missing = [name for name in trainable if name not in lr]
        if len(missing) > 0:
            raise ConfigurationError(f"no learning rate for groups {missing}")

    for p in net.parameters():
        p.requires_grad_(False)

    param_groups = list()
    for name in trainable:
        params = [p for m in net.group_modules(name) for p in m.parameters()]
        if len(params) == 0:
            continue
        for p in params:
            p.requires_grad_(True)
        param_groups.append(dict(params=params, lr=lr[name] if isinstance(lr, dict) else lr, name=name))

    if len(param_groups) == 0:
        raise ConfigurationError(f"groups {trainable} hold no parameters in this network")
    return torch.optim.SGD(param_groups, lr=param_groups[0]["lr"], momentum=momentum, weight_decay=weight_decay)


def set_stage_mode(net, trainable):
    """frozen modules in eval mode (fixed normalization statistics), trainable ones in train mode"""
    net.eval()
    for name in trainable:
        for module in net.group_modules(name):
            module.train()


def release_freeze(net):
    for p in net.parameters():
        p.requires_grad_(True)


def group_checksums(net):
    """sha256 of parameters and buffers per parameter group"""
    checksums = dict()
    for name in PARAMETER_GROUPS:
        digest = hashlib.sha256()
        for module in net.group_modules(name):
            for key, tensor in sorted(module.state_dict().items()):
                digest.update(key.encode("utf-8"))
                digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        checksums[name] = digest.hexdigest()
    return checksums


class StageTrainer():

    def __init__(self,
                 net,
                 stage_cfg,
                 batches,
                 store=None,
                 momentum=0.9,
                 weight_decay=5e-4,
                 logger=None,
                 log_every=10,
                 verbose=True):

        self.net = net
        self.stage_cfg = stage_cfg
        self.batches = batches
        self.store = store
        self.log_every = log_every
        self.verbose = verbose
        self.logger = logger if logger is not None else Logger(columns=["loss", "accuracy"], stages=[stage_cfg.stage],
                                                               rootpath=store)
        self.optimizer = apply_freeze_mask(net, stage_cfg.trainable, stage_cfg.lr, momentum, weight_decay)
        self.iteration = 0
        self.last_finite_state = copy.deepcopy(net.state_dict())
        self.losses = list()

    def get_model_name(self):
        return os.path.join(self.store, CHECKPOINT_NAMES[self.stage_cfg.stage])

    def get_log_name(self):
        return os.path.join(self.store, "log.csv")

    def snapshot(self, filename, **kwargs):
        self.net.save(filename, stage=self.stage_cfg.stage, iteration=self.iteration, **kwargs)

    def train_step(self, batch, modality=None):
        self.optimizer.zero_grad(set_to_none=True)
        if modality is not None:
            with self.net.route_branch(modality):
                logits = self.net(batch.patches)
        elif self.stage_cfg.bypass_marmot:
            with self.net.bypass_marmot():
                logits = self.net(batch.patches)
        else:
            logits = self.net(batch.patches)

        loss = F.cross_entropy(logits, batch.labels)
        if not torch.isfinite(loss):
            return float(loss.item()), float("nan")
        loss.backward()
        self.optimizer.step()
        accuracy = (logits.argmax(-1) == batch.labels).float().mean().item()
        return loss.item(), accuracy

    def diverged(self, loss):
        self.net.load_state_dict(self.last_finite_state)
        path = None
        if self.store is not None:
            path = os.path.join(self.store, "diverged_{}.ckpt".format(self.stage_cfg.stage))
            self.snapshot(path, diverged=True)
        raise NumericError(f"stage {self.stage_cfg.stage} diverged at iteration {self.iteration} (loss {loss}). "
                           f"last finite state restored" + (f" and written to {path}" if path else ""))

    def fit(self):
        """batches yields TrainBatch objects or (TrainBatch, Modality) pairs for routed training"""
        printer = Printer(total=self.stage_cfg.iterations, disable=not self.verbose)
        set_stage_mode(self.net, self.stage_cfg.trainable)
        self.logger.set_stage(self.stage_cfg.stage)

        try:
            for item in self.batches:
                batch, modality = item if isinstance(item, tuple) else (item, None)
                self.iteration += 1
                loss, accuracy = self.train_step(batch, modality)
                if not np.isfinite(loss) or not all(torch.isfinite(p).all() for p in self.net.parameters()):
                    self.diverged(loss)
                self.last_finite_state = copy.deepcopy(self.net.state_dict())
                self.losses.append(loss)

                if self.iteration % self.log_every == 0 or self.iteration == 1:
                    stats = dict(loss=loss, accuracy=accuracy)
                    self.logger.log(stats, self.iteration)
                    if self.verbose:
                        printer.print(stats, self.stage_cfg.stage, iteration=self.iteration)
        finally:
            printer.close()
            release_freeze(self.net)
            self.net.eval()
        return self.net


def _dataset(rgb, nir, data_filter, iterations, cfg, seed):
    return FramePatchDataset(rgb, nir, data_filter=data_filter, iterations=iterations, n_frames=cfg.n_frames,
                             n_pos=cfg.n_pos, n_neg=cfg.n_neg, seed=seed)


def _trainer(net, stage_cfg, batches, cfg, store, logger, verbose):
    return StageTrainer(net, stage_cfg, batches, store=store, momentum=cfg.momentum,
                        weight_decay=cfg.weight_decay, logger=logger, log_every=cfg.log_every, verbose=verbose)


def alternate(rgb_batches, nir_batches):
    for rgb_batch, nir_batch in zip(rgb_batches, nir_batches):
        yield rgb_batch, Modality.RGB
        yield nir_batch, Modality.NIR


def stage1_trainer(net, dataset, cfg, store=None, logger=None, verbose=True):
    stage_cfg = stage_configs(cfg, net.use_marmot)["I"]
    rgb, nir = split_by_modality(dataset)
    batches = batch_loader(_dataset(rgb, nir, "all", stage_cfg.iterations, cfg, seed=[cfg.seed, 1]), cfg.workers)
    return _trainer(net, stage_cfg, batches, cfg, store, logger, verbose)


def stage2_trainer(net, rgb_samples, nir_samples, cfg, store=None, logger=None, verbose=True):
    if not net.use_marmot:
        raise ConfigurationError("stage II needs a network with the modality-aware block")
    if len(rgb_samples) == 0:
        raise InsufficientDataError("stage II: no RGB frames to train branch_rgb")
    if len(nir_samples) == 0:
        raise InsufficientDataError("stage II: no NIR frames to train branch_nir")
    stage_cfg = stage_configs(cfg, True)["II"]
    half = max((stage_cfg.iterations + 1) // 2, 1)
    rgb = batch_loader(_dataset(rgb_samples, [], "rgb_only", half, cfg, seed=[cfg.seed, 2, 0]), cfg.workers)
    nir = batch_loader(_dataset([], nir_samples, "nir_only", half, cfg, seed=[cfg.seed, 2, 1]), cfg.workers)
    return _trainer(net, stage_cfg, alternate(rgb, nir), cfg, store, logger, verbose)


def _mixed_trainer(net, stage_cfg, dataset, cfg, seed, store, logger, verbose):
    rgb, nir = split_by_modality(dataset)
    data_filter = "mixed" if len(rgb) > 0 and len(nir) > 0 else "all"
    batches = batch_loader(_dataset(rgb, nir, data_filter, stage_cfg.iterations, cfg, seed=seed), cfg.workers)
    return _trainer(net, stage_cfg, batches, cfg, store, logger, verbose)


def stage3_trainer(net, dataset, cfg, store=None, logger=None, verbose=True):
    stage_cfg = stage_configs(cfg, net.use_marmot)["III"]
    return _mixed_trainer(net, stage_cfg, dataset, cfg, [cfg.seed, 3], store, logger, verbose)


def one_stage_trainer(net, dataset, cfg, store=None, logger=None, verbose=True):
    stage_cfg = one_stage_config(cfg, net.use_marmot)
    return _mixed_trainer(net, stage_cfg, dataset, cfg, [cfg.seed, 4], store, logger, verbose)


def run_stage1(net, dataset, cfg, **kwargs):
    """fine tunes backbone and head at a tenth of the base learning rate, block bypassed"""
    return stage1_trainer(net, dataset, cfg, **kwargs).fit()


def run_stage2(net, rgb_samples, nir_samples, cfg, **kwargs):
    """each branch learns from its own modality only, routed per batch; head_final follows"""
    return stage2_trainer(net, rgb_samples, nir_samples, cfg, **kwargs).fit()


def run_stage3(net, dataset, cfg, **kwargs):
    """ensemble plus head on mixed-modality batches, no modality label reaches the network"""
    return stage3_trainer(net, dataset, cfg, **kwargs).fit()


def run_one_stage(net, dataset, cfg, **kwargs):
    return one_stage_trainer(net, dataset, cfg, **kwargs).fit()


def run_training(net, train_set, cfg, stages="three", store="/tmp", verbose=True):
    """
    runs the stages in order and writes one checkpoint per stage, log.csv and manifest.json.
    a network without the block skips stage II and trains only the head in stage III
    """
    if stages not in ["three", "one"]:
        raise ConfigurationError(f"stages must be 'three' or 'one', got {stages}")
    if len(train_set) == 0:
        raise InsufficientDataError("empty training set")
    os.makedirs(store, exist_ok=True)
    torch.manual_seed(cfg.seed)

    logger = Logger(columns=["loss", "accuracy"], stages=["I"], rootpath=store, verbose=verbose)
    manifest = dict(config=cfg.to_dict(), stages=stages, use_marmot=net.use_marmot, spec=net.spec.to_dict(),
                    sequences=[s.id for s in train_set], results=list())
    kwargs = dict(store=store, logger=logger, verbose=verbose)

    if stages == "three":
        runs = [("I", lambda: stage1_trainer(net, train_set, cfg, **kwargs))]
        if net.use_marmot:
            rgb, nir = split_by_modality(train_set)
            runs.append(("II", lambda: stage2_trainer(net, rgb, nir, cfg, **kwargs)))
        runs.append(("III", lambda: stage3_trainer(net, train_set, cfg, **kwargs)))
    else:
        runs = [("one", lambda: one_stage_trainer(net, train_set, cfg, **kwargs))]

    try:
        for stage, build in runs:
            trainer = build()
            trainer.fit()
            net.save(trainer.get_model_name(), stage=stage)
            manifest["results"].append(dict(stage=stage, checkpoint=CHECKPOINT_NAMES[stage],
                                            config=trainer.stage_cfg.to_dict(),
                                            final_loss=trainer.losses[-1] if len(trainer.losses) > 0 else None,
                                            checksums=group_checksums(net)))
    finally:
        logger.save()
        manifest["summary"] = logger.stage_summary().reset_index().to_dict("records")
        with open(os.path.join(store, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(manifest, f, sort_keys=True, indent=2, default=str)

    return manifest
