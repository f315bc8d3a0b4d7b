from abc import ABC, abstractmethod
import os

import torch
from sklearn.base import BaseEstimator

from models.marmot import write_checkpoint, load_checkpoint_into


class ClassificationModel(ABC, torch.nn.Module, BaseEstimator):
    """target/background patch classifier with keyed float32 checkpoints"""

    def __init__(self):
        super().__init__()

    @abstractmethod
    def forward(self, x):
        pass  # return logits (N, 2) ordered (background, target)

    @torch.no_grad()
    def predict(self, logits):
        return logits.argmax(-1)

    @torch.no_grad()
    def target_score(self, logits):
        """log-odds of the target class. > 0 iff p(target) > 0.5"""
        return logits[:, 1] - logits[:, 0]

    def checkpoint_meta(self):
        return dict()

    def save(self, path="model.ckpt", **kwargs):
        print("saving model to " + path)
        dirname = os.path.dirname(path)
        if dirname != "":
            os.makedirs(dirname, exist_ok=True)
        meta = self.checkpoint_meta()
        meta.update(kwargs)
        write_checkpoint(path, self.state_dict(), meta=meta)
        return path

    def load(self, path, ignore_prefixes=()):
        print("loading model from " + path)
        return load_checkpoint_into(self, path, ignore_prefixes=ignore_prefixes)
