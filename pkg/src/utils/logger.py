import os

import numpy as np
import pandas as pd


class Logger():
    """
    one row per logged training iteration, keyed by stage. statistics that are not
    scalars are kept aside and written as .npy files next to log.csv
    """

    def __init__(self, columns, stages, rootpath=None, verbose=True):

        self.columns = list(columns)
        self.stage = stages[0]
        self.rows = list()
        self.stored_arrays = dict()
        self.rootpath = rootpath
        self.verbose = verbose

    def resume(self, data):
        self.rows = data.to_dict("records")
        self.stage = data["stage"].iloc[-1] if len(data) > 0 else self.stage

    def set_stage(self, stage):
        self.stage = stage

    def log(self, stats, iteration):

        row = dict(stage=self.stage, iteration=iteration)
        for k, v in stats.items():
            if np.size(v) == 1:
                row[k] = float(v)
            else:
                self.stored_arrays.setdefault((self.stage, k), list()).append((iteration, np.asarray(v)))

        self.rows.append(row)

    def get_data(self):
        base = ["stage", "iteration"] + self.columns
        data = pd.DataFrame(self.rows)
        extra = [c for c in data.columns if c not in base]
        return data.reindex(columns=base + extra)

    def stage_summary(self):
        """last logged iteration, final loss and mean accuracy of every stage, in training order"""
        data = self.get_data()
        if len(data) == 0:
            return pd.DataFrame(columns=["iterations", "final_loss", "mean_accuracy"])
        return data.groupby("stage", sort=False).agg(iterations=("iteration", "max"),
                                                     final_loss=("loss", "last"),
                                                     mean_accuracy=("accuracy", "mean"))

    def save(self, csvfile="log.csv"):

        if len(self.stored_arrays) > 0:
            path = os.path.join(self.rootpath, "npy")
            os.makedirs(path, exist_ok=True)
            for (stage, name), values in self.stored_arrays.items():
                for iteration, array in values:
                    filepath = os.path.join(path, "{}_{}_{}.npy".format(stage, name, iteration))
                    np.save(filepath, array)
                    if self.verbose: print("saving " + filepath)

        self.get_data().to_csv(os.path.join(self.rootpath, csvfile), index=False)
