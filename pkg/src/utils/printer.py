import numpy as np
import tqdm


class Printer():
    """one progress bar per training stage; the latest statistics ride along as postfix"""

    def __init__(self, total=None, prefix="", disable=False):
        self.total = total
        self.prefix = prefix
        self.disable = disable
        self.bar = None
        self.stage = None

    def print(self, stats, stage, iteration=None):
        if stage != self.stage:
            self.close()
            self.bar = tqdm.tqdm(total=self.total, desc="{}stage {}".format(self.prefix, stage), leave=True,
                                 disable=self.disable)
            self.stage = stage

        if iteration is not None and iteration > self.bar.n:
            self.bar.update(iteration - self.bar.n)

        postfix = {k: "{:.4f}".format(v) for k, v in stats.items() if np.size(v) == 1 and not np.isnan(v)}
        self.bar.set_postfix(postfix, refresh=False)

    def close(self):
        if self.bar is not None:
            self.bar.close()
        self.bar = None
        self.stage = None
