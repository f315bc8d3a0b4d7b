import os
import json

import numpy as np
import pandas as pd
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import seaborn as sns

from datasets.sequence import ATTRIBUTE_ORDER
from utils.trackmetric import EvalReport, SCORE_NAMES

sns.set_style("whitegrid")

PNG_METADATA = {"Software": None}
CURVES = [
    ("precision", "precision_curve", "distance_grid", "location error threshold (pixels)", "precision"),
    ("norm_precision", "norm_precision_curve", "norm_grid", "normalized location error threshold",
     "normalized precision"),
    ("success", "success_curve", "overlap_grid", "overlap threshold", "success rate"),
]


def legend_label(name, report, curve):
    if curve == "precision":
        return "{} [{:.3f}]".format(name, report.pr)
    if curve == "norm_precision":
        return "{} [{:.3f}]".format(name, report.npr)
    return "{} [{:.3f}/{:.3f}]".format(name, report.sr1, report.sr2)


def plot_curves(reports, out_dir):
    """one plot per curve type with all trackers, ordered by their representative score"""
    os.makedirs(out_dir, exist_ok=True)
    paths = list()
    for curve, attribute, grid_name, xlabel, ylabel in CURVES:
        key = dict(precision="pr", norm_precision="npr", success="sr1")[curve]
        ordered = sorted(reports.items(), key=lambda item: (-getattr(item[1], key), item[0]))

        fig, ax = plt.subplots(figsize=(6, 5))
        palette = sns.color_palette("colorblind", n_colors=max(len(ordered), 1))
        for color, (name, report) in zip(palette, ordered):
            grid = np.array(getattr(report.config, grid_name))
            ax.plot(grid, getattr(report, attribute), color=color, linewidth=2,
                    label=legend_label(name, report, curve))
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right" if curve != "success" else "lower left", fontsize=8)
        sns.despine(offset=6)
        fig.tight_layout()

        path = os.path.join(out_dir, curve + ".png")
        fig.savefig(path, dpi=100, metadata=PNG_METADATA)
        plt.close(fig)
        paths.append(path)
    return paths


def attribute_table(report):
    """rows pr/npr/sr1/sr2, one column per attribute present, taxonomy order"""
    columns = [tag.value for tag in ATTRIBUTE_ORDER if tag.value in report.per_attribute]
    table = pd.DataFrame({c: [report.per_attribute[c][s] for s in SCORE_NAMES] for c in columns},
                         index=SCORE_NAMES)
    table["overall"] = [getattr(report, s) for s in SCORE_NAMES]
    return table


def switch_table(report):
    return pd.DataFrame(report.per_switch_bin).T.reindex(columns=SCORE_NAMES + ["frames", "sequences"])


def save_report(report, path):
    dirname = os.path.dirname(path)
    if dirname != "":
        os.makedirs(dirname, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
    return path


def load_report(path):
    with open(path, "r", encoding="utf-8") as f:
        return EvalReport.from_dict(json.load(f))


def report(report, out_dir, name="tracker"):
    """writes <name>.json, the three curve plots, attributes.csv and switches.csv"""
    os.makedirs(out_dir, exist_ok=True)
    paths = [save_report(report, os.path.join(out_dir, name + ".json"))]
    paths += plot_curves({name: report}, out_dir)

    attributes = os.path.join(out_dir, "attributes.csv")
    attribute_table(report).to_csv(attributes, float_format="%.4f")
    switches = os.path.join(out_dir, "switches.csv")
    switch_table(report).to_csv(switches, float_format="%.4f")
    print("wrote report {} to {}".format(name, out_dir))
    return paths + [attributes, switches]


def compare_reports(reports):
    """one row per tracker sorted by SR-I, overall scores, per-attribute SR-I and speed"""
    rows = list()
    for name, r in reports.items():
        row = dict(tracker=name, pr=r.pr, npr=r.npr, sr1=r.sr1, sr2=r.sr2)
        for tag in ATTRIBUTE_ORDER:
            if tag.value in r.per_attribute:
                row[tag.value] = r.per_attribute[tag.value]["sr1"]
        row["fps"] = r.fps if r.fps is not None else np.nan
        rows.append(row)

    table = pd.DataFrame(rows).set_index("tracker")
    attributes = [t.value for t in ATTRIBUTE_ORDER if t.value in table.columns]
    table = table[SCORE_NAMES + attributes + ["fps"]]
    return table.sort_values(by=["sr1", "sr2"], ascending=False, kind="mergesort")


def write_latex_table(table, outfile):
    table = table.copy()
    scores = [c for c in table.columns if c != "fps"]
    table[scores] = table[scores] * 100
    table = table.rename(columns=dict(pr="PR", npr="NPR", sr1="SR-I", sr2="SR-II", fps="FPS"))

    tex = table.to_latex(float_format=lambda x: '%10.1f' % x, escape=False, na_rep='',
                         column_format="l" + "c" * len(table.columns))

    print("writing latex tabular to " + outfile)
    with open(outfile, "w", encoding="utf-8") as f:
        print(tex, file=f)
    return outfile
