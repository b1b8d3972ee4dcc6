#!/usr/bin/env python3
"""Render the figure data files in this directory to PNGs.

Usage: python3 plot_figures.py [figures_dir]

Needs matplotlib. Reads null_fits.json, discovered_directions.csv,
cluster_sd.csv, cluster_strips.json and feature_halfspaces.json.
"""
import csv
import json
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def load_json(d, name):
    with open(os.path.join(d, name)) as f:
        return json.load(f)


def load_csv(d, name):
    with open(os.path.join(d, name)) as f:
        return list(csv.DictReader(f))


def null_fits(d):
    fits = load_json(d, "null_fits.json")
    fig, axes = plt.subplots(1, len(fits), figsize=(4 * len(fits), 3), squeeze=False)
    for ax, fit in zip(axes[0], fits):
        hist = fit["histogram"]
        width = hist[1][0] - hist[0][0] if len(hist) > 1 else 1.0
        total = sum(c for _, c in hist)
        ax.bar([b for b, _ in hist], [c / (total * width) for _, c in hist], width=width, align="edge", color="0.8")
        grid = fit["density_grid"]
        ax.plot([g[0] for g in grid], [g[1] for g in grid], label="f")
        ax.plot([g[0] for g in grid], [fit["pi0"] * g[2] for g in grid], label="pi0 f0")
        ax.set_title("class %d" % fit["class"])
        ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(d, "null_fits.png"), dpi=120)


def directions(d):
    rows = [r for r in load_csv(d, "discovered_directions.csv") if r["discovered"] == "1" and r["dx"]]
    classes = sorted({int(r["class"]) for r in load_csv(d, "discovered_directions.csv")})
    fig, axes = plt.subplots(1, len(classes), figsize=(4 * len(classes), 4), squeeze=False)
    for ax, k in zip(axes[0], classes):
        for r in rows:
            if int(r["class"]) != k:
                continue
            shade = 1.0 - float(r["lfdr"] or 0.0)
            ax.plot([0, float(r["dx"])], [0, float(r["dy"])], color=(0.1, 0.2, 0.7, max(shade, 0.1)))
        ax.set_xlim(-1.05, 1.05)
        ax.set_ylim(-1.05, 1.05)
        ax.set_aspect("equal")
        ax.set_title("class %d" % k)
    fig.tight_layout()
    fig.savefig(os.path.join(d, "discovered_directions.png"), dpi=120)


def cluster_map(d):
    rows = load_csv(d, "cluster_sd.csv")
    classes = sorted(int(c[3:]) for c in rows[0] if c.startswith("sd_"))
    fig, axes = plt.subplots(1, len(classes), figsize=(4 * len(classes), 4), squeeze=False)
    for ax, k in zip(axes[0], classes):
        sc = ax.scatter(
            [float(r["centroid_x1"]) for r in rows],
            [float(r["centroid_x2"]) for r in rows],
            c=[float(r["sd_%d" % k]) for r in rows],
            s=[10 + float(r["size"]) for r in rows],
            cmap="viridis",
        )
        fig.colorbar(sc, ax=ax)
        ax.set_title("class %d" % k)
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(os.path.join(d, "cluster_sd.png"), dpi=120)


def strips(d):
    data = load_json(d, "cluster_strips.json")
    fig, axes = plt.subplots(len(data["classes"]), 1, figsize=(10, 2.5 * len(data["classes"])), squeeze=False)
    for ax, cls in zip(axes[:, 0], data["classes"]):
        for pos, cl in enumerate(cls["clusters"]):
            ax.scatter([pos] * len(cl["scores"]), cl["scores"], s=3)
        ax.axhline(0, color="0.5", lw=0.5)
        ax.set_title("class %d, feature %d" % (cls["class"], data["feature"]))
    fig.tight_layout()
    fig.savefig(os.path.join(d, "cluster_strips.png"), dpi=120)


def halfspaces(d):
    path = os.path.join(d, "feature_halfspaces.json")
    if not os.path.exists(path):
        return
    data = load_json(d, "feature_halfspaces.json")
    feats = data["features"]
    cols = 5
    nrows = (len(feats) + cols - 1) // cols
    fig, axes = plt.subplots(nrows, cols, figsize=(2.5 * cols, 2.5 * nrows), squeeze=False)
    extent = [data["x1"][0], data["x1"][-1], data["x2"][0], data["x2"][-1]]
    for ax, f in zip(axes.flat, feats):
        ax.imshow(f["activation"], origin="lower", extent=extent, cmap="magma")
        ax.set_title("feature %d" % f["feature"], fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(os.path.join(d, "feature_halfspaces.png"), dpi=120)


def main():
    d = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))
    for plot in (null_fits, directions, cluster_map, strips, halfspaces):
        plot(d)


if __name__ == "__main__":
    main()
