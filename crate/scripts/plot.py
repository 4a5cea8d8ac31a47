#!/usr/bin/env python3
"""Plot the per-scheme .dat files written by `star-isac sweep`.

usage: plot.py SWEEP_DIR [--out FILE]
"""
import argparse
import glob
import os
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

LABELS = {
    "p_max_dbm": "P_max (dBm)",
    "gamma_db": "SINR target (dB)",
    "n_elements": "surface elements N",
    "eta": "path loss at 1 m",
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("sweep_dir")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    files = sorted(glob.glob(os.path.join(args.sweep_dir, "plot_*.dat")))
    if not files:
        raise SystemExit(f"no plot_*.dat in {args.sweep_dir}")
    pat = re.compile(r"plot_(p_max_dbm|gamma_db|n_elements|eta)_(.+)\.dat$")
    params = set()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for f in files:
        m = pat.search(os.path.basename(f))
        if not m:
            continue
        param, scheme = m.groups()
        params.add(param)
        data = np.atleast_2d(np.loadtxt(f, comments="#"))
        ax.plot(data[:, 0], data[:, 1], marker="o", label=scheme)
    param = params.pop() if len(params) == 1 else "value"
    if param == "eta":
        ax.set_xscale("log")
    ax.set_xlabel(LABELS.get(param, param))
    ax.set_ylabel("mean min beam-pattern gain (mW)")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = args.out or os.path.join(args.sweep_dir, f"{param}.png")
    fig.savefig(out, dpi=150)
    print(out)


if __name__ == "__main__":
    main()
