#!/usr/bin/env python3
"""Plot a training metrics log (metrics_log.csv or an evaluate-emitted
curves.csv) as a two-panel PNG: distribution distances on top, adversarial
losses and self-BLEU below. Figures are a convenience on top of the logged
columns; nothing in the tested pipeline depends on this script.

Usage: python3 scripts/plot_metrics.py RUN_DIR/metrics_log.csv [-o out.png]
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path


def read_log(path: Path) -> list[dict]:
    with path.open(newline="") as handle:
        rows = list(csv.DictReader(handle))
    if not rows:
        raise SystemExit(f"{path}: no data rows")
    return rows


def column(rows: list[dict], name: str) -> list[float]:
    out = []
    for row in rows:
        raw = (row.get(name) or "").strip()
        out.append(float(raw) if raw and raw.lower() != "nan" else math.nan)
    return out


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("log", type=Path, help="metrics_log.csv or curves.csv")
    parser.add_argument("-o", "--out", type=Path, default=None,
                        help="output image (default: <log stem>.png beside the log)")
    args = parser.parse_args(argv)

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is not installed; the log itself is plain CSV and "
              "can be plotted with any tool", file=sys.stderr)
        return 1

    rows = read_log(args.log)
    epochs = column(rows, "epoch")
    out_path = args.out or args.log.with_suffix(".png")

    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    for name in ("mmd_pitch", "mmd_duration", "mmd_rest", "mmd_overall"):
        top.plot(epochs, column(rows, name), label=name, marker=".")
    top.set_ylabel("MMD")
    top.legend(fontsize=8)
    top.grid(alpha=0.3)

    for name in ("d_loss", "g_loss", "self_bleu"):
        bottom.plot(epochs, column(rows, name), label=name, marker=".")
    bottom.set_xlabel("epoch")
    bottom.set_ylabel("loss / self-BLEU")
    bottom.legend(fontsize=8)
    bottom.grid(alpha=0.3)

    boundaries = [e for e, row in zip(epochs, rows) if row.get("phase") == "adversarial"]
    if boundaries:
        for axis in (top, bottom):
            axis.axvline(min(boundaries), color="gray", linestyle="--", linewidth=1)

    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    print(f"wrote {out_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
