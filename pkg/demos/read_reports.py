"""Summarize a finished experiment directory.

Run the pipeline first, then point this at its output:

    neurofuzz run-all --out runs/desk
    python demos/read_reports.py runs/desk

Prints validation loss per (cell, depth), error rate per source and the
coverage comparison against the best dataset set.
"""

import argparse
import csv
from pathlib import Path


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", type=Path)
    rep = ap.parse_args().root / "reports"

    print("final validation loss")
    for r in rows(rep / "val_loss_by_depth.csv"):
        print(f"  {r['cell']:>4} l={r['depth']}  {float(r['mean_val_loss']):.4f} "
              f"+- {float(r['std_val_loss']):.4f}  ({r['n_runs']} runs)")

    print("\nerrors per tag")
    for r in rows(rep / "error_rate_by_depth.csv"):
        label = r["kind"] + (f" l={r['depth']} {r['cell']}" if r["depth"] else "") + \
            (f" p={r['probability']}" if r["probability"] else "")
        print(f"  {label:<26} {float(r['mean_error_rate']):.3f}")

    print("\nblocks beyond the blank template (largest case size)")
    unique = rows(rep / "unique_blocks.csv")
    biggest = max(int(r["tags_per_case"]) for r in unique)
    diff = {r["set"]: r for r in rows(rep / "diff_to_best.csv")}
    for r in unique:
        if int(r["tags_per_case"]) != biggest:
            continue
        novel = diff.get(r["set"], {}).get("novel_blocks", "")
        print(f"  {r['set']:<28} {r['unique_blocks']:>4} blocks  {r['error_blocks']:>3} error  "
              f"{novel:>4} not in best dataset set")


if __name__ == "__main__":
    main()
