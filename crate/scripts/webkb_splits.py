#!/usr/bin/env python3
"""Convert WebKB split files (*.npz with train_mask/val_mask/test_mask) to
the CSV layout read by `djlab`: one row per node, `train,val,test` flags.

    python3 scripts/webkb_splits.py texas/splits/texas_split_0.6_0.2_*.npz --out texas/splits
"""
import argparse
import re
from pathlib import Path

import numpy as np


def split_index(path):
    m = re.search(r"_(\d+)\.npz$", path.name)
    return int(m.group(1)) if m else None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("npz", nargs="+", type=Path)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    files = sorted(args.npz, key=lambda p: (split_index(p) is None, split_index(p), p.name))
    for i, path in enumerate(files):
        data = np.load(path)
        masks = [np.asarray(data[k]).astype(bool) for k in ("train_mask", "val_mask", "test_mask")]
        if (np.sum(masks, axis=0) > 1).any():
            raise SystemExit(f"{path}: a node belongs to more than one split")
        idx = split_index(path)
        target = args.out / f"split_{idx if idx is not None else i:02d}.csv"
        with open(target, "w") as f:
            for t, v, s in zip(*masks):
                f.write(f"{int(t)},{int(v)},{int(s)}\n")
        print(target)


if __name__ == "__main__":
    main()
