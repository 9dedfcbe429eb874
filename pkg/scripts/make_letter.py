"""Build libsvm train/test files for the UCI Letter data.

The raw table ships inside the ``keel_ds`` wheel on PyPI. Features (integers
0..15) are scaled to [-1, 1], labels A..Z become class ids 0..25, and a seeded
permutation gives a 10500-sample train split and a 5000-sample test split.

    pip download keel-ds --no-deps -d /tmp/keel
    python scripts/make_letter.py /tmp/keel/keel_ds-*.whl tests/data
"""

import argparse
import gzip
import zipfile
from pathlib import Path

import numpy as np

N_TRAIN, N_TEST = 10500, 5000


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("wheel")
    ap.add_argument("outdir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with zipfile.ZipFile(args.wheel) as z:
        rows = z.read("keel_ds/data/balanced/raw/letter.dat").decode().split()
    table = [r.split(",") for r in rows if r and not r.startswith("@")]
    X = np.array([[float(v) for v in r[:-1]] for r in table])
    y = np.array([ord(r[-1]) - ord("A") for r in table])
    lo, hi = X.min(axis=0), X.max(axis=0)
    X = 2.0 * (X - lo) / (hi - lo) - 1.0

    perm = np.random.default_rng(args.seed).permutation(len(y))
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("letter.train.svm.gz", perm[:N_TRAIN]), ("letter.test.svm.gz", perm[-N_TEST:])):
        with gzip.GzipFile(out / name, "wb", mtime=0) as fh:
            for i in idx:
                feats = " ".join(f"{j + 1}:{v:.6g}" for j, v in enumerate(X[i]) if v != 0.0)
                fh.write(f"{y[i]} {feats}\n".encode())


if __name__ == "__main__":
    main()
