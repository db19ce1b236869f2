"""Build gzipped IDX files from the 5000-sample MNIST CSV shipped in mlxtend.

    pip download --no-deps mlxtend -d /tmp/wheels
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist

Writes 4000 training and 1000 test images (400 / 100 per class), chosen with
a fixed seed, under the standard MNIST file names.
"""

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np

from hemp.datasets import MNIST_FILES, Dataset, write_idx

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_csv(source: Path) -> tuple[np.ndarray, np.ndarray]:
    if source.suffix == ".whl":
        raw = zipfile.ZipFile(source).read(CSV_MEMBER)
    else:
        raw = source.read_bytes()
    table = np.loadtxt(io.StringIO(gzip.decompress(raw).decode()), delimiter=",", dtype=np.int64)
    return table[:, :-1].astype(np.uint8).reshape(-1, 28, 28), table[:, -1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", type=Path, help="mlxtend wheel or mnist_5k.csv.gz")
    ap.add_argument("out", type=Path)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    pixels, labels = read_csv(args.source)
    rng = np.random.default_rng(args.seed)
    test_idx = np.concatenate(
        [rng.permutation(np.flatnonzero(labels == c))[: args.test_per_class] for c in range(10)]
    )
    train_mask = np.ones(labels.size, dtype=bool)
    train_mask[test_idx] = False
    train_idx = rng.permutation(np.flatnonzero(train_mask))
    test_idx = rng.permutation(test_idx)

    args.out.mkdir(parents=True, exist_ok=True)
    for split, idx in (("train", train_idx), ("test", test_idx)):
        ds = Dataset(pixels[idx] / 255.0, labels[idx], 10)
        img_name, lab_name = MNIST_FILES[split]
        write_idx(ds, args.out / f"{img_name}.gz", args.out / f"{lab_name}.gz")
        print(f"{split}: {len(ds)} images -> {args.out}")


if __name__ == "__main__":
    main()
