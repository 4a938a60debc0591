# %% [markdown]
# # Build the bundled MNIST subset
#
# The `mlxtend` wheel ships 5,000 real MNIST training digits (500 per class) as
# `mlxtend/data/data/mnist_5k.csv.gz`. This script splits them 350/150 per
# class into IDX files under `data/mnist5k/`, using the standard MNIST file
# names so `qdistill.data.load_dataset("mnist", root, split)` reads them.
#
#     pip download mlxtend==0.24.0 --no-deps -d /tmp/mlx
#     python notebooks/prepare_mnist5k.py /tmp/mlx/mlxtend-0.24.0-py3-none-any.whl

# %%
import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from qdistill.data import IDX_FILES, write_idx

wheel = sys.argv[1]
out = Path(__file__).resolve().parents[1] / "data" / "mnist5k"
out.mkdir(parents=True, exist_ok=True)

raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
pixels, labels = table[:, :-1].astype(np.uint8), table[:, -1].astype(np.int64)

# %%
rng = np.random.default_rng(0)
train_rows, test_rows = [], []
for c in range(10):
    rows = rng.permutation(np.flatnonzero(labels == c))
    train_rows.append(rows[:350])
    test_rows.append(rows[350:])

for split, rows in (("train", train_rows), ("test", test_rows)):
    rows = rng.permutation(np.concatenate(rows))
    img_name, lab_name = IDX_FILES[split]
    write_idx(pixels[rows].reshape(-1, 28, 28), labels[rows],
              out / f"{img_name}.gz", out / f"{lab_name}.gz")
    print(split, len(rows), np.bincount(labels[rows]))
