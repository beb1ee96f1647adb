#!/usr/bin/env python3
"""Regenerates the files under data/.

- iris.csv: the classic 150-flower table with species names.
- digits-*.idx: a 1000/1000 train/test split of 28x28 handwritten-digit
  images in IDX format, produced from scikit-learn's bundled 8x8 digits by
  nearest-neighbour upsampling. The test split re-uses no source image from
  the train split; the last 203 test images are one-pixel shifts of unseen
  source images to reach the target count.

The output is deterministic: no randomness is involved.
"""

import pathlib
import struct

import numpy as np
from sklearn import datasets

OUT = pathlib.Path(__file__).resolve().parent.parent / "data"
SIZE = 28
N_TRAIN = 1000
N_TEST = 1000


def write_iris() -> None:
    iris = datasets.load_iris()
    lines = ["sepal_length,sepal_width,petal_length,petal_width,species"]
    for row, target in zip(iris.data, iris.target):
        feats = ",".join(f"{v:.1f}" for v in row)
        lines.append(f"{feats},{iris.target_names[target]}")
    (OUT / "iris.csv").write_text("\n".join(lines) + "\n")
    print(f"iris.csv: {len(lines) - 1} rows")


def upsample(img8: np.ndarray) -> np.ndarray:
    """8x8 [0,16] -> 28x28 uint8 [0,255], nearest neighbour."""
    idx = np.minimum((np.arange(SIZE) * 8) // SIZE, 7)
    big = img8[np.ix_(idx, idx)]
    return np.clip(np.round(big * (255.0 / 16.0)), 0, 255).astype(np.uint8)


def shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    ys = slice(max(dy, 0), SIZE + min(dy, 0))
    xs = slice(max(dx, 0), SIZE + min(dx, 0))
    ys_src = slice(max(-dy, 0), SIZE + min(-dy, 0))
    xs_src = slice(max(-dx, 0), SIZE + min(-dx, 0))
    out[ys, xs] = img[ys_src, xs_src]
    return out


def write_idx(stem: str, images: np.ndarray, labels: np.ndarray) -> None:
    n = len(images)
    with open(OUT / f"{stem}-images.idx", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, SIZE, SIZE))
        f.write(images.astype(np.uint8).tobytes())
    with open(OUT / f"{stem}-labels.idx", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype(np.uint8).tobytes())
    hist = np.bincount(labels, minlength=10)
    print(f"{stem}: {n} samples, label histogram {hist.tolist()}")


def write_digits() -> None:
    digits = datasets.load_digits()
    imgs = np.stack([upsample(im) for im in digits.images])
    labels = digits.target.astype(np.uint8)

    train_imgs, train_labels = imgs[:N_TRAIN], labels[:N_TRAIN]

    rest_imgs, rest_labels = imgs[N_TRAIN:], labels[N_TRAIN:]
    need = N_TEST - len(rest_imgs)
    shifts = [(0, 1), (1, 0), (0, -1)]
    extra_imgs = [shift(rest_imgs[i], *shifts[i % len(shifts)]) for i in range(need)]
    test_imgs = np.concatenate([rest_imgs, np.stack(extra_imgs)])
    test_labels = np.concatenate([rest_labels, rest_labels[:need]])

    write_idx("digits-train", train_imgs, train_labels)
    write_idx("digits-test", test_imgs, test_labels)


def main() -> None:
    OUT.mkdir(exist_ok=True)
    write_iris()
    write_digits()


if __name__ == "__main__":
    main()
