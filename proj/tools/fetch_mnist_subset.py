#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from package-mirror sources.

The full MNIST archives are not reachable from every build host, but two
widely mirrored packages carry genuine MNIST digits:

  * PyPI ``mlxtend``  - 5000 digits from the MNIST training set (raw bytes).
  * npm ``mnist``     - 10000 MNIST digits (byte/255, rounded to 3
                        decimals; recovered exactly by round(v * 255)).
                        They include every mlxtend digit, so those are
                        removed and the remaining 5000 form the test set.

The script downloads both, then writes

  <out>/train-images-idx3-ubyte   (5000 x 28 x 28, shuffled with a fixed seed)
  <out>/train-labels-idx1-ubyte
  <out>/t10k-images-idx3-ubyte    (5000 x 28 x 28, disjoint from train, shuffled)
  <out>/t10k-labels-idx1-ubyte

Usage: fetch_mnist_subset.py [--out data/mnist] [--mlxtend-wheel W] [--npm-tgz T]
"""

import argparse
import glob
import gzip
import io
import json
import os
import random
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile


def write_idx_images(path, images, rows=28, cols=28):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), rows, cols))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def fetch_wheel(workdir):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                    "mlxtend", "-d", workdir], check=True)
    return glob.glob(os.path.join(workdir, "mlxtend-*.whl"))[0]


def fetch_npm(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True)
    return glob.glob(os.path.join(workdir, "mnist-*.tgz"))[0]


def read_train(wheel):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    images, labels = [], []
    for line in raw.decode().splitlines():
        fields = [int(float(v)) for v in line.split(",")]
        images.append(fields[:784])
        labels.append(fields[784])
    order = list(range(len(labels)))
    random.Random(20230602).shuffle(order)
    return [images[i] for i in order], [labels[i] for i in order]


def read_test(tgz):
    samples = []
    with tarfile.open(tgz) as t:
        for digit in range(10):
            blob = json.load(t.extractfile("package/src/digits/%d.json" % digit))
            flat = blob["data"]
            for i in range(0, len(flat), 784):
                pixels = [int(round(v * 255)) for v in flat[i:i + 784]]
                samples.append((pixels, digit))
    random.Random(20230601).shuffle(samples)
    return [s[0] for s in samples], [s[1] for s in samples]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--mlxtend-wheel")
    ap.add_argument("--npm-tgz")
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    with tempfile.TemporaryDirectory() as work:
        wheel = args.mlxtend_wheel or fetch_wheel(work)
        tgz = args.npm_tgz or fetch_npm(work)
        train_x, train_y = read_train(wheel)
        test_x, test_y = read_test(tgz)

    seen = {bytes(img) for img in train_x}
    kept = [i for i, img in enumerate(test_x) if bytes(img) not in seen]
    test_x = [test_x[i] for i in kept]
    test_y = [test_y[i] for i in kept]

    for img in train_x + test_x:
        assert len(img) == 784 and all(0 <= p <= 255 for p in img)
    write_idx_images(os.path.join(args.out, "train-images-idx3-ubyte"), train_x)
    write_idx_labels(os.path.join(args.out, "train-labels-idx1-ubyte"), train_y)
    write_idx_images(os.path.join(args.out, "t10k-images-idx3-ubyte"), test_x)
    write_idx_labels(os.path.join(args.out, "t10k-labels-idx1-ubyte"), test_y)
    print("wrote %d train / %d test digits to %s" % (len(train_y), len(test_y), args.out))


if __name__ == "__main__":
    main()
