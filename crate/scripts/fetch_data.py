#!/usr/bin/env python3
"""Build the CSV dataset cache used by `mgce train --data <name>`.

Layout: <root>/<name>/train.csv and <root>/<name>/test.csv, header row,
numeric feature columns and a final `label` column. The root is
$MGCE_DATA_DIR, else ./data.

Sources (fetched through pip/npm, so a package mirror is enough):

  mnist    npm `mnist-data@1.2.6`, the original IDX files (60000 / 10000).
           Raw pixel values 0..255 are written; the trainer standardizes.
  letter   pip `keel-ds==0.2.5`, UCI letter recognition as shipped by KEEL
           (20000 rows, shuffled); first 16000 rows train, last 4000 test.
  adult    pip `responsibly==0.1.2`, UCI adult.data / adult.test
           (32561 / 16281). Categorical columns are one-hot encoded over the
           categories seen in either file; '?' is kept as its own category.
  covertype  not available from a package mirror. With network access,
           scikit-learn's fetch_covtype() provides it; pass --covtype-from
           <covtype.data(.gz)> to convert a local copy (first 100000 rows
           train, the next 10000 test).

Usage: python3 scripts/fetch_data.py [mnist letter adult ...] [--packages DIR]
"""

import argparse
import csv
import gzip
import io
import os
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile
from pathlib import Path

PACKAGES = {
    "mnist": ("npm", "mnist-data@1.2.6", "mnist-data-1.2.6.tgz"),
    "letter": ("pip", "keel-ds==0.2.5", "keel_ds-0.2.5-py3-none-any.whl"),
    "adult": ("pip", "responsibly==0.1.2", "responsibly-0.1.2-py3-none-any.whl"),
}

ADULT_COLUMNS = [
    ("age", False), ("workclass", True), ("fnlwgt", False), ("education", True),
    ("education_num", False), ("marital_status", True), ("occupation", True),
    ("relationship", True), ("race", True), ("sex", True), ("capital_gain", False),
    ("capital_loss", False), ("hours_per_week", False), ("native_country", True),
]


def fetch_package(name, cache):
    tool, spec, filename = PACKAGES[name]
    path = cache / filename
    if path.exists():
        return path
    if tool == "pip":
        cmd = [sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(cache), spec]
    else:
        cmd = ["npm", "pack", spec, "--pack-destination", str(cache)]
    print("fetching", spec, file=sys.stderr)
    subprocess.run(cmd, check=True, stdout=subprocess.DEVNULL)
    return path


def write_csv(path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    print("wrote", path, file=sys.stderr)


def read_idx(data):
    magic = struct.unpack(">I", data[:4])[0]
    ndim = magic & 0xFF
    dims = struct.unpack(">" + "I" * ndim, data[4:4 + 4 * ndim])
    body = data[4 + 4 * ndim:]
    if ndim == 1:
        return list(body)
    size = dims[1] * dims[2]
    return [body[i * size:(i + 1) * size] for i in range(dims[0])]


def build_mnist(pkg, root):
    with tarfile.open(pkg) as tar:
        member = lambda n: tar.extractfile(f"package/data/{n}").read()
        for split, prefix in [("train", "train"), ("test", "t10k")]:
            images = read_idx(member(f"{prefix}-images-idx3-ubyte"))
            labels = read_idx(member(f"{prefix}-labels-idx1-ubyte"))
            header = [f"px{i}" for i in range(784)] + ["label"]
            rows = (list(img) + [lab] for img, lab in zip(images, labels))
            write_csv(root / "mnist" / f"{split}.csv", header, rows)


def build_letter(pkg, root):
    text = zipfile.ZipFile(pkg).read("keel_ds/data/balanced/raw/letter.dat").decode()
    rows = [line.split(",") for line in text.splitlines() if line and not line.startswith("@")]
    header = [f"f{i}" for i in range(16)] + ["label"]
    write_csv(root / "letter" / "train.csv", header, rows[:16000])
    write_csv(root / "letter" / "test.csv", header, rows[16000:])


def build_adult(pkg, root):
    z = zipfile.ZipFile(pkg)
    raw = {}
    for split, member in [("train", "adult.data"), ("test", "adult.test")]:
        text = z.read(f"responsibly/dataset/adult/{member}").decode()
        rows = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            cells = [c.strip() for c in line.split(",")]
            cells[-1] = cells[-1].rstrip(".")
            rows.append(cells)
        raw[split] = rows
    categories = {}
    for j, (col, categorical) in enumerate(ADULT_COLUMNS):
        if categorical:
            seen = sorted({r[j] for rows in raw.values() for r in rows})
            categories[j] = seen
    header = []
    for j, (col, categorical) in enumerate(ADULT_COLUMNS):
        header += [f"{col}={c}" for c in categories[j]] if categorical else [col]
    header.append("label")
    for split, rows in raw.items():
        out = []
        for r in rows:
            enc = []
            for j, (_, categorical) in enumerate(ADULT_COLUMNS):
                if categorical:
                    enc += [1 if r[j] == c else 0 for c in categories[j]]
                else:
                    enc.append(r[j])
            out.append(enc + [r[-1]])
        write_csv(root / "adult" / f"{split}.csv", header, out)


def build_covertype(source, root):
    opener = gzip.open if str(source).endswith(".gz") else open
    with opener(source, "rt") as f:
        rows = [line.strip().split(",") for line in f if line.strip()]
    header = [f"f{i}" for i in range(54)] + ["label"]
    write_csv(root / "covertype" / "train.csv", header, rows[:100000])
    write_csv(root / "covertype" / "test.csv", header, rows[100000:110000])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("datasets", nargs="*", default=["mnist", "letter", "adult"])
    ap.add_argument("--packages", type=Path, help="directory holding (or receiving) the source packages")
    ap.add_argument("--covtype-from", type=Path, help="local covtype.data or covtype.data.gz")
    args = ap.parse_args()
    root = Path(os.environ.get("MGCE_DATA_DIR", "data"))
    cache = args.packages or Path(tempfile.mkdtemp(prefix="mgce-packages-"))
    cache.mkdir(parents=True, exist_ok=True)
    builders = {"mnist": build_mnist, "letter": build_letter, "adult": build_adult}
    for name in args.datasets:
        if name == "covertype":
            if not args.covtype_from:
                sys.exit("covertype has no mirror source; pass --covtype-from <file>")
            build_covertype(args.covtype_from, root)
            continue
        if name not in builders:
            sys.exit(f"unknown dataset {name!r}")
        builders[name](fetch_package(name, cache), root)


if __name__ == "__main__":
    main()
