#!/usr/bin/env python3
"""Assemble the evaluation datasets under data/.

MNIST: 10,000 digits bundled in the `mnist` npm package, written as IDX files.
Vehicle: Statlog vehicle silhouettes bundled in the `imbalanced-databases`
wheel, written as CSV.
Credit (UCI default of credit card clients) must be supplied by hand as
data/credit.csv with the label column `default`.
"""
import io
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")

VEHICLE_COLUMNS = [
    "COMPACTNESS", "CIRCULARITY", "DISTANCE_CIRCULARITY", "RADIUS_RATIO",
    "PR_AXIS_ASPECT_RATIO", "MAX_LENGTH_ASPECT_RATIO", "SCATTER_RATIO",
    "ELONGATEDNESS", "PR_AXIS_RECTANGULARITY", "MAX_LENGTH_RECTANGULARITY",
    "SCALED_VARIANCE_MAJOR", "SCALED_VARIANCE_MINOR",
    "SCALED_RADIUS_OF_GYRATION", "SKEWNESS_ABOUT_MAJOR",
    "SKEWNESS_ABOUT_MINOR", "KURTOSIS_ABOUT_MAJOR", "KURTOSIS_ABOUT_MINOR",
    "HOLLOWS_RATIO",
]


def mnist(tmp):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz"))
    images, labels = [], []
    for digit in range(10):
        raw = tgz.extractfile(f"package/src/digits/{digit}.json").read()
        flat = json.loads(raw)["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            images.append(bytes(min(255, max(0, round(v * 255))) for v in flat[i:i + 784]))
            labels.append(digit)
    out = os.path.join(ROOT, "mnist")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(os.path.join(out, "labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"mnist: {len(images)} images")


def vehicle(tmp):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps",
                    "imbalanced-databases==0.1.1", "-d", tmp], check=True,
                   stdout=subprocess.DEVNULL)
    whl = [f for f in os.listdir(tmp) if f.startswith("imbalanced_databases")][0]
    z = zipfile.ZipFile(os.path.join(tmp, whl))
    rows = []
    for part in "abcdefghi":
        text = z.read(f"imbalanced_databases/data/vehicle/xa{part}.dat.txt").decode()
        for line in text.splitlines():
            cells = line.split()
            if len(cells) == 19:
                rows.append(cells)
    with open(os.path.join(ROOT, "vehicle.csv"), "w") as f:
        f.write(",".join(VEHICLE_COLUMNS + ["class"]) + "\n")
        for r in rows:
            f.write(",".join(r) + "\n")
    print(f"vehicle: {len(rows)} rows")


if __name__ == "__main__":
    os.makedirs(ROOT, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        mnist(tmp)
        vehicle(tmp)
    if not os.path.exists(os.path.join(ROOT, "credit.csv")):
        print("credit: data/credit.csv not present (supply it manually)")
