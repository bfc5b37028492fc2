#!/usr/bin/env python3
"""Export the benchmark datasets bundled with scikit-learn to CSV.

Writes data/wine.csv, data/iris.csv and data/digits.csv. The files are
committed to the repository so the benchmark suite runs offline; this
script only documents how they were produced.

The ionosphere benchmark (UCI "Ionosphere", 351 rows, 34 attributes,
labels g/b) is not bundled with scikit-learn. To enable it, place a CSV
with a header row, 34 numeric columns and the label in the last column
at data/ionosphere.csv.
"""

import csv
import os

from sklearn import datasets


def fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v == int(v) else repr(v)


def export(path, data, feature_names, labels, label_name):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(feature_names) + [label_name])
        for row, lab in zip(data, labels):
            w.writerow([fmt(v) for v in row] + [lab])
    print(f"wrote {path} ({len(labels)} rows)")


def main():
    os.makedirs("data", exist_ok=True)

    wine = datasets.load_wine()
    names = [n.replace("/", "_") for n in wine.feature_names]
    export("data/wine.csv", wine.data, names, [str(t) for t in wine.target], "class")

    iris = datasets.load_iris()
    names = [n.replace(" (cm)", "").replace(" ", "_") for n in iris.feature_names]
    species = [iris.target_names[t] for t in iris.target]
    export("data/iris.csv", iris.data, names, species, "species")

    digits = datasets.load_digits()
    names = [f"p{i:02d}" for i in range(64)]
    export("data/digits.csv", digits.data, names, [str(t) for t in digits.target], "digit")


if __name__ == "__main__":
    main()
