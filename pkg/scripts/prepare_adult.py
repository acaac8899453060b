"""Convert the UCI Adult files into a numeric CSV for the llpbp CLI.

Reads ``adult.data`` and ``adult.test`` (either from a directory or from
inside a wheel/zip that bundles them), concatenates them, and writes the 14
covariates plus a 0/1 label column ``y`` (1 for income >50K). Categorical
columns get integer codes in sorted category order; a missing value ("?")
is its own category.

    python3 scripts/prepare_adult.py --source /path/to/dir_or_wheel --out data/adult.csv
"""

import argparse
import csv
import io
import zipfile
from pathlib import Path

COLUMNS = [
    ("age", False), ("workclass", True), ("fnlwgt", False), ("education", True),
    ("education_num", False), ("marital_status", True), ("occupation", True),
    ("relationship", True), ("race", True), ("sex", True), ("capital_gain", False),
    ("capital_loss", False), ("hours_per_week", False), ("native_country", True),
]


def read_raw(source: Path):
    texts = []
    if source.is_dir():
        for name in ("adult.data", "adult.test"):
            texts.append((source / name).read_text())
    else:
        with zipfile.ZipFile(source) as z:
            names = z.namelist()
            for name in ("adult.data", "adult.test"):
                hit = [n for n in names if n.endswith("/" + name) or n == name]
                if not hit:
                    raise SystemExit(f"{source}: no {name} inside")
                texts.append(z.read(hit[0]).decode())
    rows = []
    for text in texts:
        for rec in csv.reader(io.StringIO(text), skipinitialspace=True):
            if len(rec) != 15:
                continue  # blank lines and the "|1x3 Cross validator" header
            rows.append(rec)
    return rows


def encode(rows):
    codes = {}
    for j, (_, cat) in enumerate(COLUMNS):
        if cat:
            codes[j] = {v: i for i, v in enumerate(sorted({r[j] for r in rows}))}
    out = []
    for r in rows:
        feats = [codes[j][r[j]] if cat else float(r[j]) for j, (_, cat) in enumerate(COLUMNS)]
        label = 1 if r[14].rstrip(".") == ">50K" else 0
        out.append(feats + [label])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", required=True, type=Path, help="directory or zip/wheel holding adult.data and adult.test")
    ap.add_argument("--out", required=True, type=Path)
    args = ap.parse_args(argv)
    rows = encode(read_raw(args.source))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([c for c, _ in COLUMNS] + ["y"])
        w.writerows(rows)
    pos = sum(r[-1] for r in rows)
    print(f"wrote {len(rows)} rows ({pos} positive) to {args.out}")


if __name__ == "__main__":
    main()
