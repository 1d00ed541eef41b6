#!/usr/bin/env python3
"""Fetch MovieLens-100K and write it as `user<TAB>item<TAB>timestamp<TAB>rating`.

Tries the GroupLens archive first; falls back to the copy bundled in the
pytorch-widedeep wheel (identical to u.data) when only a package index is
reachable.
"""
import io
import os
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

OUT = os.path.join(os.path.dirname(__file__), "..", "data", "ml-100k", "ratings.tsv")
URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL_MEMBER = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"


def from_grouplens():
    with urllib.request.urlopen(URL, timeout=20) as resp:
        z = zipfile.ZipFile(io.BytesIO(resp.read()))
    rows = []
    for line in z.read("ml-100k/u.data").decode().splitlines():
        user, item, rating, ts = line.split("\t")
        rows.append((user, item, ts, rating))
    return rows


def from_wheel():
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp,
             "pytorch-widedeep==1.7.0"],
            check=True,
        )
        wheel = next(f for f in os.listdir(tmp) if f.endswith(".whl"))
        with zipfile.ZipFile(os.path.join(tmp, wheel)) as z:
            df = pd.read_parquet(io.BytesIO(z.read(WHEEL_MEMBER)))
    return [
        (str(r.user_id), str(r.movie_id), str(r.timestamp), str(r.rating))
        for r in df.itertuples(index=False)
    ]


def main():
    try:
        rows = from_grouplens()
    except Exception as exc:  # noqa: BLE001
        print(f"grouplens download failed ({exc}); using pip wheel copy", file=sys.stderr)
        rows = from_wheel()
    os.makedirs(os.path.dirname(OUT), exist_ok=True)
    with open(OUT, "w") as f:
        for r in rows:
            f.write("\t".join(r) + "\n")
    print(f"wrote {len(rows)} interactions to {os.path.normpath(OUT)}")


if __name__ == "__main__":
    main()
