#!/usr/bin/env python3
"""Fetch MovieLens-100K and convert it to the ratings.csv / movies.csv layout.

GroupLens hosts the corpus at https://files.grouplens.org/datasets/movielens/.
Where that host is unreachable, the same 100,000 ratings ship inside the
``recbole`` wheel on PyPI; this script pulls that wheel with pip (no install)
and converts its tab-separated atomic files.

    python scripts/fetch_movielens.py --out data/movielens
"""

import argparse
import csv
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-latest-small.zip"
RECBOLE_SPEC = "recbole==1.2.1"
INTER = "recbole/dataset_example/ml-100k/ml-100k.inter"
ITEM = "recbole/dataset_example/ml-100k/ml-100k.item"


def from_grouplens(out: Path) -> bool:
    try:
        with urllib.request.urlopen(GROUPLENS_URL, timeout=20) as resp:
            payload = resp.read()
    except OSError as exc:
        print(f"grouplens unavailable ({exc}); falling back to PyPI", file=sys.stderr)
        return False
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        for name in ("ratings.csv", "movies.csv"):
            (out / name).write_bytes(zf.read(f"ml-latest-small/{name}"))
    return True


def from_recbole(out: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, RECBOLE_SPEC],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            inter = zf.read(INTER).decode("latin-1").splitlines()[1:]
            items = zf.read(ITEM).decode("latin-1").splitlines()[1:]

    with open(out / "ratings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["userId", "movieId", "rating", "timestamp"])
        for line in inter:
            user, movie, rating, ts = line.split("\t")
            w.writerow([user, movie, rating, ts])

    with open(out / "movies.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["movieId", "title", "genres"])
        for line in items:
            parts = line.split("\t")
            movie, title = parts[0], parts[1]
            genres = parts[3].split() if len(parts) > 3 else []
            w.writerow([movie, title, "|".join(genres) or "(no genres listed)"])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/movielens")
    ap.add_argument("--source", choices=["auto", "grouplens", "pypi"], default="auto")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.source != "pypi" and from_grouplens(out):
        pass
    elif args.source == "grouplens":
        return 1
    else:
        from_recbole(out)
    print(f"wrote {out / 'ratings.csv'} and {out / 'movies.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
