"""Materialize ML-100k interactions and item side-features under data/ml-100k/.

The GroupLens site is not always reachable, so the raw ratings are taken from
the copy bundled inside the ``pytorch-widedeep`` wheel (identical to ``u.data``).

Outputs:
    u.data          user \t item \t rating \t timestamp, original row order
    semantic.txt    header ``n_items d_sem`` then one row per dense item id
    semantic.txt.items   item token for each row of semantic.txt

The semantic rows are a stand-in for LLM text embeddings: genre flags, release
decade and signed-hashed title tokens, L2-normalized. Dense item ids follow the
numeric order of the raw movie ids, which is what ``load_dataset`` produces.
"""
import argparse
import hashlib
import io
import re
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import pandas as pd

WHEEL_PREFIX = "pytorch_widedeep/datasets/data/"
GENRES = ["unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
          "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
          "Romance", "Sci-Fi", "Thriller", "War", "Western"]
DECADES = list(range(1920, 2000, 10))  # anything older folds into the first bucket
TITLE_DIMS = 64 - len(GENRES) - len(DECADES)


def _fetch_wheel(dest):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                    "pytorch-widedeep==1.7.0", "-d", str(dest)], check=True)
    return next(Path(dest).glob("pytorch_widedeep-*.whl"))


def _title_features(title):
    vec = np.zeros(TITLE_DIMS)
    title = re.sub(r"\(\d{4}\)\s*$", "", title).lower()
    for tok in re.findall(r"[a-z0-9']+", title):
        h = int(hashlib.md5(tok.encode()).hexdigest(), 16)
        vec[h % TITLE_DIMS] += 1.0 if (h >> 64) & 1 else -1.0
    return vec


def item_features(items):
    genre = items[GENRES].to_numpy(dtype=float)
    decade = np.zeros((len(items), len(DECADES)))
    for row, date in enumerate(items["release_date"]):
        if isinstance(date, str) and date:
            year = int(date[-4:])
            decade[row, max(0, min(len(DECADES) - 1, (year - DECADES[0]) // 10))] = 1.0
    title = np.vstack([_title_features(t or "") for t in items["movie_title"].fillna("")])
    feats = np.hstack([genre, 0.5 * decade, 0.5 * title])
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return np.divide(feats, norms, out=np.zeros_like(feats), where=norms > 0)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--wheel", type=Path, default=None)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "data" / "ml-100k")
    args = parser.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or _fetch_wheel(tmp)
        with zipfile.ZipFile(wheel) as zf:
            ratings = pd.read_parquet(io.BytesIO(zf.read(WHEEL_PREFIX + "MovieLens100k_data.parquet.brotli")))
            items = pd.read_parquet(io.BytesIO(zf.read(WHEEL_PREFIX + "MovieLens100k_items.parquet.brotli")))

    args.out.mkdir(parents=True, exist_ok=True)
    ratings[["user_id", "movie_id", "rating", "timestamp"]].to_csv(
        args.out / "u.data", sep="\t", header=False, index=False)

    items = items.sort_values("movie_id").reset_index(drop=True)
    feats = item_features(items)
    with open(args.out / "semantic.txt", "w") as fh:
        fh.write(f"{feats.shape[0]} {feats.shape[1]}\n")
        for row in feats:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    (args.out / "semantic.txt.items").write_text("\n".join(str(m) for m in items["movie_id"]) + "\n")
    print(f"wrote {len(ratings)} interactions and {feats.shape} semantic matrix to {args.out}")


if __name__ == "__main__":
    main()
