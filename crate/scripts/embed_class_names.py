#!/usr/bin/env python3
"""Embed class names with a sentence-transformers model for `encoder = "precomputed"`.

Usage:
    embed_class_names.py --template "a photo of a {}" --out embeddings.json NAME [NAME ...]
    embed_class_names.py --manifest test/manifest.tsv --manifest pool/manifest.tsv --out embeddings.json

The keys of the output table are the prompted texts, so pass the same
template as `name_template` in the config.
"""

import argparse
import csv
import json

from sentence_transformers import SentenceTransformer


def manifest_names(path):
    with open(path, newline="") as f:
        rows = csv.reader(f, delimiter="\t")
        return [row[0] for row in rows if len(row) >= 2 and not row[0].startswith("#")]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*")
    ap.add_argument("--manifest", action="append", default=[])
    ap.add_argument("--template", default="{}")
    ap.add_argument("--model", default="sentence-transformers/all-MiniLM-L6-v2")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    names = list(args.names)
    for m in args.manifest:
        names.extend(manifest_names(m))
    texts = sorted({args.template.replace("{}", n) for n in names})
    if not texts:
        ap.error("no class names given")

    model = SentenceTransformer(args.model)
    vectors = model.encode(texts, normalize_embeddings=True)
    table = {t: [float(x) for x in v] for t, v in zip(texts, vectors)}
    with open(args.out, "w") as f:
        json.dump({"model": args.model, "embeddings": table}, f)
    print(f"wrote {len(table)} embeddings of dim {vectors.shape[1]} to {args.out}")


if __name__ == "__main__":
    main()
