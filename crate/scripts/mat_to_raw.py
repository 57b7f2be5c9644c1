#!/usr/bin/env python3
"""Convert a BlogCatalog or Flickr .mat file into the raw dataset layout.

The input holds a sparse adjacency matrix under ``Network`` and a node
attribute matrix under ``Attributes``. The output directory receives
``edges.tsv``, ``features.csv`` and ``meta.json``; reduce it afterwards with
``redress prep <raw> <prepared> --pca 200``.
"""

import argparse
import json
import pathlib

import numpy as np
import scipy.io
import scipy.sparse as sp


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("mat", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path)
    ap.add_argument("--name", help="dataset name, defaults to the file stem")
    ap.add_argument("--network-key", default="Network")
    ap.add_argument("--attributes-key", default="Attributes")
    args = ap.parse_args()

    data = scipy.io.loadmat(args.mat)
    adj = sp.csr_matrix(data[args.network_key])
    feats = data[args.attributes_key]
    feats = feats.toarray() if sp.issparse(feats) else np.asarray(feats)
    n = adj.shape[0]
    if adj.shape != (n, n) or feats.shape[0] != n:
        raise SystemExit(f"shape mismatch: adjacency {adj.shape}, attributes {feats.shape}")

    # undirected: keep each unordered pair once, drop self-loops
    sym = sp.triu(adj + adj.T, k=1).tocoo()
    edges = sorted(zip(sym.row.tolist(), sym.col.tolist()))

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "edges.tsv", "w") as f:
        f.writelines(f"{u}\t{v}\n" for u, v in edges)
    np.savetxt(args.out / "features.csv", feats.astype(np.float64), delimiter=",", fmt="%.17g")
    meta = {"nodes": n, "edges": len(edges), "features": int(feats.shape[1]), "name": args.name or args.mat.stem.lower()}
    (args.out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"{meta['name']}: {n} nodes, {len(edges)} edges, {feats.shape[1]} features")


if __name__ == "__main__":
    main()
