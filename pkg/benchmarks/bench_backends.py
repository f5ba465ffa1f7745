"""Time the numba and pure-numpy kernels on the same workload.

Each backend runs in its own interpreter (the backend is fixed at import by
IFRNOW_BACKEND). The workload is the synthetic fog archive: feature build,
training, batch prediction and TreeSHAP on the test rows. Model checksums are
compared to confirm both backends grow identical ensembles.

    python benchmarks/bench_backends.py --hours 30000 --trees 100
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import hashlib, json, sys, time
import numpy as np
from ifrnow import BACKEND
from ifrnow.synthetic import fog_archive
from ifrnow.obs import downsample_hourly, forward_fill
from ifrnow.features import build_matrix, temporal_split
from ifrnow.gbdt import TrainConfig, train, predict_margin
from ifrnow.gbdt.io import to_bytes
from ifrnow.explain import Explainer, background_sample

hours, trees, shap_rows = map(int, sys.argv[1:4])
arc = fog_archive(n_hours=hours)
t = time.perf_counter()
fm = build_matrix(forward_fill(downsample_hourly(arc.reports)), arc.lat, arc.lon, 3)
tr, te = temporal_split(fm)
out = {"backend": BACKEND, "rows": len(tr), "build_s": time.perf_counter() - t}

# first call includes JIT compilation (or cache load); time a warm call too
t = time.perf_counter()
train(tr.X[:500], tr.y[:500], TrainConfig(n_trees=1))
out["warmup_s"] = time.perf_counter() - t

t = time.perf_counter()
model = train(tr.X, tr.y, TrainConfig(n_trees=trees))
out["train_s"] = time.perf_counter() - t

t = time.perf_counter()
for _ in range(5):
    predict_margin(model, te.X)
out["predict_s"] = (time.perf_counter() - t) / 5

ex = Explainer(model, background_sample(tr.X))
t = time.perf_counter()
ex.shap_values(te.X[:shap_rows])
out["shap_s"] = time.perf_counter() - t
out["shap_rows"] = min(shap_rows, len(te))
out["model_sha256"] = hashlib.sha256(to_bytes(model)).hexdigest()
print(json.dumps(out))
"""


def run(backend: str, hours: int, trees: int, shap_rows: int) -> dict:
    env = dict(os.environ, IFRNOW_BACKEND=backend)
    proc = subprocess.run(
        [sys.executable, "-c", WORKER, str(hours), str(trees), str(shap_rows)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hours", type=int, default=12000, help="synthetic archive length")
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--shap-rows", type=int, default=200)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args()

    results = [run(b, args.hours, args.trees, args.shap_rows) for b in ("numba", "numpy")]
    nb, npy = results
    print(f"training rows {nb['rows']}, {args.trees} trees, SHAP on {nb['shap_rows']} rows\n")
    print(f"{'stage':<12}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for key in ("build_s", "warmup_s", "train_s", "predict_s", "shap_s"):
        a, b = nb[key], npy[key]
        print(f"{key[:-2]:<12}{a:>10.3f}{b:>10.3f}{b / a if a > 0 else float('nan'):>8.1f}x")
    same = nb["model_sha256"] == npy["model_sha256"]
    print(f"\nidentical models: {'yes' if same else 'NO'}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"results": results, "identical_models": same}, fh, indent=2)
    if not same:
        sys.exit(1)


if __name__ == "__main__":
    main()
