"""Generate a synthetic city and run every pipeline stage on it.

    python3 scripts/run_synthetic_city.py --out /tmp/city --n-points 560 --bootstrap 50
"""
import argparse
import json
from pathlib import Path

import pandas as pd

from streetsafety.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--n-points", type=int, default=560)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bootstrap", type=int, default=50)
    args = ap.parse_args()

    out = Path(args.out)
    cli(["simulate", "--out", str(out), "--n-points", str(args.n_points), "--seed", str(args.seed),
         "--bootstrap", str(args.bootstrap)])
    status = cli(["all", "--config", str(out / "config.json")])
    results = out / "results"
    manifest = json.loads((results / "manifest.json").read_text())
    for stage, info in manifest["stages"].items():
        print(f"{stage:<8} {info['status']:<8} {info.get('wall_time_s', 0):7.1f}s")
    metrics = json.loads((results / "metrics.json").read_text())
    print(f"test accuracy {metrics['test']['accuracy']:.3f}, macro F1 {metrics['test']['macro_f1']:.3f}")
    print(pd.read_csv(results / "shap_global.csv").sort_values("share", ascending=False).head(5).to_string(index=False))
    matrix = pd.read_csv(results / "effect_matrix.csv", keep_default_na=False)
    print(matrix.pivot(index="treatment", columns="outcome", values="or").round(2).to_string())
    return status


if __name__ == "__main__":
    raise SystemExit(main())
