"""Generate a synthetic corpus and run the whole pipeline on it.

    python scripts/run_demo.py --out /tmp/nml_demo            # reduced search, about a minute
    python scripts/run_demo.py --out /tmp/nml_demo --full     # default search, about 15 minutes
"""
import argparse
import json
import sys
from pathlib import Path

import yaml

from nml.cli import main

QUICK = {
    "forecast": {"trials": 10, "runs": 2, "max_epochs": 30, "n_startup": 10,
                 "space": {"units": [8, 16], "lookback": [4, 8]}},
    "explain": {"max_samples": 6},
}


def demo(out: Path, seed: int, weeks: int, full: bool) -> int:
    data = out / "data"
    code = main(["gen-synthetic", "--out", str(data), "--seed", str(seed), "--weeks", str(weeks)])
    if code:
        return code
    cfg_path = data / "config.yaml"
    if not full:
        doc = yaml.safe_load(cfg_path.read_text())
        for section, vals in QUICK.items():
            for k, v in vals.items():
                if isinstance(v, dict):
                    doc[section][k].update(v)
                else:
                    doc[section][k] = v
        cfg_path.write_text(yaml.safe_dump(doc, sort_keys=False))
    code = main(["run", "--config", str(cfg_path), "--out", str(out / "artifacts")])
    if code == 0:
        folds = json.loads((out / "artifacts" / "forecast" / "folds.json").read_text())
        print(f"rmse ratio vs mean predictor: {folds['mean_rmse_ratio']:.3f}", file=sys.stderr)
        print(f"report: {out / 'artifacts' / 'report' / 'report.md'}", file=sys.stderr)
    return code


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--weeks", type=int, default=546)
    ap.add_argument("--full", action="store_true", help="use the default 4 x 5 x 75 search")
    a = ap.parse_args()
    sys.exit(demo(a.out, a.seed, a.weeks, a.full))
