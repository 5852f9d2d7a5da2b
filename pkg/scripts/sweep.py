"""Prediction error as the electricity window end moves earlier (one scenario)."""

import argparse
import tempfile
from pathlib import Path

from congestcast import pipeline
from congestcast.config import PipelineConfig
from congestcast.congestion import extract_records
from congestcast.data import write_electricity_csv
from congestcast.synth import ScenarioSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ends", nargs="+", default=["01:00", "02:00", "04:00", "06:00"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds = generate(ScenarioSpec(seed=args.seed))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "electricity.csv"
        write_electricity_csv(ds.panel, path)
        cfg = PipelineConfig(output_dir=tmp, k=10, sweep_ends=args.ends, cluster_seed=args.seed, cv_seed=args.seed)
        table = pipeline.sweep(cfg, extract_records(ds.series), path)
    print(table.groupby("window_end")[["pooled_rmse", "pooled_mae"]].mean().round(4).to_string())


if __name__ == "__main__":
    main()
