"""Share of days on which the ARMA baseline predicts a CST, per cutoff time."""

import argparse

import numpy as np

from congestcast.baselines import predict_cst_arma
from congestcast.congestion import extract_records, records_by_segment
from congestcast.synth import ScenarioSpec, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cutoffs", nargs="+", default=["04:00", "06:00", "08:00"])
    ap.add_argument("--days", type=int, default=20)
    ap.add_argument("--tt-noise", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    ds = generate(ScenarioSpec(H=20, D=args.days, n_segments=2, tt_noise_sd=args.tt_noise, seed=args.seed))
    fftt = {seg: recs[0].fftt for seg, recs in records_by_segment(extract_records(ds.series)).items()}
    for cutoff in args.cutoffs:
        hits = [predict_cst_arma(s.times, fftt[s.segment_id], cutoff=cutoff).cst is not None for s in ds.series]
        print(f"cutoff {cutoff}: ARMA predicts a CST on {np.mean(hits):.0%} of {len(hits)} segment-days")


if __name__ == "__main__":
    main()
