#!/usr/bin/env python3
"""Generate a synthetic mixed-archetype dataset and write it as an MSFD file.

The file holds n records per positive archetype (sudden, gradual, early_cue)
plus the matching number of benigns; a JSON manifest written next to it pins
every record's spec so the dataset regenerates bit-identically.
"""
import argparse
import json
from pathlib import Path

from msfin.dataio import write_dataset
from msfin.scenarios import ScenarioSpec, generate_dataset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", required=True, help="output .msfd path")
    ap.add_argument("-n", "--n-per-archetype", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--t-len", type=int, default=50)
    ap.add_argument("--n-objects", type=int, default=6)
    ap.add_argument("--d-in", type=int, default=64)
    ap.add_argument("--fps", type=int, default=10)
    ap.add_argument("--noise-sigma", type=float, default=0.5)
    ap.add_argument(
        "--false-cue-rate", type=float, default=0.0,
        help="probability that a benign record carries a decoy pulse",
    )
    args = ap.parse_args()

    base = ScenarioSpec(
        "benign",
        t_len=args.t_len,
        n_objects=args.n_objects,
        d_in=args.d_in,
        fps=args.fps,
        noise_sigma=args.noise_sigma,
        false_cue_rate=args.false_cue_rate,
    )
    dataset = generate_dataset(args.n_per_archetype, base, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = write_dataset(dataset.records, out)
    manifest_path = out.with_suffix(out.suffix + ".manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(dataset.manifest, fh, indent=2)
        fh.write("\n")
    print(
        f"wrote {summary['records']} records ({summary['positives']} positive)"
        f" -> {out}\nmanifest -> {manifest_path}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
