"""Pilot run used to freeze the end-to-end acceptance thresholds.

Trains the full objective (splat-style profile) on the default emissive-boxes
dataset with the acceptance budget and prints the held-out metrics.  The
frozen thresholds in tests/fixtures/e2e_thresholds.json were set from this
output minus a safety margin.

    python3 demos/pilot_thresholds.py [iterations] [seed]
"""
import json
import sys
import time

from monohdr import synthdata as sd
from monohdr import trainer as tr

BUDGET = {"iterations": 2000, "n_samples": 32}


def main():
    iters = int(sys.argv[1]) if len(sys.argv) > 1 else BUDGET["iterations"]
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    bundle = sd.default_dataset("emissive-boxes")
    stats = sd.exposure_stats(bundle)
    sat = sum(s["saturated"] for s in stats) / len(stats)
    cfg = tr.TrainConfig.from_profile("splat-style", iterations=iters, n_samples=BUDGET["n_samples"],
                                      seed=seed, eval_every=max(iters // 4, 1))
    t0 = time.time()
    _, hist = tr.train(bundle, cfg)
    for row in hist:
        if row["split"] == "test":
            print(json.dumps({k: row[k] for k in ("step", "psnr_ldr", "psnr_hdr_mulaw")}))
    print(f"saturated fraction {sat:.3f}, {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
