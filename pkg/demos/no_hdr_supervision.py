"""Train with LDR and the H2L loop only, then look at what the HDR head learned.

Without HDR ground truth the only anchor for the HDR scale is the camera
inverse on unsaturated pixels.  This script fits that affine map, applies it
to the whole prediction and compares the saturated regions with ground truth.

    python3 demos/no_hdr_supervision.py [iterations]
"""
import sys

import numpy as np

from monohdr import camera as cam
from monohdr import synthdata as sd
from monohdr import trainer as tr


def main():
    iters = int(sys.argv[1]) if len(sys.argv) > 1 else 800
    bundle = sd.default_dataset("emissive-boxes")
    cfg = tr.TrainConfig.from_profile("splat-style", iterations=iters, n_samples=32,
                                      losses=("ldr", "h2l"), hdr_ratio=0.0)
    state, hist = tr.train(bundle, cfg, progress=True)
    print("held-out LDR PSNR", round(hist[-1]["psnr_ldr"], 2))

    p = bundle.camera
    ids = bundle.test_ids
    pred = np.stack([tr.render_view(state, bundle.poses[i], bundle.background_ldr, 32)["hdr"] for i in ids])
    gt, ldr = bundle.hdr[ids], bundle.ldr[ids]
    sat = cam.is_saturated(gt, p)
    anchor = ~sat & (ldr > 0.02)
    a, b = np.polyfit(pred[anchor], cam.ldr_to_hdr_ideal(ldr[anchor], p), 1)
    restored = a * pred + b
    print(f"affine anchor: scale {a:.3f}, offset {b:.4f}")
    print(f"saturated pixels: predicted mean {restored[sat].mean():.3f}, ground truth {gt[sat].mean():.3f}")
    print(f"unsaturated pixels: mean abs error {np.abs(restored[~sat] - gt[~sat]).mean():.4f}")

    # the learned lift is close to linear in LDR, so it cannot extrapolate past the clip
    c = np.linspace(0, 1, 6)[:, None].repeat(3, axis=1)
    print("L2H(c) on a grey ramp:", np.round(a * state.l2h.apply_numpy(c)[:, 0] + b, 3))


if __name__ == "__main__":
    main()
