"""The metric layer on synthetic data: structural similarity, the
distance d = 1 - SSIM, consistency, sensitivity, COSE and the
checkpoint correlation.

The similarity index uses C1 = 0.01 and C2 = 0.03 directly with an
11x11 uniform sliding window by default; a global mode evaluates the
same formula once over the full map.
"""

import numpy as np

from cose.metrics import (
    EvalRecord,
    SsimParams,
    checkpoint_correlation,
    consistency,
    cose,
    distance,
    sensitivity,
    ssim,
)

rng = np.random.default_rng(0)

m = rng.random((32, 32))
print(f"ssim(M, M) = {ssim(m, m):.6f} (exactly 1)")
print(f"d(M, M)    = {distance(m, m):.6f}")

ones, zeros = np.ones((32, 32)), np.zeros((32, 32))
g = SsimParams(mode="global")
print(f"global ssim(1, 0) = {ssim(ones, zeros, g):.6f}  (hand value 0.01/1.01 = {0.01/1.01:.6f})")

noisy = np.clip(m + rng.normal(scale=0.1, size=m.shape), 0, 1)
print(f"windowed ssim(M, M+noise) = {ssim(m, noisy):.4f}")

# records: consistent pairs carry SSIM, sensitive pairs carry d
consistent = [
    EvalRecord(f"img{i}", "blur:20:+", "photometric", True, s, "demo")
    for i, s in enumerate((0.2, 0.5, 0.8))
]
sensitive = [
    EvalRecord("img0", "rotate:55:-", "geometric", False, 0.1, "demo"),
    EvalRecord("img1", "contrast:60:+", "photometric", False, 0.3, "demo"),
    EvalRecord("img2", "checkpoint:5", "checkpoint", False, 0.8, "demo"),
]
c = consistency(consistent)
s = sensitivity(sensitive)
print(f"\nconsistency of scores (0.2, 0.5, 0.8) = {c}")
print(f"sensitivity of d-values (0.1, 0.3, 0.8) = {s}")
print(f"COSE = 2cs/(c+s) x 100% = {cose(c, s):.3f}%")
print(f"COSE(0.8, 0.6) = {cose(0.8, 0.6):.3f}%  (hand: 68.571%)")
print(f"COSE(c, 0) = {cose(0.9, 0.0)}%  (limit rule)")

# accuracy vs similarity-to-final, Fig-style correlation
accs = np.array([0.33, 0.41, 0.55, 0.71, 0.84, 0.90, 0.93])
sims = np.clip(0.2 + 0.8 * accs + rng.normal(scale=0.05, size=len(accs)), 0, 1)
res = checkpoint_correlation(list(zip(accs, sims)))
print(f"\ncheckpoint correlation: r={res.r:+.3f} p={res.p_value:.3e} "
      f"significant at 0.05: {res.significant}")
