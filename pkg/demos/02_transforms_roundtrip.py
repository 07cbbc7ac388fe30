"""The augmentation suite and its exact inverses on saliency maps.

Photometric transforms (blur, contrast, brightness, equalize, smooth,
sharpness, color) change intensities only, so maps pass through
unchanged.  Geometric transforms (translate, rotate, flip) are undone
on the map itself; pixels whose data would have to come from outside
the frame are flagged in a validity mask instead of being invented.
"""

import numpy as np

from cose.transforms import (
    ALL_TRANSFORMS,
    TransformSpec,
    apply_transform,
    invert_on_map,
    resolved_magnitude,
    sample_transform,
)

rng = np.random.default_rng(0)

print("eleven transforms, 61-point magnitude scale:")
for name in ALL_TRANSFORMS:
    spec = TransformSpec(name, 45, signed=False)
    mag = resolved_magnitude(spec, side=32)
    print(f"  {name:12s} kind={spec.kind:12s} index 45 -> {mag}")

print("\nsampling is deterministic given the seed:")
for seed in (7, 7, 8):
    print(f"  seed {seed}: {sample_transform(seed).to_token()}")

# a smooth test map: sum of gaussian blobs
side = 48
yy, xx = np.mgrid[0:side, 0:side]
m = sum(
    np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    for cy, cx, s in [(14, 30, 4), (30, 12, 6), (36, 36, 3)]
)
m = (m / m.max()).astype(np.float32)

print("\ngeometric round trips (apply to the map image, invert, compare):")
for token in ("flip_lr:0:+", "translate_x:47:+", "rotate:40:-"):
    spec = TransformSpec.from_token(token)
    warped = apply_transform(spec, m[:, :, None], fill=float(m.mean()))[..., 0]
    back, mask = invert_on_map(spec, warped)
    err = np.abs(back[mask].astype(float) - m[mask])
    print(
        f"  {token:18s} valid {mask.mean():5.1%}  max err {err.max():.2e}  mean err {err.mean():.2e}"
    )

spec = TransformSpec("brightness", 60, signed=True)
img = rng.random((32, 32, 3)).astype(np.float32)
out = apply_transform(spec, img)
print(f"\nbrightness at full negative magnitude: factor {resolved_magnitude(spec):.2f}, "
      f"image mean {img.mean():.3f} -> {out.mean():.3f} (clamped to [0, 1])")
