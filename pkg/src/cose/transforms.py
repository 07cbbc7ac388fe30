"""Natural image augmentations: a photometric set (blur, contrast,
brightness, equalize, smooth, sharpness, color) and a geometric set
(translate_x, translate_y, rotate, flip_lr), each with a 61-point linear
magnitude scale, plus exact inverse application of geometric transforms
to saliency maps with validity masking.

Magnitude ranges (index 60 = strongest):

    brightness / contrast / color / sharpness : factor 1 +/- 0.99
    blur                                      : Gaussian sigma in [0, 2]
    smooth                                    : 3x3 box blend alpha in [0, 1]
    rotate                                    : +/- 30 degrees
    translate_x / translate_y                 : +/- 10% of the side, snapped
                                                to whole pixels so that the
                                                inverse is exact
    equalize / flip_lr                        : fixed magnitude

Index 0 of any ranged transform is the identity.  Translation snapping
keeps map round trips bit-clean; rotations rely on bilinear resampling
and mark out-of-frame pixels in the validity mask instead of inventing
fill values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cose import imageops

MAGNITUDE_STEPS = 61  # indices 0..60

PHOTOMETRIC = ("blur", "contrast", "brightness", "equalize", "smooth", "sharpness", "color")
GEOMETRIC = ("translate_x", "translate_y", "rotate", "flip_lr")
ALL_TRANSFORMS = PHOTOMETRIC + GEOMETRIC

# transforms whose magnitude has a meaningful direction
SIGNABLE = {"brightness", "contrast", "color", "sharpness", "rotate", "translate_x", "translate_y"}
# transforms that ignore the magnitude index entirely
FIXED_MAGNITUDE = {"equalize", "flip_lr"}

_LUMA = np.array([0.299, 0.587, 0.114])


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class TransformSpec:
    """One sampled augmentation: name, magnitude index in [0, 60], and
    whether the magnitude direction is negated."""

    name: str
    magnitude_index: int
    signed: bool = False

    def __post_init__(self):
        if self.name not in ALL_TRANSFORMS:
            raise TransformError(f"unknown transform {self.name!r}")
        if not 0 <= self.magnitude_index < MAGNITUDE_STEPS:
            raise TransformError(f"magnitude_index {self.magnitude_index} outside [0, {MAGNITUDE_STEPS - 1}]")

    @property
    def kind(self) -> str:
        return "geometric" if self.name in GEOMETRIC else "photometric"

    def to_token(self) -> str:
        """One-line record ``name:magnitude_index:sign`` used in logs and
        interchange metadata."""
        return f"{self.name}:{self.magnitude_index}:{'-' if self.signed else '+'}"

    @classmethod
    def from_token(cls, token: str) -> "TransformSpec":
        parts = token.strip().split(":")
        if len(parts) != 3 or parts[2] not in "+-":
            raise TransformError(f"bad transform token {token!r}")
        try:
            idx = int(parts[1])
        except ValueError as exc:
            raise TransformError(f"bad magnitude in token {token!r}") from exc
        return cls(parts[0], idx, parts[2] == "-")


def sample_transform(rng_seed) -> TransformSpec:
    """Uniformly random transform name, magnitude index and sign.

    ``rng_seed`` may be an int, a SeedSequence-compatible value or a
    Generator; the same seed always yields the same spec.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    name = ALL_TRANSFORMS[int(rng.integers(0, len(ALL_TRANSFORMS)))]
    idx = int(rng.integers(0, MAGNITUDE_STEPS))
    signed = bool(rng.integers(0, 2)) if name in SIGNABLE else False
    if name in FIXED_MAGNITUDE:
        idx = 0
    return TransformSpec(name, idx, signed)


def _strength(spec: TransformSpec) -> float:
    return spec.magnitude_index / (MAGNITUDE_STEPS - 1)


def resolved_magnitude(spec: TransformSpec, side: int | None = None):
    """Concrete parameter for a spec: enhancement factor, sigma, alpha,
    degrees, or integer pixel shift (translations need ``side``)."""
    s = _strength(spec)
    name = spec.name
    if name in ("brightness", "contrast", "color", "sharpness"):
        dev = 0.99 * s
        return 1.0 - dev if spec.signed else 1.0 + dev
    if name == "blur":
        return 2.0 * s
    if name == "smooth":
        return s
    if name == "rotate":
        deg = 30.0 * s
        return -deg if spec.signed else deg
    if name in ("translate_x", "translate_y"):
        if side is None:
            raise TransformError("translation magnitude needs the image side length")
        px = int(round(0.10 * s * side))
        return -px if spec.signed else px
    return 0.0  # equalize, flip_lr: fixed magnitude


# ---------------------------------------------------------------------------
# photometric ops (float images in [0, 1], shape (H, W, C))


def _grayscale(x):
    return x @ _LUMA


def _brightness(x, factor):
    return x * factor


def _contrast(x, factor):
    mean = _grayscale(x).mean()
    return mean + (x - mean) * factor


def _color(x, factor):
    gray = _grayscale(x)[..., None]
    return gray + (x - gray) * factor


def _sharpness(x, factor):
    smooth = imageops.box_blur3(x.astype(np.float64))
    return smooth + (x - smooth) * factor


def _smooth(x, alpha):
    smooth = imageops.box_blur3(x.astype(np.float64))
    return (1.0 - alpha) * x + alpha * smooth


def equalize(x: np.ndarray, bins: int = 256) -> np.ndarray:
    """Per-channel histogram equalization of a [0, 1] float image.

    Degenerate single-bin channels (constant image) are returned
    unchanged, so a constant image stays constant.
    """
    out = np.empty_like(x, dtype=np.float64)
    xq = np.clip((x * (bins - 1)).round().astype(int), 0, bins - 1)
    for c in range(x.shape[2]):
        hist = np.bincount(xq[..., c].reshape(-1), minlength=bins)
        nonzero = np.nonzero(hist)[0]
        if len(nonzero) <= 1:
            out[..., c] = x[..., c]
            continue
        cdf = np.cumsum(hist)
        cdf_min = cdf[nonzero[0]]
        total = cdf[-1]
        lut = (cdf - cdf_min) / (total - cdf_min)
        out[..., c] = lut[xq[..., c]]
    return out


def apply_transform(spec: TransformSpec, image: np.ndarray, fill=None) -> np.ndarray:
    """Apply a transform to a [0, 1] image (H, W, C); output is clamped
    back to [0, 1].  ``fill`` is the color for out-of-frame pixels of
    geometric warps (defaults to the image's own mean color; the harness
    passes the dataset mean)."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise TransformError(f"expected (H, W, C) image, got shape {x.shape}")
    h, w = x.shape[:2]
    name = spec.name

    if name == "flip_lr":
        return np.ascontiguousarray(image[:, ::-1])
    if name in ("translate_x", "translate_y"):
        axis = 1 if name == "translate_x" else 0
        px = resolved_magnitude(spec, side=x.shape[axis])
        out = _translate(x, axis, px, _fill_color(x, fill))
        return _finish(out, image)
    if name == "rotate":
        deg = resolved_magnitude(spec)
        if deg == 0.0:
            return np.asarray(image).copy()
        sampling = imageops.invert_affine(imageops.rotation_matrix(deg, (h, w)))
        out, _ = imageops.warp_affine(x, sampling, fill=_fill_color(x, fill))
        return _finish(out, image)

    if name == "brightness":
        out = _brightness(x, resolved_magnitude(spec))
    elif name == "contrast":
        out = _contrast(x, resolved_magnitude(spec))
    elif name == "color":
        out = _color(x, resolved_magnitude(spec))
    elif name == "sharpness":
        out = _sharpness(x, resolved_magnitude(spec))
    elif name == "smooth":
        out = _smooth(x, resolved_magnitude(spec))
    elif name == "blur":
        out = imageops.gaussian_blur(x, resolved_magnitude(spec))
    elif name == "equalize":
        out = equalize(x)
    else:  # pragma: no cover
        raise TransformError(f"unhandled transform {name!r}")
    return _finish(out, image)


def _fill_color(x, fill):
    if fill is None:
        return x.reshape(-1, x.shape[-1]).mean(axis=0)
    return np.asarray(fill, dtype=np.float64)


def _finish(out, image):
    return np.clip(out, 0.0, 1.0).astype(np.asarray(image).dtype, copy=False)


def _translate(x, axis, px, fill_color):
    """Integer-pixel content shift (+px moves content toward higher index)."""
    out = np.empty_like(x)
    out[...] = fill_color
    if px == 0:
        return x.copy()
    n = x.shape[axis]
    if abs(px) >= n:
        return out
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    if px > 0:
        src[axis] = slice(0, n - px)
        dst[axis] = slice(px, n)
    else:
        src[axis] = slice(-px, n)
        dst[axis] = slice(0, n + px)
    out[tuple(dst)] = x[tuple(src)]
    return out


# ---------------------------------------------------------------------------
# inverse application to saliency maps


def invert_on_map(spec: TransformSpec, map_values: np.ndarray):
    """Undo a geometric transform on a saliency map of the transformed image.

    Returns (map, validity mask).  The mask is all-true for photometric
    specs and flips; translations and rotations mark pixels whose source
    lies outside the transformed frame.  Rotations use the exact inverse
    affine warp with bilinear interpolation; translations are exact
    integer shifts.
    """
    m = np.asarray(map_values)
    if m.ndim != 2:
        raise TransformError(f"expected a 2-D map, got shape {m.shape}")
    h, w = m.shape
    all_true = np.ones((h, w), dtype=bool)
    name = spec.name

    if spec.kind == "photometric":
        return m.copy(), all_true
    if name == "flip_lr":
        return np.ascontiguousarray(m[:, ::-1]), all_true
    if name in ("translate_x", "translate_y"):
        axis = 1 if name == "translate_x" else 0
        px = resolved_magnitude(spec, side=m.shape[axis])
        out = np.zeros_like(m)
        valid = np.zeros((h, w), dtype=bool)
        n = m.shape[axis]
        if abs(px) < n:
            # inverse of content shift +px: out(p) = map(p + px)
            src = [slice(None)] * 2
            dst = [slice(None)] * 2
            if px >= 0:
                src[axis] = slice(px, n)
                dst[axis] = slice(0, n - px)
            else:
                src[axis] = slice(0, n + px)
                dst[axis] = slice(-px, n)
            out[tuple(dst)] = m[tuple(src)]
            valid[tuple(dst)] = True
        return out, valid
    if name == "rotate":
        deg = resolved_magnitude(spec)
        if deg == 0.0:
            return m.copy(), all_true
        # sampling with the forward content matrix realizes g^{-1} on maps
        sampling = imageops.rotation_matrix(deg, (h, w))
        out, valid = imageops.warp_affine(m, sampling, fill=0.0)
        return out, valid
    raise TransformError(f"unhandled geometric transform {name!r}")  # pragma: no cover
