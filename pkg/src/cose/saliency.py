"""Reference saliency methods: vanilla gradient, SmoothGrad, Integrated
Gradients, BlurIG, GuidedIG, GradCAM, GradCAM++ and LIME.

Every method runs through one common signature

    method(model, image, target_class, config, rng) -> SaliencyMap

so the harness can enumerate methods by name (see :data:`REGISTRY` and
:func:`compute_map`).  ``model`` is anything exposing ``graph()``,
``input_shape``, ``dtype``, ``num_classes`` and (for the CAM methods) a
``gradcam_layer`` activation name.

Raw attributions of the gradient-family methods are reduced to a 2-D map
by the channel-wise maximum of absolute values and then min-max
normalized to [0, 1]; a constant raw map normalizes to all 0.5 (the
documented degenerate rule).  The ``*_raw`` variants expose the
unreduced per-channel attributions that the completeness checks audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cose import imageops

__all__ = [
    "SaliencyMap",
    "MethodConfig",
    "UnsupportedMethodError",
    "DegenerateSamplingError",
    "REGISTRY",
    "method_names",
    "compute_map",
    "register_method",
    "vanilla_gradient",
    "smoothgrad",
    "integrated_gradients",
    "integrated_gradients_raw",
    "blur_ig",
    "blur_ig_raw",
    "guided_ig",
    "guided_ig_raw",
    "gradcam",
    "gradcam_pp",
    "lime",
    "normalize_attribution",
]


class UnsupportedMethodError(RuntimeError):
    pass


class DegenerateSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SaliencyMap:
    """2-D attribution map over pixels, normalized to [0, 1]."""

    values: np.ndarray
    method: str
    target_class: int
    mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ValueError(f"map must be 2-D, got shape {v.shape}")
        if self.mask is None:
            object.__setattr__(self, "mask", np.ones(v.shape, dtype=bool))
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("map values outside [0, 1]; normalize first")


@dataclass(frozen=True)
class MethodConfig:
    """Per-method hyperparameters (recommended defaults)."""

    ig_steps: int = 64
    blur_ig_steps: int = 64
    blur_ig_max_sigma: float | None = None  # None: image side / 4
    guided_ig_steps: int = 64
    guided_ig_fraction: float = 0.25
    smoothgrad_n: int = 25
    smoothgrad_sigma: float = 0.15  # of the [0, 1] value range
    lime_segments: int = 64
    lime_samples: int = 256
    lime_ridge: float = 1.0

    def __post_init__(self):
        for name in ("ig_steps", "blur_ig_steps", "guided_ig_steps", "smoothgrad_n", "lime_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.smoothgrad_sigma < 0:
            raise ValueError("smoothgrad_sigma must be >= 0")
        if not 0 < self.guided_ig_fraction <= 1:
            raise ValueError("guided_ig_fraction must be in (0, 1]")
        if self.lime_segments < 4:
            raise ValueError("lime_segments must be >= 4")
        if self.lime_samples < self.lime_segments:
            raise ValueError("lime_samples must be >= lime_segments")


def normalize_attribution(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize a 2-D attribution; constant maps become 0.5."""
    raw = np.asarray(raw, dtype=np.float32)
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo:
        return np.full(raw.shape, 0.5, dtype=np.float32)
    return (raw - lo) / (hi - lo)


def _reduce_channels(raw_hwc: np.ndarray) -> np.ndarray:
    return np.abs(raw_hwc).max(axis=-1)


def _check_class(model, target_class):
    if not 0 <= target_class < model.num_classes:
        raise ValueError(f"target class {target_class} outside [0, {model.num_classes})")


def _onehot_seed(model, n, target_class):
    seed = np.zeros((n, model.num_classes), dtype=model.dtype)
    seed[:, target_class] = 1.0
    return seed


def _batched_input_grads(model, images: np.ndarray, target_class: int) -> np.ndarray:
    """d logit[target] / d input for a batch of images, one graph pass."""
    g = model.graph()
    g.forward(np.asarray(images, dtype=model.dtype))
    g.backward(_onehot_seed(model, images.shape[0], target_class), write_tensor_grads=False)
    return g.input_grad.astype(np.float64)


def _single_input_grad(model, image, target_class):
    return _batched_input_grads(model, np.asarray(image)[None], target_class)[0]


def _logit(model, image, target_class) -> float:
    g = model.graph()
    out = g.forward(np.asarray(image, dtype=model.dtype)[None], requires_input_grad=False)
    return float(out.data[0, target_class])


# ---------------------------------------------------------------------------
# gradient family


def vanilla_gradient(model, image, target_class, config=None, rng=None) -> SaliencyMap:
    """|d logit / d input|, reduced over channels by max."""
    _check_class(model, target_class)
    grad = _single_input_grad(model, image, target_class)
    return SaliencyMap(normalize_attribution(_reduce_channels(grad)), "vanilla_gradient", target_class)


def smoothgrad(model, image, target_class, config=None, rng=None) -> SaliencyMap:
    """Mean vanilla-gradient map over n Gaussian-noised copies."""
    _check_class(model, target_class)
    cfg = config or MethodConfig()
    rng = rng or np.random.default_rng(0)
    image = np.asarray(image, dtype=np.float64)
    noisy = image[None] + rng.normal(scale=cfg.smoothgrad_sigma, size=(cfg.smoothgrad_n,) + image.shape)
    if cfg.smoothgrad_sigma == 0.0:
        noisy = np.repeat(image[None], cfg.smoothgrad_n, axis=0)
    grads = _batched_input_grads(model, noisy, target_class)
    raw = np.mean([_reduce_channels(g) for g in grads], axis=0)
    return SaliencyMap(normalize_attribution(raw), "smoothgrad", target_class)


def integrated_gradients_raw(model, image, target_class, steps=64, baseline=None) -> np.ndarray:
    """Per-channel attributions of the straight-line path integral from
    the baseline (default: black image), midpoint Riemann rule."""
    _check_class(model, target_class)
    x = np.asarray(image, dtype=np.float64)
    b = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if b.shape != x.shape:
        raise ValueError(f"baseline shape {b.shape} != image shape {x.shape}")
    alphas = (np.arange(steps, dtype=np.float64) + 0.5) / steps
    points = b[None] + alphas[:, None, None, None] * (x - b)[None]
    grads = _batched_input_grads(model, points, target_class)
    return grads.mean(axis=0) * (x - b)


def integrated_gradients(model, image, target_class, config=None, rng=None) -> SaliencyMap:
    cfg = config or MethodConfig()
    raw = integrated_gradients_raw(model, image, target_class, steps=cfg.ig_steps)
    return SaliencyMap(normalize_attribution(_reduce_channels(raw)), "integrated_gradients", target_class)


def blur_ig_raw(model, image, target_class, steps=64, max_sigma=None) -> np.ndarray:
    """Path integral along a decreasing-blur sequence from max_sigma to 0;
    the path derivative is the difference of consecutive blurred images."""
    _check_class(model, target_class)
    x = np.asarray(image, dtype=np.float64)
    if max_sigma is None:
        max_sigma = x.shape[0] / 4.0
    if max_sigma <= 0:
        raise ValueError("max_sigma must be > 0")
    sigmas = max_sigma * (1.0 - np.arange(steps + 1, dtype=np.float64) / steps)
    path = np.stack([imageops.gaussian_blur(x, float(s)) for s in sigmas])  # most to least blurred
    grads = _batched_input_grads(model, path[:-1], target_class)
    deltas = path[1:] - path[:-1]
    return (grads * deltas).sum(axis=0)


def blur_ig(model, image, target_class, config=None, rng=None) -> SaliencyMap:
    cfg = config or MethodConfig()
    raw = blur_ig_raw(model, image, target_class, steps=cfg.blur_ig_steps, max_sigma=cfg.blur_ig_max_sigma)
    return SaliencyMap(normalize_attribution(_reduce_channels(raw)), "blur_ig", target_class)


def guided_ig_raw(model, image, target_class, steps=64, fraction=0.25, baseline=None, trace=None) -> np.ndarray:
    """Adaptive path from the baseline: each step moves only the fraction
    of not-yet-arrived coordinates with the smallest |d logit / d input|,
    proportionally, following the straight-line distance schedule.

    With fraction = 1 the path degenerates to the straight line and the
    attributions equal integrated gradients at the same step count.
    ``trace``, if a list, collects the L1 distance from the baseline after
    every step.
    """
    _check_class(model, target_class)
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    x = np.asarray(image, dtype=np.float64)
    b = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    flat_x = x.reshape(-1)
    flat_b = b.reshape(-1)
    total = float(np.abs(flat_x - flat_b).sum())
    attr = np.zeros_like(flat_x)
    z = flat_b.copy()
    if total == 0.0:
        return attr.reshape(x.shape)
    # straight-line per-step coordinate move; larger moves get subdivided
    step_scale = float(np.abs(flat_x - flat_b).max()) / steps

    for k in range(steps):
        remaining = flat_x - z
        active = np.abs(remaining) > 1e-12 * max(1.0, np.abs(flat_x).max())
        n_active = int(active.sum())
        if n_active == 0:
            break
        schedule = (k + 1) / steps * total
        budget = schedule - float(np.abs(z - flat_b).sum())
        if budget <= 0.0:
            continue

        g = _single_input_grad(model, z.reshape(x.shape), target_class).reshape(-1)
        order = np.argsort(np.abs(g), kind="stable")
        order = order[active[order]]
        m = min(n_active, max(1, math.ceil(fraction * n_active)))
        # extend the smallest-gradient selection until it can absorb several
        # steps' budget; this keeps per-coordinate moves small (large jumps
        # on late-included coordinates would wreck the path integral)
        headroom = max(2.0, steps / 8.0) * budget
        sel = order[:m]
        sel_mass = float(np.abs(remaining[sel]).sum())
        while sel_mass < headroom and m < n_active:
            m = min(n_active, max(m + 1, 2 * m))
            sel = order[:m]
            sel_mass = float(np.abs(remaining[sel]).sum())

        lam = 1.0 if sel_mass <= budget else budget / sel_mass
        delta = np.zeros_like(z)
        delta[sel] = lam * remaining[sel]
        n_sub = int(min(8, max(1, math.ceil(float(np.abs(delta).max()) / step_scale - 1e-9))))
        for t in range(n_sub):
            mid = z + (t + 0.5) / n_sub * delta
            g_mid = _single_input_grad(model, mid.reshape(x.shape), target_class).reshape(-1)
            attr += g_mid * (delta / n_sub)
        z += delta
        if trace is not None:
            trace.append(float(np.abs(z - flat_b).sum()))
    return attr.reshape(x.shape)


def guided_ig(model, image, target_class, config=None, rng=None) -> SaliencyMap:
    cfg = config or MethodConfig()
    raw = guided_ig_raw(model, image, target_class, steps=cfg.guided_ig_steps, fraction=cfg.guided_ig_fraction)
    return SaliencyMap(normalize_attribution(_reduce_channels(raw)), "guided_ig", target_class)


# ---------------------------------------------------------------------------
# CAM family


def _cam_tensors(model, image, target_class):
    layer = getattr(model, "gradcam_layer", None)
    if not layer:
        raise UnsupportedMethodError("model exposes no convolutional activation for CAM methods")
    g = model.graph()
    g.forward(np.asarray(image, dtype=model.dtype)[None], requires_input_grad=False)
    g.backward(_onehot_seed(model, 1, target_class), write_tensor_grads=False)
    acts = g.activation(layer).data[0].astype(np.float64)
    grads = g.grad_wrt(layer)[0].astype(np.float64)
    return acts, grads


def _cam_finish(cam, shape_hw, name, target_class):
    cam = np.maximum(cam, 0.0)
    cam = imageops.bilinear_resize(cam, shape_hw[0], shape_hw[1])
    return SaliencyMap(normalize_attribution(cam), name, target_class)


def gradcam(model, image, target_class, config=None, rng=None) -> SaliencyMap:
    """Channel weights = spatial mean of d logit / d activation;
    map = relu(sum_c w_c A_c), upsampled to the input size."""
    _check_class(model, target_class)
    acts, grads = _cam_tensors(model, image, target_class)
    weights = grads.mean(axis=(0, 1))
    cam = np.tensordot(acts, weights, axes=([2], [0]))
    h, w = np.asarray(image).shape[:2]
    return _cam_finish(cam, (h, w), "gradcam", target_class)


def gradcam_pp(model, image, target_class, config=None, rng=None) -> SaliencyMap:
    """Second-order closed-form weights from gradient powers of the target
    activation, then relu-sum and upsample."""
    _check_class(model, target_class)
    acts, grads = _cam_tensors(model, image, target_class)
    g2 = grads * grads
    g3 = g2 * grads
    sum_acts = acts.sum(axis=(0, 1))  # per channel
    denom = 2.0 * g2 + sum_acts[None, None, :] * g3
    alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=np.abs(denom) > 1e-12)
    alpha = np.where(grads != 0.0, alpha, 0.0)
    weights = (alpha * np.maximum(grads, 0.0)).sum(axis=(0, 1))
    cam = np.tensordot(acts, weights, axes=([2], [0]))
    h, w = np.asarray(image).shape[:2]
    return _cam_finish(cam, (h, w), "gradcam_pp", target_class)


# ---------------------------------------------------------------------------
# LIME


def _segment_grid(shape_hw, n_segments):
    """Split the image into a near-square regular grid of n_segments cells;
    returns an (H, W) int map of segment ids."""
    h, w = shape_hw
    rows = int(math.floor(math.sqrt(n_segments)))
    while n_segments % rows:
        rows -= 1
    cols = n_segments // rows
    seg = np.zeros((h, w), dtype=np.int32)
    r_edges = np.linspace(0, h, rows + 1).astype(int)
    c_edges = np.linspace(0, w, cols + 1).astype(int)
    sid = 0
    for i in range(rows):
        for j in range(cols):
            seg[r_edges[i] : r_edges[i + 1], c_edges[j] : c_edges[j + 1]] = sid
            sid += 1
    return seg


def _ridge_fit(masks: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Centered ridge regression; a constant target yields exactly zero
    coefficients."""
    z = masks.astype(np.float64)
    zc = z - z.mean(axis=0)
    yc = y.astype(np.float64) - y.mean()
    a = zc.T @ zc + lam * np.eye(z.shape[1])
    return np.linalg.solve(a, zc.T @ yc)


def lime(model, image, target_class, config=None, rng=None, masks=None) -> SaliencyMap:
    """Perturb-and-fit explanation on a regular segment grid.

    Random on/off segment masks (off = image mean color) are scored by
    the model's softmax probability of the target class; per-segment
    ridge coefficients are broadcast to pixels and normalized.
    """
    _check_class(model, target_class)
    cfg = config or MethodConfig()
    rng = rng or np.random.default_rng(0)
    x = np.asarray(image, dtype=np.float64)
    seg = _segment_grid(x.shape[:2], cfg.lime_segments)
    n_seg = seg.max() + 1

    if masks is None:
        masks = rng.integers(0, 2, size=(cfg.lime_samples, n_seg)).astype(np.float64)
    else:
        masks = np.asarray(masks, dtype=np.float64)
    constant_cols = np.ptp(masks, axis=0) == 0
    if constant_cols.any():
        raise DegenerateSamplingError(
            f"{int(constant_cols.sum())} segments never toggled; increase lime_samples"
        )

    mean_color = x.reshape(-1, x.shape[-1]).mean(axis=0)
    pixel_on = masks[:, seg]  # (n_samples, H, W)
    batch = pixel_on[..., None] * x[None] + (1.0 - pixel_on[..., None]) * mean_color
    g = model.graph()
    logits = g.forward(batch.astype(model.dtype), requires_input_grad=False).data
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = (e / e.sum(axis=1, keepdims=True))[:, target_class]

    coef = _ridge_fit(masks, probs, cfg.lime_ridge)
    raw = coef[seg]
    return SaliencyMap(normalize_attribution(raw), "lime", target_class)


# ---------------------------------------------------------------------------
# registry


REGISTRY = {
    "vanilla_gradient": vanilla_gradient,
    "smoothgrad": smoothgrad,
    "integrated_gradients": integrated_gradients,
    "blur_ig": blur_ig,
    "guided_ig": guided_ig,
    "gradcam": gradcam,
    "gradcam_pp": gradcam_pp,
    "lime": lime,
}

REFERENCE_METHODS = (
    "blur_ig",
    "gradcam",
    "gradcam_pp",
    "guided_ig",
    "integrated_gradients",
    "lime",
    "smoothgrad",
)


def method_names():
    return sorted(REGISTRY)


def register_method(name: str, fn) -> None:
    """Hook for mock/experimental methods; fn follows the common signature."""
    REGISTRY[name] = fn


def compute_map(model, image, target_class, method: str, config=None, rng=None) -> SaliencyMap:
    if method not in REGISTRY:
        raise UnsupportedMethodError(f"unknown saliency method {method!r}; known: {method_names()}")
    return REGISTRY[method](model, image, target_class, config, rng)
