import numpy as np
import pytest

from cose import saliency as sal
from cose.metrics import SsimParams, ssim
from cose.model import MicroModel
from cose.saliency import (
    DegenerateSamplingError,
    MethodConfig,
    SaliencyMap,
    UnsupportedMethodError,
    blur_ig_raw,
    compute_map,
    gradcam,
    gradcam_pp,
    guided_ig_raw,
    integrated_gradients_raw,
    lime,
    normalize_attribution,
    smoothgrad,
    vanilla_gradient,
)

from modelzoo import ActivationSumModel, LinearModel


@pytest.fixture(scope="module")
def micro():
    return MicroModel(seed=3)


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(11).random((32, 32, 3)).astype(np.float32)


def linear_model(seed=0, shape=(8, 8, 3), k=4):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(int(np.prod(shape)), k))
    return LinearModel(w, input_shape=shape), w


# ---------------------------------------------------------------------------
# normalization rules


def test_normalize_range_and_degenerate_rule():
    rng = np.random.default_rng(0)
    m = normalize_attribution(rng.normal(size=(16, 16)))
    assert m.min() == 0.0 and m.max() == 1.0
    const = normalize_attribution(np.full((8, 8), 3.7))
    assert np.all(const == 0.5)


def test_saliency_map_validation():
    with pytest.raises(ValueError):
        SaliencyMap(np.full((4, 4), 1.5), "m", 0)
    with pytest.raises(ValueError):
        SaliencyMap(np.zeros((4, 4, 3)), "m", 0)


# ---------------------------------------------------------------------------
# vanilla gradient


def test_vanilla_gradient_linear_model_matches_weights():
    model, w = linear_model(seed=1)
    x = np.random.default_rng(2).random((8, 8, 3)).astype(np.float32)
    out = vanilla_gradient(model, x, 2)
    expect = normalize_attribution(np.abs(w[:, 2]).reshape(8, 8, 3).max(axis=-1))
    assert np.abs(out.values - expect).max() < 1e-6


def test_vanilla_gradient_constant_model_degenerates():
    model = LinearModel(np.zeros((8 * 8 * 3, 3)))
    x = np.random.default_rng(3).random((8, 8, 3)).astype(np.float32)
    out = vanilla_gradient(model, x, 0)
    assert np.all(out.values == 0.5)


def test_vanilla_gradient_matches_pixel_finite_differences(micro, image):
    """Gradient at 10 random pixels vs central differences of the logit."""
    target = 1
    g = micro.graph()
    g.forward(image[None])
    g.backward(np.eye(micro.num_classes, dtype=np.float32)[[target]], write_tensor_grads=False)
    grad = g.input_grad[0]

    rng = np.random.default_rng(4)
    h = 1e-3
    model64 = MicroModel(seed=3, dtype=np.float64)
    model64.load_state({k: v for k, v in MicroModel(seed=3).state().items()})
    for _ in range(10):
        i, j, c = rng.integers(0, 32), rng.integers(0, 32), rng.integers(0, 3)
        pert = image.astype(np.float64)
        pert[i, j, c] += h
        up = model64.logits(pert[None])[0, target]
        pert[i, j, c] -= 2 * h
        dn = model64.logits(pert[None])[0, target]
        fd = (up - dn) / (2 * h)
        denom = max(abs(fd), 1e-2 * np.abs(grad).max())
        assert abs(grad[i, j, c] - fd) / denom < 1e-2


def test_target_class_validated(micro, image):
    with pytest.raises(ValueError):
        vanilla_gradient(micro, image, 99)


# ---------------------------------------------------------------------------
# smoothgrad


def test_smoothgrad_sigma_zero_equals_vanilla(micro, image):
    cfg = MethodConfig(smoothgrad_n=4, smoothgrad_sigma=0.0)
    a = smoothgrad(micro, image, 0, cfg, np.random.default_rng(0))
    b = vanilla_gradient(micro, image, 0)
    assert np.array_equal(a.values, b.values)


def test_smoothgrad_reproducible_given_seed(micro, image):
    cfg = MethodConfig(smoothgrad_n=1)
    a = smoothgrad(micro, image, 0, cfg, np.random.default_rng(9))
    b = smoothgrad(micro, image, 0, cfg, np.random.default_rng(9))
    assert np.array_equal(a.values, b.values)


def test_smoothgrad_variance_shrinks_with_n(micro, image):
    variances = {}
    for n in (5, 50):
        maps = [
            smoothgrad(micro, image, 0, MethodConfig(smoothgrad_n=n), np.random.default_rng(s)).values
            for s in range(10)
        ]
        variances[n] = float(np.var(np.stack(maps), axis=0).mean())
    assert variances[50] < variances[5]


# ---------------------------------------------------------------------------
# integrated gradients


@pytest.mark.parametrize("steps", [1, 16, 128])
def test_ig_linear_closed_form(steps):
    model, w = linear_model(seed=5)
    x = np.random.default_rng(6).random((8, 8, 3)).astype(np.float32)
    raw = integrated_gradients_raw(model, x, 1, steps=steps)
    expect = (w[:, 1].reshape(8, 8, 3)) * x.astype(np.float64)
    assert np.abs(raw - expect).max() < 1e-5


def test_ig_zero_at_baseline(micro):
    x = np.zeros((32, 32, 3), dtype=np.float32)
    raw = integrated_gradients_raw(micro, x, 0, steps=8)
    assert np.all(raw == 0.0)


def test_ig_completeness_micro_cnn(micro, image):
    target = 2
    raw = integrated_gradients_raw(micro, image, target, steps=128)
    g = micro.graph()
    fx = g.forward(image[None], requires_input_grad=False).data[0, target]
    f0 = micro.graph().forward(np.zeros_like(image)[None], requires_input_grad=False).data[0, target]
    gap = float(fx - f0)
    assert abs(raw.sum() - gap) < 0.01 * abs(gap)


# ---------------------------------------------------------------------------
# blur IG


def test_blur_ig_degenerate_path_is_zero(micro, image):
    raw = blur_ig_raw(micro, image, 0, steps=8, max_sigma=1e-6)
    assert np.abs(raw).max() == 0.0


def test_blur_ig_constant_image_zero(micro):
    x = np.full((32, 32, 3), 0.6, dtype=np.float32)
    raw = blur_ig_raw(micro, x, 0, steps=8, max_sigma=4.0)
    assert np.abs(raw).max() < 1e-12


def test_blur_ig_step_doubling_converges(micro, image):
    a = blur_ig_raw(micro, image, 0, steps=32, max_sigma=8.0)
    b = blur_ig_raw(micro, image, 0, steps=64, max_sigma=8.0)
    ma = normalize_attribution(np.abs(a).max(axis=-1))
    mb = normalize_attribution(np.abs(b).max(axis=-1))
    assert ssim(ma, mb, SsimParams()) > 0.9


# ---------------------------------------------------------------------------
# guided IG


def test_guided_ig_fraction_one_equals_ig():
    model64 = MicroModel(seed=3, dtype=np.float64)
    x = np.random.default_rng(11).random((32, 32, 3))
    a = guided_ig_raw(model64, x, 1, steps=16, fraction=1.0)
    b = integrated_gradients_raw(model64, x, 1, steps=16)
    assert np.abs(a - b).max() < 1e-6


def test_guided_ig_completeness(micro, image):
    target = 0
    raw = guided_ig_raw(micro, image, target, steps=128, fraction=0.25)
    fx = micro.graph().forward(image[None], requires_input_grad=False).data[0, target]
    f0 = micro.graph().forward(np.zeros_like(image)[None], requires_input_grad=False).data[0, target]
    gap = float(fx - f0)
    assert abs(raw.sum() - gap) < 0.02 * abs(gap)


def test_guided_ig_path_l1_monotone(micro, image):
    trace = []
    guided_ig_raw(micro, image, 0, steps=24, fraction=0.25, trace=trace)
    l1 = np.asarray(trace)
    assert np.all(np.diff(l1) >= -1e-9)
    total = np.abs(image.astype(np.float64)).sum()
    assert abs(l1[-1] - total) < 1e-6 * total


# ---------------------------------------------------------------------------
# CAM family


def test_gradcam_zero_gradients_degenerate(image):
    model = MicroModel(seed=3)
    state = model.state()
    state["dense_w"] = np.zeros_like(state["dense_w"])
    model.load_state(state)
    out = gradcam(model, image, 0)
    assert np.all(out.values == 0.5)


def test_gradcam_uniform_gradient_collapses_to_activation():
    rng = np.random.default_rng(12)
    kernel = rng.normal(size=(3, 3, 1, 1)).astype(np.float32)
    model = ActivationSumModel(kernel, input_shape=(8, 8, 1))
    x = rng.random((8, 8, 1)).astype(np.float32)
    out = gradcam(model, x, 0)

    g = model.graph()
    g.forward(x[None], requires_input_grad=False)
    acts = g.activation("feat").data[0, :, :, 0]
    expect = normalize_attribution(np.maximum(acts, 0.0))
    assert np.abs(out.values - expect).max() < 1e-6


@pytest.mark.parametrize("side", [32, 64])
def test_cam_upsampled_to_input_shape(side):
    model = MicroModel(seed=1, input_side=side)
    x = np.random.default_rng(13).random((side, side, 3)).astype(np.float32)
    for fn in (gradcam, gradcam_pp):
        out = fn(model, x, 0)
        assert out.values.shape == (side, side)
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0


def test_gradcam_rejects_model_without_conv(image):
    model = LinearModel(np.zeros((32 * 32 * 3, 3)), input_shape=(32, 32, 3))
    with pytest.raises(UnsupportedMethodError):
        gradcam(model, image, 0)


def test_gradcam_pp_zero_gradients_degenerate(image):
    model = MicroModel(seed=3)
    state = model.state()
    state["dense_w"] = np.zeros_like(state["dense_w"])
    model.load_state(state)
    assert np.all(gradcam_pp(model, image, 0).values == 0.5)


def test_gradcam_pp_argmax_matches_gradcam_under_constant_gradients():
    """Spatially constant positive activation gradients reduce the
    second-order weights to a positive rescaling of plain averaging, so
    the argmax location must agree with gradcam."""
    rng = np.random.default_rng(14)
    kernel = rng.normal(size=(3, 3, 1, 1)).astype(np.float32)
    model = ActivationSumModel(kernel, input_shape=(8, 8, 1))
    for seed in range(5):
        x = np.random.default_rng(20 + seed).random((8, 8, 1)).astype(np.float32)
        a = gradcam(model, x, 0)
        b = gradcam_pp(model, x, 0)
        assert np.unravel_index(a.values.argmax(), a.values.shape) == np.unravel_index(
            b.values.argmax(), b.values.shape
        )


# ---------------------------------------------------------------------------
# LIME


def test_ridge_fit_brute_force_indicator_oracle():
    """All 2^8 masks of 8 segments; target = indicator(segment s on)."""
    from cose.saliency import _ridge_fit

    n = 8
    masks = np.array([[(m >> b) & 1 for b in range(n)] for m in range(2**n)], dtype=np.float64)
    for s in (0, 3, 7):
        coef = _ridge_fit(masks, masks[:, s], lam=1.0)
        assert coef.argmax() == s
        others = np.delete(coef, s)
        assert coef[s] > others.max() + 1e-6


def test_lime_indicator_model_highlights_its_segment(micro):
    """End-to-end: a model reading one grid cell's mean brightness."""
    rng = np.random.default_rng(15)
    x = rng.random((32, 32, 3)).astype(np.float32) * 0.3
    from cose.saliency import _segment_grid

    seg = _segment_grid((32, 32), 8)
    s = 5
    x[seg == s] = 0.95  # bright cell; masking it to the (dark) mean changes the class-0 logit

    n_cell = int((seg == s).sum()) * 3
    w = np.zeros((32 * 32 * 3, 2))
    w[(seg == s).repeat(3).reshape(-1), 0] = 1.0 / n_cell  # keep logits O(1): no softmax saturation
    model = LinearModel(w, input_shape=(32, 32, 3))
    cfg = MethodConfig(lime_segments=8, lime_samples=128)
    out = lime(model, x, 0, cfg, np.random.default_rng(16))
    cell_means = [out.values[seg == i].mean() for i in range(8)]
    assert int(np.argmax(cell_means)) == s


def test_lime_constant_model_degenerates(image):
    model = LinearModel(np.zeros((32 * 32 * 3, 3)), input_shape=(32, 32, 3))
    out = lime(model, image, 0, MethodConfig(lime_segments=16, lime_samples=64), np.random.default_rng(0))
    assert np.all(out.values == 0.5)


def test_lime_reproducible_given_seed(micro, image):
    cfg = MethodConfig(lime_segments=16, lime_samples=64)
    a = lime(micro, image, 0, cfg, np.random.default_rng(21))
    b = lime(micro, image, 0, cfg, np.random.default_rng(21))
    assert np.array_equal(a.values, b.values)


def test_lime_degenerate_sampling_rejected(micro, image):
    masks = np.ones((32, 16))
    masks[:, :15] = np.random.default_rng(1).integers(0, 2, size=(32, 15))
    cfg = MethodConfig(lime_segments=16, lime_samples=32)
    with pytest.raises(DegenerateSamplingError, match="increase"):
        lime(micro, image, 0, cfg, masks=masks)


# ---------------------------------------------------------------------------
# registry and common wrapper


def test_registry_enumerates_methods(micro, image):
    assert set(sal.REFERENCE_METHODS) <= set(sal.method_names())
    with pytest.raises(UnsupportedMethodError):
        compute_map(micro, image, 0, "occlusion")


def test_all_methods_obey_map_invariants(micro, image):
    cfg = MethodConfig(
        ig_steps=8, blur_ig_steps=8, guided_ig_steps=8, smoothgrad_n=4, lime_segments=16, lime_samples=32
    )
    for name in sal.method_names():
        out = compute_map(micro, image, 1, name, cfg, np.random.default_rng(0))
        assert isinstance(out, SaliencyMap)
        assert out.values.shape == (32, 32)
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0
        assert out.target_class == 1


def test_methods_deterministic_given_seed(micro, image):
    cfg = MethodConfig(ig_steps=4, blur_ig_steps=4, guided_ig_steps=4, smoothgrad_n=2, lime_segments=16, lime_samples=32)
    for name in sal.method_names():
        a = compute_map(micro, image, 0, name, cfg, np.random.default_rng(5))
        b = compute_map(micro, image, 0, name, cfg, np.random.default_rng(5))
        assert np.array_equal(a.values, b.values), name


def test_register_custom_method(micro, image):
    def constant_method(model, image, target_class, config=None, rng=None):
        return SaliencyMap(np.full(np.asarray(image).shape[:2], 0.5, dtype=np.float32), "constant", target_class)

    sal.register_method("constant_mock", constant_method)
    try:
        out = compute_map(micro, image, 0, "constant_mock")
        assert np.all(out.values == 0.5)
    finally:
        del sal.REGISTRY["constant_mock"]
