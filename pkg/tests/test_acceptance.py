"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
The trend check (accuracy vs map-similarity correlation) is a soft gate:
its result is reported but does not fail the suite.
"""

import time

import numpy as np
import pytest

from cose import interchange, saliency
from cose.harness import RunConfig, emit_reports, export_maps, run_evaluation, score_external
from cose.metrics import SsimParams, consistency, cose, ssim, ssim_detailed
from cose.model import MicroModel
from cose.saliency import (
    SaliencyMap,
    guided_ig_raw,
    integrated_gradients_raw,
    vanilla_gradient,
)
from cose.toydata import generate_toy_dataset
from cose.transforms import TransformSpec, apply_transform, invert_on_map

from modelzoo import LinearModel, mirror_model_weights


def gate(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}  {detail}")
    assert ok, f"{name}: {detail}"


def soft_gate(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'SOFT-FAIL (reported, not gated)'}] {name}  {detail}")


# ---------------------------------------------------------------------------
# 1. SSIM oracle


def brute_force_windowed(a, b, params):
    """Independent window-loop oracle (centered statistics)."""
    w = params.window
    vals = []
    for i in range(a.shape[0] - w + 1):
        for j in range(a.shape[1] - w + 1):
            wa = a[i : i + w, j : j + w]
            wb = b[i : i + w, j : j + w]
            mu_a, mu_b = wa.mean(), wb.mean()
            var_a = ((wa - mu_a) ** 2).mean()
            var_b = ((wb - mu_b) ** 2).mean()
            cov = ((wa - mu_a) * (wb - mu_b)).mean()
            vals.append(
                ((2 * mu_a * mu_b + params.c1) * (2 * cov + params.c2))
                / ((mu_a**2 + mu_b**2 + params.c1) * (var_a + var_b + params.c2))
            )
    return min(1.0, max(0.0, float(np.mean(vals))))


def test_acceptance_ssim_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    params = SsimParams()
    worst = 0.0
    for _ in range(100):
        a = rng.random((64, 64))
        b = rng.random((64, 64))
        worst = max(worst, abs(ssim(a, b, params) - brute_force_windowed(a, b, params)))
    hand = 0.01 / 1.01
    global_err = abs(ssim(np.ones((32, 32)), np.zeros((32, 32)), SsimParams(mode="global")) - hand)
    elapsed = time.perf_counter() - t0
    gate(
        "SSIM oracle",
        worst < 1e-6 and global_err < 1e-6 and elapsed < 10.0,
        f"windowed max err {worst:.2e}, global err {global_err:.2e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. gradient correctness


def _fd_check(dtype, tol, h):
    model = MicroModel(seed=42, dtype=dtype)
    base64 = {k: v.astype(np.float64) for k, v in model.state().items()}
    oracle_model = MicroModel(seed=42, dtype=np.float64)
    oracle_model.load_state(base64)

    rng = np.random.default_rng(7)
    x = rng.random((32, 32, 3))
    proj = rng.normal(size=(1, model.num_classes))

    def f_input(z):
        return float(np.sum(proj * oracle_model.logits(z[None])))

    g = model.graph()
    g.forward(x.astype(dtype)[None])
    g.backward(proj.astype(dtype))
    grad_in = g.input_grad[0]

    worst = 0.0
    scale = np.abs(grad_in).max()
    for _ in range(60):
        i, j, c = rng.integers(0, 32), rng.integers(0, 32), rng.integers(0, 3)
        pert = x.copy()
        pert[i, j, c] += h
        fp = f_input(pert)
        pert[i, j, c] -= 2 * h
        fm = f_input(pert)
        d = (fp - fm) / (2 * h)
        worst = max(worst, abs(grad_in[i, j, c] - d) / max(abs(d), 1e-3 * scale))

    for name, tensor in model.params.items():
        analytic = g.grad_wrt(tensor)
        pscale = max(np.abs(analytic).max(), 1e-12)
        coords = [tuple(rng.integers(0, s) for s in tensor.shape) for _ in range(10)]
        for idx in coords:
            old = base64[name][idx]
            base64[name][idx] = old + h
            oracle_model.load_state(base64)
            fp = float(np.sum(proj * oracle_model.logits(x[None])))
            base64[name][idx] = old - h
            oracle_model.load_state(base64)
            fm = float(np.sum(proj * oracle_model.logits(x[None])))
            base64[name][idx] = old
            d = (fp - fm) / (2 * h)
            worst = max(worst, abs(analytic[idx] - d) / max(abs(d), 1e-3 * pscale))
    oracle_model.load_state(base64)
    return worst


def test_acceptance_gradient_correctness():
    # step 1e-4 keeps the central difference off relu kinks; the oracle
    # itself always runs in float64
    t0 = time.perf_counter()
    err32 = _fd_check(np.float32, 1e-3, h=1e-4)
    err64 = _fd_check(np.float64, 1e-6, h=1e-5)
    elapsed = time.perf_counter() - t0
    gate(
        "Gradient correctness",
        err32 < 1e-3 and err64 < 1e-6 and elapsed < 60.0,
        f"float32 max rel err {err32:.2e} (<1e-3), float64 {err64:.2e} (<1e-6), {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 3. integrated-gradients closed form


def test_acceptance_ig_closed_form():
    rng = np.random.default_rng(1)
    shape = (8, 8, 3)
    w = rng.normal(size=(int(np.prod(shape)), 4))
    model = LinearModel(w, input_shape=shape)
    x = rng.random(shape).astype(np.float32)
    expect = w[:, 2].reshape(shape) * x.astype(np.float64)
    worst_lin = max(
        float(np.abs(integrated_gradients_raw(model, x, 2, steps=s) - expect).max()) for s in (1, 16, 128)
    )

    # completeness on a well-conditioned case (the relative criterion is
    # meaningless when the logit gap is near zero)
    micro = MicroModel(seed=3)
    img = np.random.default_rng(11).random((32, 32, 3)).astype(np.float32)
    target = micro.predict(img)[0]
    fx = micro.graph().forward(img[None], requires_input_grad=False).data[0, target]
    f0 = micro.graph().forward(np.zeros_like(img)[None], requires_input_grad=False).data[0, target]
    gap = float(fx - f0)
    assert abs(gap) > 1.0, "conditioning guard"
    raw = integrated_gradients_raw(micro, img, target, steps=128)
    comp_err = abs(raw.sum() - gap) / abs(gap)

    micro64 = MicroModel(seed=3, dtype=np.float64)
    img64 = img.astype(np.float64)
    gig = guided_ig_raw(micro64, img64, target, steps=32, fraction=1.0)
    ig = integrated_gradients_raw(micro64, img64, target, steps=32)
    eq_err = float(np.abs(gig - ig).max())

    gate(
        "IG closed form",
        worst_lin < 1e-5 and comp_err < 0.01 and eq_err < 1e-6,
        f"linear err {worst_lin:.2e} (<1e-5), completeness {comp_err:.4f} (<0.01), "
        f"guided-vs-ig {eq_err:.2e} (<1e-6)",
    )


# ---------------------------------------------------------------------------
# 4. equivariance oracle


def test_acceptance_equivariance_oracle():
    # continuous-valued images: images with exactly constant patches hit
    # exact max-pool ties, and first-index tie-breaking is not
    # flip-equivariant (documented argmax rule)
    model = mirror_model_weights(MicroModel(seed=9))
    rng = np.random.default_rng(21)
    images = rng.random((20, 32, 32, 3)).astype(np.float32)
    spec = TransformSpec("flip_lr", 0)
    params = SsimParams()
    scores = []
    for x in images:
        pred, _ = model.predict(x)
        flipped = apply_transform(spec, x)
        pred_f, _ = model.predict(flipped)
        assert pred == pred_f, "symmetric model must preserve the argmax under flips"
        m = vanilla_gradient(model, x, pred)
        m_f = vanilla_gradient(model, flipped, pred_f)
        inverted, mask = invert_on_map(spec, m_f.values)
        scores.append(ssim_detailed(m.values, inverted, params, mask_b=mask).value)
    value = consistency(
        [
            _mk_record(f"img{i:04d}", s)
            for i, s in enumerate(scores)
        ]
    )
    gate("Equivariance oracle", abs(value - 1.0) < 1e-5, f"consistency {value:.8f} (=1 within 1e-5)")


def _mk_record(image_id, score):
    from cose.metrics import EvalRecord

    return EvalRecord(image_id, "flip_lr:0:+", "geometric", True, score, "vanilla_gradient")


# ---------------------------------------------------------------------------
# 5. degenerate-method audit


def test_acceptance_degenerate_method_audit():
    def constant_method(model, image, target_class, config=None, rng=None):
        return SaliencyMap(np.full(np.asarray(image).shape[:2], 0.5, np.float32), "constant_mock", target_class)

    saliency.register_method("constant_mock", constant_method)
    try:
        cfg = RunConfig(
            toy_n_per_class=20,
            epochs=2,
            checkpoint_epochs=(0,),
            n_eval_images=8,
            samples_per_image=4,
            methods=("constant_mock",),
            analyze_checkpoints=False,
            seed=0,
        )
        rep = run_evaluation(cfg).reports["constant_mock"]
        gate(
            "Degenerate-method audit",
            rep.consistency == 1.0 and rep.sensitivity == 0.0 and rep.cose == 0.0,
            f"consistency {rep.consistency}, sensitivity {rep.sensitivity}, COSE {rep.cose}%",
        )
    finally:
        del saliency.REGISTRY["constant_mock"]


# ---------------------------------------------------------------------------
# 6. metric algebra


def test_acceptance_metric_algebra():
    rng = np.random.default_rng(123)
    ok = True
    for _ in range(1000):
        c, s = rng.random(), rng.random()
        v = cose(c, s) / 100.0
        if not (min(c, s) - 1e-15 <= v <= max(c, s) + 1e-15):
            ok = False
            break
    fixed = all(cose(c, c) == c * 100.0 for c in rng.random(100))
    gate("Metric algebra", ok and fixed, "1000 random pairs bounded, COSE(c,c)=100c exact")


# ---------------------------------------------------------------------------
# 7 + 8. record conservation, determinism, and the soft trend gate


ACCEPT_CFG = dict(
    toy_n_per_class=100,
    epochs=30,
    checkpoint_epochs=(0, 1, 2, 5, 10, 20),
    n_eval_images=50,
    samples_per_image=10,
    methods=("vanilla_gradient", "gradcam", "integrated_gradients"),
    seed=0,
)


@pytest.fixture(scope="module")
def default_toy_runs(tmp_path_factory):
    t0 = time.perf_counter()
    runs, files = [], []
    for sub in ("run_a", "run_b"):
        run = run_evaluation(RunConfig(**ACCEPT_CFG))
        out = tmp_path_factory.mktemp(sub)
        files.append(emit_reports(run, out))
        runs.append(run)
    return runs, files, time.perf_counter() - t0


def test_acceptance_record_conservation_and_determinism(default_toy_runs):
    runs, files, elapsed = default_toy_runs
    ok = True
    details = []
    for m in ACCEPT_CFG["methods"]:
        rep = runs[0].reports[m]
        total = rep.n_consistent + rep.m_sensitive_transform
        ok &= total == 500
        details.append(f"{m}: {rep.n_consistent}+{rep.m_sensitive_transform}={total}")
    byte_identical = all(
        files[0][name].read_bytes() == files[1][name].read_bytes()
        for name in ("metrics", "records", "breakdowns", "correlation")
    )
    ok &= byte_identical and elapsed < 600.0
    gate(
        "Record conservation",
        ok,
        f"{'; '.join(details)}; byte-identical reports: {byte_identical}; {elapsed:.0f}s (<600s)",
    )


def test_acceptance_trend_soft_gate(default_toy_runs):
    runs, _, _ = default_toy_runs
    entry = runs[0].correlation.get("gradcam")
    if not entry:
        soft_gate("Accuracy-similarity trend", False, "no correlation data")
        return
    lines = []
    ok = True
    for variant in ("pooled", "epoch_means"):
        corr = entry["correlation"].get(variant)
        if hasattr(corr, "r"):
            lines.append(f"{variant}: r={corr.r:+.3f} p={corr.p_value:.2e} n={corr.n}")
            if variant == "pooled":
                ok = corr.r > 0 and corr.p_value < 0.05
        else:
            lines.append(f"{variant}: undefined ({corr})")
            ok = False
    soft_gate("Accuracy-similarity trend (gradcam)", ok, "; ".join(lines))


# ---------------------------------------------------------------------------
# 9. external-scoring equivalence


def test_acceptance_external_scoring_equivalence(tmp_path):
    cfg = RunConfig(
        toy_n_per_class=20,
        epochs=3,
        checkpoint_epochs=(0, 1),
        n_eval_images=8,
        samples_per_image=5,
        methods=("vanilla_gradient", "gradcam"),
        seed=0,
        out_dir=str(tmp_path / "run"),
    )
    internal, _ = export_maps(cfg)
    external = score_external(cfg, tmp_path / "run" / "maps")
    worst = 0.0
    for m in cfg.methods:
        a, b = internal.reports[m], external.reports[m]
        worst = max(
            worst,
            abs(a.consistency - b.consistency),
            abs(a.sensitivity - b.sensitivity),
            abs(a.cose - b.cose) / 100.0,
        )
    gate("External-scoring equivalence", worst <= 1e-9, f"max metric deviation {worst:.2e} (<=1e-9)")


# ---------------------------------------------------------------------------
# 10. interchange fuzzing


def test_acceptance_interchange_fuzzing():
    rng = np.random.default_rng(99)
    valid = interchange.dumps(
        {"m": rng.normal(size=(16, 16)).astype(np.float32)},
        {"image_id": "img0", "predictions": {"original": 1}},
    )
    crashes = 0
    for trial in range(10_000):
        kind = trial % 3
        if kind == 0:
            blob = rng.integers(0, 256, size=int(rng.integers(0, 160)), dtype=np.uint8).tobytes()
        elif kind == 1:
            blob = valid[: int(rng.integers(0, len(valid)))]
        else:
            mutated = bytearray(valid)
            for _ in range(int(rng.integers(1, 8))):
                mutated[int(rng.integers(0, len(mutated)))] = int(rng.integers(0, 256))
            blob = bytes(mutated)
        try:
            interchange.loads(blob)
        except interchange.ContainerError:
            pass
        except Exception:
            crashes += 1
    gate("Interchange fuzzing", crashes == 0, f"10000 streams, {crashes} crashes")
