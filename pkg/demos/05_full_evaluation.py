"""A complete desk-scale evaluation run: train, sample transforms,
compute maps, classify pairs as consistent or sensitive, aggregate into
consistency / sensitivity / COSE per method, and emit report files.

Equivalent CLI:
    cose evaluate --config cfg.json --out runs/demo
"""

import tempfile
from pathlib import Path

from cose.harness import RunConfig, emit_reports, run_evaluation

config = RunConfig(
    toy_n_per_class=60,
    epochs=12,
    checkpoint_epochs=(0, 2, 6),
    n_eval_images=12,
    samples_per_image=6,
    methods=("vanilla_gradient", "gradcam", "integrated_gradients", "lime"),
    seed=0,
)

run = run_evaluation(config)

print(f"{'method':24s} {'consistency':>11s} {'sensitivity':>11s} {'COSE':>8s} {'N':>4s} {'M':>4s}")
for name in sorted(run.reports):
    rep = run.reports[name]
    print(
        f"{name:24s} {rep.consistency:11.4f} {rep.sensitivity:11.4f} "
        f"{rep.cose:7.2f}% {rep.n_consistent:4d} {rep.m_sensitive:4d}"
    )

print("\naccuracy vs similarity-to-final (gradcam):")
entry = run.correlation["gradcam"]
for row in entry["rows"]:
    print(f"  epoch {row['epoch']:3d}  acc {row['accuracy']:.3f}  mean ssim {row['mean_ssim']:.3f}")
corr = entry["correlation"]["pooled"]
print(f"  pooled r={corr.r:+.3f} p={corr.p_value:.2e} significant: {corr.significant}")

with tempfile.TemporaryDirectory() as tmp:
    files = emit_reports(run, tmp)
    print("\nreport files:")
    for name, path in sorted(files.items()):
        print(f"  {name:12s} {Path(path).stat().st_size:6d} bytes")
    print("\nmetrics.tsv:")
    print(Path(files["metrics"]).read_text())
