"""Interchange round trip: export every computed map to container files,
then re-score them through the external path and compare.

The exported containers are exactly what a foreign framework would
produce (see docs/container-format.md); `score-external` never touches
the model, only maps plus prediction metadata.

Equivalent CLI:
    cose export-maps --config cfg.json --out runs/demo
    cose score-external runs/demo/maps --config cfg.json --out runs/rescored
"""

import tempfile
from pathlib import Path

from cose.harness import RunConfig, export_maps, score_external
from cose.interchange import read as read_container

config = RunConfig(
    toy_n_per_class=40,
    epochs=8,
    checkpoint_epochs=(0, 2),
    n_eval_images=8,
    samples_per_image=5,
    methods=("vanilla_gradient", "gradcam"),
    seed=0,
)

with tempfile.TemporaryDirectory() as tmp:
    config = RunConfig(**{**config.to_dict(), "out_dir": tmp})
    internal, paths = export_maps(config)
    print(f"exported {len(paths)} containers")

    sample = paths[0]
    entries, meta = read_container(sample)
    print(f"\nsample container {Path(sample).name} ({meta['method']}):")
    for name, arr in list(entries.items())[:4]:
        print(f"  entry {name:16s} shape {arr.shape} dtype {arr.dtype}")
    print(f"  predictions: {dict(list(meta['predictions'].items())[:3])} ...")

    external = score_external(config, Path(tmp) / "maps")
    print(f"\n{'method':20s} {'internal COSE':>14s} {'external COSE':>14s} {'abs diff':>10s}")
    for m in sorted(internal.reports):
        a, b = internal.reports[m].cose, external.reports[m].cose
        print(f"{m:20s} {a:13.6f}% {b:13.6f}% {abs(a - b):10.2e}")
