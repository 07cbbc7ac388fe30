"""All reference saliency methods on one trained model and image,
rendered as coarse ASCII intensity maps.

Each method runs through the common registry signature, so this loop is
exactly how the harness enumerates methods.
"""

import numpy as np

from cose.model import MicroModel, TrainConfig, train
from cose.saliency import MethodConfig, compute_map, method_names
from cose.toydata import CLASS_NAMES, generate_toy_dataset

RAMP = " .:-=+*#%@"


def ascii_map(values, width=32):
    rows = []
    step = max(1, values.shape[0] // 16)
    for r in range(0, values.shape[0], step):
        row = values[r, ::step]
        rows.append("".join(RAMP[min(int(v * (len(RAMP) - 1)), len(RAMP) - 1)] for v in row))
    return rows


data = generate_toy_dataset(seed=0, n_per_class=60)
model = MicroModel(seed=0)
train(model, data, epochs=12, checkpoint_epochs=(0,), cfg=TrainConfig(epochs=12))

image = data.test()[0][0]
target, probs = model.predict(image)
print(f"explaining prediction: {CLASS_NAMES[target]} (p={probs[target]:.2f})\n")

cfg = MethodConfig(ig_steps=32, blur_ig_steps=32, guided_ig_steps=32, smoothgrad_n=12)
for name in method_names():
    rng = np.random.default_rng(0)
    smap = compute_map(model, image, target, name, cfg, rng)
    print(f"--- {name} (mass center: "
          f"{tuple(int(c) for c in np.unravel_index(smap.values.argmax(), smap.values.shape))})")
    for line in ascii_map(smap.values):
        print("   ", line)
    print()
