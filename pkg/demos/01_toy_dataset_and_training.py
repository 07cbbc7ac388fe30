"""Train the desk-scale CNN on the synthetic shape dataset and inspect
its checkpoints.

The dataset is three classes of filled shapes (circle / square /
triangle) at random positions, scales and colors over textured noise
backgrounds.  Training uses plain SGD with momentum and the same
augmentation suite the evaluation applies, checkpointing at a log-ish
epoch schedule.
"""

import tempfile
from pathlib import Path

import numpy as np

from cose.model import MicroModel, ModelCheckpoint, TrainConfig, train
from cose.toydata import CLASS_NAMES, generate_toy_dataset

data = generate_toy_dataset(seed=0, n_per_class=100)
print(f"dataset: {data.images.shape[0]} images, "
      f"{len(data.train_idx)} train / {len(data.test_idx)} test, "
      f"classes {CLASS_NAMES}")
print(f"mean color: {np.round(data.mean_color, 3)}")

model = MicroModel(seed=0)
checkpoints = train(model, data, checkpoint_epochs=(0, 1, 2, 5, 10, 20), cfg=TrainConfig())

print("\nepoch  test accuracy")
for cp in checkpoints:
    bar = "#" * int(40 * cp.test_accuracy)
    print(f"{cp.epoch:5d}  {cp.test_accuracy:.3f}  {bar}")

# checkpoints round-trip bit-exactly through the container format
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "final.cose"
    checkpoints[-1].save(path)
    restored = ModelCheckpoint.load(path).to_model()
    test_images, _ = data.test()
    same = np.array_equal(model.predict_batch(test_images)[0], restored.predict_batch(test_images)[0])
    print(f"\nrestored checkpoint predicts identically: {same}")

image = data.test()[0][0]
cls, probs = model.predict(image)
print(f"sample prediction: {CLASS_NAMES[cls]}  probs {np.round(probs, 3)}")
