import numpy as np
import pytest

from cose.model import (
    MicroModel,
    ModelCheckpoint,
    TrainConfig,
    TrainingDivergedError,
    accuracy,
    predict,
    train,
)
from cose.toydata import generate_toy_dataset


# ---------------------------------------------------------------------------
# toy dataset


def test_dataset_deterministic_given_seed():
    a = generate_toy_dataset(0, 10)
    b = generate_toy_dataset(0, 10)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
    c = generate_toy_dataset(1, 10)
    assert not np.array_equal(a.images, c.images)


def test_dataset_sizes_and_split():
    data = generate_toy_dataset(0, 100)
    assert data.images.shape == (300, 32, 32, 3)
    assert len(data.train_idx) == 240 and len(data.test_idx) == 60


def test_dataset_class_balance():
    data = generate_toy_dataset(3, 25)
    counts = np.bincount(data.labels)
    assert list(counts) == [25, 25, 25]


def test_split_disjoint_and_stratified():
    data = generate_toy_dataset(4, 10)
    assert not set(data.train_idx) & set(data.test_idx)
    for split in (data.train_idx, data.test_idx):
        assert set(data.labels[split]) == {0, 1, 2}


def test_dataset_range_and_dtype():
    data = generate_toy_dataset(5, 5)
    assert data.images.dtype == np.float32
    assert data.images.min() >= 0.0 and data.images.max() <= 1.0


def test_too_small_dataset_rejected():
    with pytest.raises(ValueError):
        generate_toy_dataset(0, 1)


# ---------------------------------------------------------------------------
# model basics


def test_probabilities_sum_to_one():
    model = MicroModel(seed=1)
    rng = np.random.default_rng(0)
    _, probs = model.predict(rng.random((32, 32, 3)).astype(np.float32))
    assert abs(probs.sum() - 1.0) < 1e-6
    assert np.all(probs >= 0) and np.all(probs <= 1)


def test_argmax_ties_break_to_lowest_index():
    model = MicroModel(seed=1)
    for t in model.params.values():
        t.data = np.zeros_like(t.data)  # uniform logits
    cls, probs = model.predict(np.random.default_rng(1).random((32, 32, 3)).astype(np.float32))
    assert cls == 0
    assert np.allclose(probs, 1.0 / 3.0, atol=1e-7)


def test_predict_shape_mismatch_rejected():
    model = MicroModel(seed=1)
    with pytest.raises(Exception):
        model.predict(np.zeros((16, 16, 3), dtype=np.float32))


# ---------------------------------------------------------------------------
# training


def test_epochs_zero_gives_untrained_checkpoint_at_chance(toy_data):
    model = MicroModel(seed=0)
    cps = train(model, toy_data, epochs=0, checkpoint_epochs=(0,))
    assert [cp.epoch for cp in cps] == [0]
    assert abs(cps[0].test_accuracy - 1.0 / 3.0) < 0.15


def test_default_run_reaches_accuracy_gate(trained_bundle, toy_data):
    model, cps = trained_bundle
    assert [cp.epoch for cp in cps] == [0, 1, 2, 5, 10, 20, 30]
    assert cps[-1].test_accuracy >= 0.90
    assert accuracy(model, *toy_data.test()) == cps[-1].test_accuracy


def test_accuracy_mostly_non_decreasing(trained_bundle):
    _, cps = trained_bundle
    accs = [cp.test_accuracy for cp in cps]
    pairs = list(zip(accs, accs[1:]))
    good = sum(1 for a, b in pairs if b >= a)
    assert good / len(pairs) >= 0.7


def test_training_reproducible():
    data = generate_toy_dataset(0, 20)
    states = []
    for _ in range(2):
        model = MicroModel(seed=0)
        train(model, data, epochs=3, checkpoint_epochs=(0,), cfg=TrainConfig(epochs=3))
        states.append(model.state())
    for name in states[0]:
        assert np.array_equal(states[0][name], states[1][name]), name


def test_divergence_aborts_with_diagnostic():
    data = generate_toy_dataset(0, 10)
    model = MicroModel(seed=0)
    with pytest.raises(TrainingDivergedError, match="non-finite"):
        train(model, data, epochs=10, checkpoint_epochs=(0,), cfg=TrainConfig(epochs=10, lr=1e12))


def test_bad_checkpoint_epochs_rejected(toy_data):
    model = MicroModel(seed=0)
    with pytest.raises(ValueError):
        train(model, toy_data, epochs=2, checkpoint_epochs=(0, 5))


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path, trained_bundle, toy_data):
    model, cps = trained_bundle
    final = cps[-1]
    path = tmp_path / "final.cose"
    final.save(path)
    loaded = ModelCheckpoint.load(path)
    assert loaded.epoch == final.epoch
    assert loaded.test_accuracy == final.test_accuracy
    for name in final.params:
        assert np.array_equal(loaded.params[name], final.params[name])

    restored = loaded.to_model()
    test_images, test_labels = toy_data.test()
    live_cls, live_probs = model.predict_batch(test_images[:50])
    rest_cls, rest_probs = restored.predict_batch(test_images[:50])
    assert np.array_equal(live_cls, rest_cls)
    assert np.array_equal(live_probs, rest_probs)
    assert accuracy(restored, test_images, test_labels) == final.test_accuracy


def test_restored_untrained_checkpoint_is_at_chance(trained_bundle, toy_data):
    _, cps = trained_bundle
    untrained = cps[0].to_model()
    assert abs(accuracy(untrained, *toy_data.test()) - cps[0].test_accuracy) == 0.0


def test_predict_dispatches_on_checkpoint(trained_bundle, toy_data):
    model, cps = trained_bundle
    img = toy_data.test()[0][0]
    cls_model, _ = predict(model, img)
    cls_cp, _ = predict(cps[-1], img)
    assert cls_model == cls_cp


def test_checkpoint_config_hash_consistent(trained_bundle):
    _, cps = trained_bundle
    hashes = {cp.config_hash for cp in cps}
    assert len(hashes) == 1 and len(hashes.pop()) == 16


def test_non_checkpoint_container_rejected(tmp_path):
    from cose import interchange

    path = tmp_path / "not_cp.cose"
    interchange.write(path, {"x": np.zeros(3, np.float32)}, {"kind": "maps"})
    with pytest.raises(ValueError, match="checkpoint"):
        ModelCheckpoint.load(path)
