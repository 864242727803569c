import json
import random

import numpy as np
import pytest

from pipelines.distill import DistillConfig, StudentScorer, distill_train, load_distillation_set


def blended_captions(n, seed=3):
    """Captions whose target is the fraction of visually-loaded words."""
    rng = random.Random(seed)
    loaded = ["tiger", "garden", "river", "stone", "window", "harbor"]
    bland = ["idea", "notion", "concept", "theory", "belief", "reason"]
    pairs = []
    for _ in range(n):
        k = rng.randint(3, 8)
        n_loaded = rng.randint(0, k)
        words = rng.choices(loaded, k=n_loaded) + rng.choices(bland, k=k - n_loaded)
        rng.shuffle(words)
        pairs.append((" ".join(words), n_loaded / k))
    return pairs


def test_constant_target_drives_mse_to_zero():
    result = distill_train([("a dog", 0.7), ("a cat", 0.7), ("a bird", 0.7)],
                           DistillConfig(epochs=200))
    assert result.train_mse_after < 1e-6


def test_scalar_output_per_caption():
    result = distill_train(blended_captions(50), DistillConfig(epochs=2))
    out = result.student.predict(["one", "two", "three"])
    assert out.shape == (3,)


def test_validation_mse_improves_on_synthetic_set():
    result = distill_train(blended_captions(1000), DistillConfig(epochs=20))
    assert result.val_mse_after < result.val_mse_before


def test_training_correlates_with_targets_at_scale():
    pairs = blended_captions(10_000, seed=9)
    result = distill_train(pairs, DistillConfig(epochs=10))
    captions = [c for c, _ in pairs]
    targets = np.array([t for _, t in pairs])
    predictions = result.student.predict(captions).numpy()
    pearson = np.corrcoef(predictions, targets)[0, 1]
    assert pearson > 0.5


def test_reads_emitted_set_with_metadata(tmp_path):
    path = tmp_path / "set.jsonl"
    rows = [{"caption": "a dog", "target": 0.9}, {"caption": "an idea", "target": 0.1}]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    (tmp_path / "set.jsonl.meta.json").write_text(
        json.dumps({"target_space": "logit", "score_name": "icc", "count": 2}),
        encoding="utf-8")
    captions, targets, meta = load_distillation_set(path)
    assert captions == ["a dog", "an idea"]
    assert targets == [0.9, 0.1]
    assert meta["target_space"] == "logit"

    result = distill_train(path, DistillConfig(epochs=1))
    assert result.target_space == "logit"
    assert result.student.target_space == "logit"


def test_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        distill_train([])
    with pytest.raises(ValueError):
        distill_train([("a", float("nan"))])


def test_student_save_load(tmp_path):
    result = distill_train(blended_captions(30), DistillConfig(epochs=2))
    path = tmp_path / "student.pt"
    result.student.save(path)
    loaded = StudentScorer.load(path)
    captions = ["tiger garden", "belief reason"]
    assert loaded.predict(captions).tolist() == result.student.predict(captions).tolist()
