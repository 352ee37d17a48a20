"""
Test cases for the loss, the training loop and checkpoints.
"""
import json
import math

import numpy as np
import pytest
import torch

from src.config import ClassWeighting, FreezePolicy, TrainConfig
from src.models import ClassLabel, TrainingHistory
from src.services.dataset_service import scan_dataset
from src.services.error_handler import (
    CheckpointFormatError,
    CheckpointVersionError,
    InputError,
    NotFoundError,
    TrainingDivergenceError,
)
from src.services.evaluation_service import build_report
from src.services.model_service import predict_proba
from src.services.preprocess_service import ArrayDataset, load_manifest_arrays
from src.services.training_service import (
    binary_cross_entropy,
    compute_class_weights,
    load_checkpoint,
    save_checkpoint,
    train,
)


def oracle_bce(y, p, w=None, eps=1e-7):
    total, weight_sum = 0.0, 0.0
    for i in range(len(y)):
        q = min(max(p[i], eps), 1 - eps)
        loss = -(y[i] * math.log(q) + (1 - y[i]) * math.log(1 - q))
        weight = 1.0 if w is None else w[i]
        total += weight * loss
        weight_sum += weight
    return total / weight_sum


@pytest.fixture
def synthetic_arrays(synthetic_dir, tiny_preprocess) -> ArrayDataset:
    return load_manifest_arrays(scan_dataset(synthetic_dir), tiny_preprocess)


class TestBinaryCrossEntropy:
    """Test the loss function."""

    def test_ln2_at_half(self):
        """Test the analytic value ln 2."""
        loss = binary_cross_entropy([1.0, 0.0], [0.5, 0.5])
        assert abs(float(loss) - math.log(2)) <= 1e-9

    def test_matches_scalar_oracle(self):
        """Test random inputs against a scalar loop."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            y = rng.integers(0, 2, size=n).astype(float)
            p = rng.uniform(0, 1, size=n)
            w = rng.uniform(0.1, 3.0, size=n)
            assert abs(float(binary_cross_entropy(y, p)) - oracle_bce(y, p)) <= 1e-9
            assert abs(float(binary_cross_entropy(y, p, w)) - oracle_bce(y, p, w)) <= 1e-9

    def test_integer_weights_equal_duplication(self):
        """Test weighting a sample by k equals repeating it k times."""
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(1, 20))
            y = rng.integers(0, 2, size=n).astype(float)
            p = rng.uniform(0.01, 0.99, size=n)
            k = rng.integers(1, 5, size=n)

            weighted = float(binary_cross_entropy(y, p, k.astype(float)))
            repeated = float(binary_cross_entropy(np.repeat(y, k), np.repeat(p, k)))
            assert abs(weighted - repeated) <= 1e-9

    def test_saturated_predictions_are_finite(self):
        """Test clamping at p = 0 and p = 1."""
        loss = binary_cross_entropy([1.0, 0.0], [0.0, 1.0])
        assert math.isfinite(float(loss))
        assert abs(float(loss) - (-math.log(1e-7))) <= 1e-6

    def test_length_mismatch(self):
        """Test unequal lengths are rejected."""
        with pytest.raises(InputError):
            binary_cross_entropy([1.0, 0.0], [0.5])

    def test_gradient_flows(self):
        """Test the loss is differentiable in the predictions."""
        p = torch.tensor([0.3, 0.8], dtype=torch.float64, requires_grad=True)
        binary_cross_entropy(torch.tensor([1.0, 0.0], dtype=torch.float64), p).backward()
        assert p.grad is not None and torch.all(p.grad != 0)


class TestClassWeights:
    """Test inverse-frequency class weights."""

    def test_published_counts(self):
        """Test weights for 903 Healthy and 2297 Unhealthy images."""
        weights = compute_class_weights({ClassLabel.HEALTHY: 903, ClassLabel.UNHEALTHY: 2297})
        assert weights[ClassLabel.HEALTHY] == pytest.approx(3200 / (2 * 903))
        assert weights[ClassLabel.UNHEALTHY] == pytest.approx(3200 / (2 * 2297))

    def test_balanced_counts(self):
        """Test equal classes get unit weights."""
        weights = compute_class_weights({ClassLabel.HEALTHY: 5, ClassLabel.UNHEALTHY: 5})
        assert weights == {ClassLabel.HEALTHY: 1.0, ClassLabel.UNHEALTHY: 1.0}

    def test_balanced_weights_equal_minority_duplication(self):
        """Test 2 Unhealthy vs 6 Healthy: weights 2 and 2/3 match tripling the minority."""
        weights = compute_class_weights({ClassLabel.HEALTHY: 6, ClassLabel.UNHEALTHY: 2})
        assert weights[ClassLabel.UNHEALTHY] == pytest.approx(2.0)
        assert weights[ClassLabel.HEALTHY] == pytest.approx(2.0 / 3.0)

        y = np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        p = np.array([0.7, 0.4, 0.2, 0.6, 0.1, 0.3, 0.5, 0.45])
        w = np.where(y == 1.0, weights[ClassLabel.UNHEALTHY], weights[ClassLabel.HEALTHY])
        copies = np.where(y == 1.0, 3, 1)

        weighted = float(binary_cross_entropy(y, p, w))
        duplicated = float(binary_cross_entropy(np.repeat(y, copies), np.repeat(p, copies)))
        assert abs(weighted - duplicated) <= 1e-6

    def test_missing_class(self):
        """Test a class with no samples."""
        with pytest.raises(InputError):
            compute_class_weights({ClassLabel.HEALTHY: 5, ClassLabel.UNHEALTHY: 0})


class TestTrainingLoop:
    """Test the epoch loop."""

    def test_frozen_backbone_does_not_move(self, tiny_model, synthetic_arrays):
        """Test that three steps with a frozen backbone change only the head."""
        backbone_before = torch.cat([p.detach().flatten().clone() for p in tiny_model.backbone.parameters()])
        head_before = torch.cat([p.detach().flatten().clone() for p in tiny_model.head.parameters()])
        config = TrainConfig(epochs=3, batch_size=len(synthetic_arrays), freeze_policy=FreezePolicy.FREEZE_BACKBONE)

        train(tiny_model, synthetic_arrays, synthetic_arrays, config)

        backbone_after = torch.cat([p.detach().flatten() for p in tiny_model.backbone.parameters()])
        head_after = torch.cat([p.detach().flatten() for p in tiny_model.head.parameters()])
        assert torch.equal(backbone_after, backbone_before)
        assert not torch.equal(head_after, head_before)

    def test_overfits_separable_synthetic_set(self, tiny_model, synthetic_arrays):
        """Test the smoke experiment: train accuracy of at least 0.95 within 20 epochs."""
        config = TrainConfig(epochs=20, batch_size=8, learning_rate=1e-3, freeze_policy=FreezePolicy.TRAIN_ALL, seed=0)

        _, history = train(tiny_model, synthetic_arrays, synthetic_arrays, config)

        assert len(history) == 20
        assert len(history.train_loss) == len(history.val_loss) == len(history.val_accuracy) == 20
        assert history.train_accuracy[-1] >= 0.95

    def test_history_accuracy_matches_evaluation(self, tiny_model, synthetic_arrays):
        """Test per-epoch accuracy against the evaluation module via the epoch callback."""
        seen = []

        def record(result):
            train_report = build_report(result.train_labels, result.train_scores)
            val_report = build_report(result.val_labels, result.val_scores)
            seen.append((train_report.accuracy, val_report.accuracy))

        _, history = train(tiny_model, synthetic_arrays, synthetic_arrays, TrainConfig(epochs=2, batch_size=8), record)

        assert [s[0] for s in seen] == pytest.approx(history.train_accuracy, abs=1e-12)
        assert [s[1] for s in seen] == pytest.approx(history.val_accuracy, abs=1e-12)

    def test_same_seed_same_history(self, tiny_backbone, tiny_head, tiny_preprocess, synthetic_arrays):
        """Test reproducible training."""
        from src.services.model_service import build_classifier

        histories = []
        for _ in range(2):
            torch.manual_seed(5)
            model = build_classifier(tiny_backbone, tiny_head, tiny_preprocess)
            _, history = train(model, synthetic_arrays, synthetic_arrays, TrainConfig(epochs=2, batch_size=8, seed=5))
            histories.append(history)

        assert histories[0] == histories[1]

    def test_balanced_class_weighting_runs(self, tiny_model, synthetic_arrays):
        """Test training with inverse-frequency sample weights."""
        config = TrainConfig(epochs=1, batch_size=8, class_weighting=ClassWeighting.BALANCED)
        _, history = train(tiny_model, synthetic_arrays, synthetic_arrays, config)
        assert len(history) == 1

    def test_divergence_is_reported(self, tiny_model, synthetic_arrays):
        """Test that a non-finite loss stops training with the epoch number."""
        with torch.no_grad():
            tiny_model.head.output.bias.fill_(float('nan'))
        with pytest.raises(TrainingDivergenceError) as excinfo:
            train(tiny_model, synthetic_arrays, synthetic_arrays, TrainConfig(epochs=2, batch_size=8))
        assert excinfo.value.epoch == 1

    def test_empty_validation_set(self, tiny_model, synthetic_arrays):
        """Test that validation data is required."""
        empty = ArrayDataset(np.zeros((0, 64, 64, 3), dtype=np.float32), np.zeros(0, dtype=np.int64))
        with pytest.raises(InputError):
            train(tiny_model, synthetic_arrays, empty, TrainConfig(epochs=1))


class TestCheckpoints:
    """Test checkpoint persistence."""

    def test_round_trip_predictions(self, tiny_model, synthetic_arrays, tmp_path):
        """Test a reloaded model predicts exactly like the saved one."""
        model, history = train(tiny_model, synthetic_arrays, synthetic_arrays, TrainConfig(epochs=1, batch_size=16))
        path = save_checkpoint(model, history, tmp_path / 'ckpt', metadata={'note': 'unit'})

        restored, restored_history = load_checkpoint(path)

        assert np.array_equal(predict_proba(restored, synthetic_arrays.images), predict_proba(model, synthetic_arrays.images))
        assert restored_history.train_loss == pytest.approx(history.train_loss, abs=1e-12)
        assert restored.backbone.spec == model.backbone.spec
        assert restored.head.config == model.head.config

    def test_sidecar_contents(self, tiny_model, tmp_path):
        """Test the sidecar names architecture, preprocessing and schema."""
        save_checkpoint(tiny_model, TrainingHistory(), tmp_path / 'ckpt')
        sidecar = json.loads((tmp_path / 'ckpt' / 'model.json').read_text())

        assert sidecar['schema_version'] == 1
        assert sidecar['backbone']['name'] == 'tiny_test_cnn'
        assert sidecar['feature_shape'] == [8, 8, 32]
        assert sidecar['preprocess']['target_height'] == 64

    def test_missing_checkpoint(self, tmp_path):
        """Test loading from nowhere."""
        with pytest.raises(NotFoundError):
            load_checkpoint(tmp_path / 'missing')

    def test_incompatible_version(self, tiny_model, tmp_path):
        """Test a sidecar from another schema version."""
        path = save_checkpoint(tiny_model, TrainingHistory(), tmp_path / 'ckpt')
        sidecar = json.loads((path / 'model.json').read_text())
        sidecar['schema_version'] = 99
        (path / 'model.json').write_text(json.dumps(sidecar))

        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_corrupt_weights(self, tiny_model, tmp_path):
        """Test truncated weight files."""
        path = save_checkpoint(tiny_model, TrainingHistory(), tmp_path / 'ckpt')
        (path / 'weights.pt').write_bytes(b'garbage')

        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)
