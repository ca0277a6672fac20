"""Adam, the training loop, checkpoint selection and evaluation."""

import numpy as np
import pytest

from convtransseg.checkpoint import load_checkpoint
from convtransseg.data import load_dataset
from convtransseg.errors import ConfigurationError, UsageError
from convtransseg.loss import LossConfig, combined_loss
from convtransseg.model import ModelConfig, SegModel
from convtransseg.nn import Parameter
from convtransseg.tensor import Tape, Tensor, backward
from convtransseg.train import Adam, evaluate_checkpoint, predict_labels, train

SMALL = ModelConfig(width=32, height=32, in_channels=1, classes=2, levels=3,
                    blocks=1, base_channels=8, downsample=2, dropout=0.1)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        p = Parameter(np.array([1.0, -2.0], dtype=np.float32))
        p.grad = np.zeros(2, dtype=np.float32)
        before = p.data.copy()
        Adam([("p", p)], lr=0.1).step()
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_hand_value(self):
        # g = 1 constant: after bias correction the first update is -lr / (1 + eps)
        p = Parameter(np.array([0.0], dtype=np.float32))
        p.grad = np.ones(1, dtype=np.float32)
        Adam([("p", p)], lr=1e-4).step()
        assert p.data[0] == pytest.approx(-1e-4, rel=1e-4)

    def test_quadratic_bowl_monotone_descent(self):
        w = Parameter(np.array([1.0], dtype=np.float64))
        adam = Adam([("w", w)], lr=1e-4)
        values = [1.0]
        for _ in range(100):
            w.grad = 2.0 * w.data  # d(w^2)/dw
            adam.step()
            values.append(abs(float(w.data[0])))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_missing_gradient_names_parameter(self):
        p = Parameter(np.zeros(3, dtype=np.float32))
        with pytest.raises(UsageError, match="encoder.conv.weight"):
            Adam([("encoder.conv.weight", p)]).step()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One short deterministic run shared by the persistence tests."""
    from convtransseg.data import synth_generate
    root = tmp_path_factory.mktemp("train")
    manifest = synth_generate(root / "data", count=16, size=32, classes=2, seed=11)
    train_s = load_dataset(manifest, "train")
    val_s = load_dataset(manifest, "val")
    model = SegModel(SMALL, seed=1)
    records, best = train(
        model, train_s, val_s, LossConfig(), epochs=2, batch_size=8, lr=1e-4,
        seed=1, out_dir=root / "run",
    )
    return manifest, records, best


class TestTrainLoop:
    def test_smoke_two_epochs(self, trained):
        _, records, best = trained
        assert len(records) == 2
        assert all(np.isfinite(r.val_loss) for r in records)
        assert best is not None

    def test_best_checkpoint_tracks_min_val_loss(self, trained):
        _, records, best = trained
        saved = [r for r in records if r.checkpoint]
        assert saved, "no checkpoint saved"
        running_best = float("inf")
        for r in records:
            if r.val_loss < running_best:
                running_best = r.val_loss
                assert r.checkpoint
            else:
                assert not r.checkpoint
        _, meta = load_checkpoint(best)
        assert meta.val_loss == min(r.val_loss for r in records)

    def test_lr_zero_leaves_parameters_unchanged(self, tiny_dataset, tmp_path):
        train_s = load_dataset(tiny_dataset, "train")
        val_s = load_dataset(tiny_dataset, "val")
        model = SegModel(SMALL, seed=2)
        before = {n: p.data.copy() for n, p in model.named_parameters()}
        train(model, train_s, val_s, LossConfig(), epochs=1, batch_size=8, lr=0.0,
              seed=2, out_dir=tmp_path)
        for n, p in model.named_parameters():
            np.testing.assert_array_equal(p.data, before[n])

    def test_loss_strictly_decreases_first_5_steps(self, tiny_dataset):
        from dataclasses import replace
        cfg = replace(SMALL, dropout=0.0)
        samples = load_dataset(tiny_dataset, "train")[:8]
        model = SegModel(cfg, seed=3)
        model.train()
        adam = Adam(model.named_parameters(), lr=1e-4)
        x = Tensor(np.stack([s.image for s in samples]))
        target = np.stack([s.mask for s in samples])
        losses = []
        for _ in range(6):
            with Tape() as tape:
                loss = combined_loss(model(x), target, LossConfig())
            losses.append(loss.item())
            backward(loss, tape)
            adam.step()
            model.zero_grad()
        assert all(b < a for a, b in zip(losses[:5], losses[1:6])), losses

    def test_two_runs_identical_records(self, tiny_dataset, tmp_path):
        train_s = load_dataset(tiny_dataset, "train")
        val_s = load_dataset(tiny_dataset, "val")

        def run(out):
            model = SegModel(SMALL, seed=5)
            records, _ = train(model, train_s, val_s, LossConfig(), epochs=2,
                               batch_size=8, lr=1e-4, seed=5, out_dir=tmp_path / out)
            return [(r.epoch, r.train_loss, r.val_loss, bool(r.checkpoint)) for r in records]

        assert run("a") == run("b")


class TestEvaluateCheckpoint:
    def test_reproduces_recorded_val_loss(self, trained):
        manifest, records, best = trained
        val_s = load_dataset(manifest, "val")
        _, meta = load_checkpoint(best)
        report, loss = evaluate_checkpoint(best, val_s, LossConfig(), batch_size=8)
        assert abs(loss - meta.val_loss) <= 1e-6
        assert len(report.entries) > 0

    def test_save_load_eval_bit_exact(self, trained):
        manifest, _, best = trained
        val_s = load_dataset(manifest, "val")
        model, _ = load_checkpoint(best)
        from convtransseg.train import prepare_samples
        samples = prepare_samples(val_s, model.config)
        model.eval()
        x = Tensor(np.stack([s.image for s in samples]))
        direct = model(x).data
        model2, _ = load_checkpoint(best)
        model2.eval()
        again = model2(x).data
        assert direct.tobytes() == again.tobytes()

    def test_argmax_labels_in_range(self, trained):
        manifest, _, best = trained
        model, _ = load_checkpoint(best)
        samples = load_dataset(manifest, "test")
        labels = predict_labels(model, samples)
        for lab in labels:
            assert lab.min() >= 0 and lab.max() < SMALL.classes

    def test_untrained_model_scores_low(self, tiny_dataset, tmp_path):
        from convtransseg.checkpoint import save_checkpoint
        model = SegModel(SMALL, seed=9)
        ckpt = tmp_path / "random.ckpt"
        save_checkpoint(ckpt, model, epoch=0, val_loss=1.0, seed=9)
        samples = load_dataset(tiny_dataset, "train")
        report, _ = evaluate_checkpoint(ckpt, samples, LossConfig())
        mean_dc, _ = report.dc_stats()
        assert mean_dc < 0.5

    def test_channel_mismatch_rejected(self, trained, tmp_path):
        _, _, best = trained
        from convtransseg.data import Sample
        bad = [Sample(image=np.zeros((3, 32, 32), dtype=np.float32),
                      mask=np.zeros((32, 32), dtype=np.int32), id="x")]
        with pytest.raises(ConfigurationError, match="channels"):
            evaluate_checkpoint(best, bad, LossConfig())
