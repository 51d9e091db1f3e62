import json

import numpy as np
import pytest

from jam.embed_io import SynthConfig, split_dataset, synth_generate
from jam.errors import InvalidInput, NonFiniteLoss
from jam.losses import LossConfig, SimilarityConfig
from jam.nnet import AutoencoderConfig
from jam.trainer import (
    EarlyStopping,
    TrainConfig,
    evaluate,
    load_jam,
    save_jam,
    sweep_alpha,
    train,
    validate,
)


def tiny_cfg(objective="spread", epochs=10, **kw):
    kw.setdefault("batch_size", 8)
    kw.setdefault("validate_every", 5)
    kw.setdefault("lr0", 1e-3)
    kw.setdefault("loss_cfg", LossConfig(objective=objective))
    return TrainConfig(
        ae_cfg_vision=AutoencoderConfig(16, [12], 8, dropout=0.1),
        ae_cfg_language=AutoencoderConfig(20, [12], 8, dropout=0.1),
        epochs=epochs,
        **kw,
    )


@pytest.fixture(scope="module")
def tiny_data():
    ds, _, _ = synth_generate(SynthConfig(n=80, d_v=16, d_l=20, seed=7))
    return split_dataset(ds, seed=7)


class TestEarlyStopping:
    def test_hand_enumerated_trace(self):
        # scores 0.6, then six 0.7s: the second validation improves, the
        # next five do not, so the stop fires exactly at the 7th
        stopper = EarlyStopping(patience=5)
        outcomes = [stopper.update(s) for s in [0.6, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7]]
        assert [o[1] for o in outcomes] == [False, False, False, False, False, False, True]
        assert [o[0] for o in outcomes] == [True, True, False, False, False, False, False]

    def test_never_fires_before_patience_plus_one(self):
        stopper = EarlyStopping(patience=3)
        stops = [stopper.update(0.5)[1] for _ in range(4)]
        assert stops == [False, False, False, True]

    def test_tiny_improvement_not_counted(self):
        stopper = EarlyStopping(patience=2, min_delta=1e-6)
        stopper.update(0.5)
        improved, _ = stopper.update(0.5 + 1e-9)
        assert not improved


class TestTrain:
    def test_zero_epochs_returns_init(self, tiny_data):
        tr, va, _ = tiny_data
        model, history = train(tr, va, tiny_cfg(epochs=0), seed=5)
        assert history.epochs == []
        assert history.validations == []
        assert history.stop_reason == "completed"
        z = model.encode_vision(tr.images[:3])
        assert z.shape == (3, 8)

    def test_deterministic_given_seed(self, tiny_data):
        tr, va, _ = tiny_data
        m1, h1 = train(tr, va, tiny_cfg(), seed=42)
        m2, h2 = train(tr, va, tiny_cfg(), seed=42)
        assert json.dumps(h1.to_dict(), sort_keys=True) == json.dumps(h2.to_dict(), sort_keys=True)
        for k, v in m1.vision_ae.parameters().items():
            np.testing.assert_array_equal(v, m2.vision_ae.parameters()[k])
        assert m1.log_scale == m2.log_scale

    def test_different_seeds_differ(self, tiny_data):
        tr, va, _ = tiny_data
        _, h1 = train(tr, va, tiny_cfg(), seed=5)
        _, h2 = train(tr, va, tiny_cfg(), seed=42)
        assert h1.epochs[0]["total"] != h2.epochs[0]["total"]

    def test_history_schedule_endpoints(self, tiny_data):
        tr, va, _ = tiny_data
        _, history = train(tr, va, tiny_cfg(epochs=10), seed=5)
        assert history.epochs[0]["lambda"] == 1.0
        assert abs(history.epochs[-1]["lambda"] - 0.1) < 1e-15
        assert history.epochs[0]["lr"] == 1e-3
        assert abs(history.epochs[-1]["lr"] - 1e-5) < 1e-15

    def test_validations_at_multiples(self, tiny_data):
        tr, va, _ = tiny_data
        _, history = train(tr, va, tiny_cfg(epochs=10, validate_every=5), seed=5)
        assert [v["epoch"] for v in history.validations] == [5, 10]
        assert history.best_score == max(v["recall_binary"] for v in history.validations)

    def test_best_checkpoint_restored(self, tiny_data):
        tr, va, _ = tiny_data
        model, history = train(tr, va, tiny_cfg(epochs=10), seed=9)
        assert history.best_score is not None
        assert abs(validate(model, va) - history.best_score) < 1e-12

    def test_training_beats_untrained(self):
        # needs enough rows for the val recall to be a stable signal
        ds, _, _ = synth_generate(SynthConfig(n=600, d_v=16, d_l=20, seed=42))
        tr, va, _ = split_dataset(ds, seed=42)
        before, _ = train(tr, va, tiny_cfg(epochs=0), seed=42)
        after, history = train(tr, va, tiny_cfg(epochs=30, lr0=3e-3), seed=42)
        assert history.best_score > validate(before, va)

    def test_dim_mismatch_rejected(self, tiny_data):
        tr, va, _ = tiny_data
        cfg = tiny_cfg()
        cfg.ae_cfg_vision = AutoencoderConfig(99, [12], 8)
        with pytest.raises(InvalidInput):
            train(tr, va, cfg, seed=5)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
    def test_nonfinite_loss_aborts_with_salvage(self, tiny_data):
        tr, va, _ = tiny_data
        cfg = tiny_cfg(epochs=10, lr0=1e6)  # guaranteed blow-up
        with pytest.raises(NonFiniteLoss) as exc_info:
            train(tr, va, cfg, seed=5)
        err = exc_info.value
        assert err.history is not None
        assert err.history.stop_reason == "aborted_nonfinite"
        assert err.model is not None
        z = err.model.encode_vision(tr.images[:2])
        assert np.all(np.isfinite(z))

    def test_fixed_logit_scale_mode(self, tiny_data):
        tr, va, _ = tiny_data
        cfg = tiny_cfg(sim_cfg=SimilarityConfig(logit_scale_mode="fixed"))
        model, history = train(tr, va, cfg, seed=5)
        assert model.log_scale is None
        assert history.epochs[0]["logit_scale"] == 1 / 0.07

    def test_learnable_scale_stays_clamped(self, tiny_data):
        tr, va, _ = tiny_data
        model, _ = train(tr, va, tiny_cfg(epochs=5, lr0=0.05), seed=5)
        assert 0.0 <= model.log_scale <= np.log(100.0)

    def test_batch_size_too_small(self):
        with pytest.raises(InvalidInput):
            tiny_cfg(batch_size=1)


class TestValidateAndEvaluate:
    def test_self_retrieval_perfect(self, tiny_data):
        tr, va, _ = tiny_data
        model, _ = train(tr, va, tiny_cfg(epochs=0), seed=5)
        # feed the model's own vision latents as both text sides through an
        # identity-like check: positives = images domain requires matching
        # dims, so check determinism instead plus perfect case via evalkit
        score1 = validate(model, va)
        score2 = validate(model, va)
        assert score1 == score2

    def test_evaluate_seeded(self, tiny_data):
        tr, va, te = tiny_data
        model, _ = train(tr, va, tiny_cfg(epochs=5), seed=5)
        r1 = evaluate(model, te, seed=5)
        r2 = evaluate(model, te, seed=5)
        assert r1 == r2
        assert r1.n_queries == te.n


class TestSweep:
    def test_single_alpha_matches_plain_run(self, tiny_data):
        tr, va, _ = tiny_data
        cfg = tiny_cfg(epochs=10)
        report = sweep_alpha(tr, va, cfg, [0.5], seed=5)
        _, history = train(
            tr,
            va,
            tiny_cfg(epochs=10, loss_cfg=LossConfig(objective="spread", alpha=0.5)),
            seed=5,
        )
        assert len(report.entries) == 1
        assert report.entries[0].best_val_recall == history.best_score
        assert report.best_alpha == 0.5

    def test_three_alphas_structure(self, tiny_data):
        tr, va, _ = tiny_data
        report = sweep_alpha(tr, va, tiny_cfg(epochs=5), [0.0, 0.5, 1.0], seed=5)
        assert [e.alpha for e in report.entries] == [0.0, 0.5, 1.0]
        best = max(report.entries, key=lambda e: e.best_val_recall)
        assert report.best_alpha == best.alpha

    def test_empty_alphas_rejected(self, tiny_data):
        tr, va, _ = tiny_data
        with pytest.raises(InvalidInput):
            sweep_alpha(tr, va, tiny_cfg(), [], seed=5)

    def test_clear_fine_distinction_needs_some_contextnce(self):
        # with alpha=0 the image->text side only clusters contexts and never
        # separates the positive from its hard negative; when the fine
        # distinction is clearly learnable, a contextNCE weight wins the sweep
        ds, _, _ = synth_generate(
            SynthConfig(
                n=600, d_v=32, d_l=48, latent_dim=16, context_dims=12,
                fine_dims=4, noise_std=0.05, hard_delta=1.0, seed=13,
            )
        )
        tr, va, _ = split_dataset(ds, seed=13)
        cfg = TrainConfig(
            ae_cfg_vision=AutoencoderConfig(32, [64], 16, dropout=0.1),
            ae_cfg_language=AutoencoderConfig(48, [64], 16, dropout=0.1),
            epochs=50, batch_size=32, lr0=3e-3, validate_every=5,
            loss_cfg=LossConfig(
                objective="spread", include_positive_in_denominator=True
            ),
        )
        report = sweep_alpha(tr, va, cfg, [0.0, 0.75], seed=13)
        assert report.best_alpha != 0.0


class TestCheckpointRoundTrip:
    def test_save_load_preserves_model(self, tiny_data, tmp_path):
        tr, va, te = tiny_data
        cfg = tiny_cfg(epochs=5)
        model, _ = train(tr, va, cfg, seed=5)
        path = tmp_path / "model.jckp"
        save_jam(path, model, cfg, seed=5)
        loaded, meta = load_jam(path)
        assert meta["seed"] == 5
        np.testing.assert_array_equal(
            loaded.encode_vision(te.images), model.encode_vision(te.images)
        )
        np.testing.assert_array_equal(
            loaded.encode_language(te.positives), model.encode_language(te.positives)
        )
        assert loaded.log_scale == model.log_scale

    def test_checkpoint_bytes_deterministic(self, tiny_data, tmp_path):
        tr, va, _ = tiny_data
        cfg = tiny_cfg(epochs=5)
        for name in ("a", "b"):
            model, _ = train(tr, va, cfg, seed=42)
            save_jam(tmp_path / f"{name}.jckp", model, cfg, seed=42)
        assert (tmp_path / "a.jckp").read_bytes() == (tmp_path / "b.jckp").read_bytes()
