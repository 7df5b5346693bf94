import math

import numpy as np
import pytest

from cpcmal.audio import PAD_VALUE, LogMelFrames, segment_5s
from cpcmal.cpc import (
    CpcBatch,
    CpcConfig,
    CpcModel,
    TrainSchedule,
    cpc_forward,
    extract_cpc_features,
    infonce_from_latents,
    infonce_loss,
    train_cpc,
)
from cpcmal.errors import InputError
from cpcmal.nn_core import grad_check
from cpcmal.synthetic import temporal_utterances

TOY = CpcConfig(in_dim=5, enc_dim=4, ctx_dim=4, n_steps=3, dropout=0.2)


def elu(x):
    return np.where(x > 0, x, np.exp(np.minimum(x, 0)) - 1)


def brute_force_infonce(model, frames, lengths):
    """Recompute every latent, context and softmax with explicit loops."""
    B, T, _ = frames.shape
    K = model.config.n_steps
    z = np.zeros((B, T, model.config.enc_dim))
    c = np.zeros((B, T, model.config.ctx_dim))
    H = model.config.ctx_dim
    sig = lambda v: 1 / (1 + np.exp(-v))
    g = model.gru
    for b in range(B):
        h = np.zeros(H)
        for t in range(T):
            v = frames[b, t]
            for layer in model.encoder:
                v = elu(v @ layer.weights + layer.bias)
            z[b, t] = v
            a = v @ g.w_input + g.bias
            u = sig(a[:H] + h @ g.w_hidden[:, :H])
            r = sig(a[H : 2 * H] + h @ g.w_hidden[:, H : 2 * H])
            n = np.tanh(a[2 * H :] + (r * h) @ g.w_hidden[:, 2 * H :])
            h = u * h + (1 - u) * n
            c[b, t] = h
    terms = []
    for k in range(1, K + 1):
        for b in range(B):
            for t in range(T - K):
                if t + K >= lengths[b]:
                    continue
                logits = [z[j, t + k] @ model.predictors[k - 1] @ c[b, t] for j in range(B)]
                f = [math.exp(s - max(logits)) for s in logits]
                terms.append(-math.log(f[b] / sum(f)))
    return sum(terms) / len(terms)


class TestInfoNce:
    @pytest.mark.parametrize("B", [2, 3, 4, 8])
    def test_uniform_scores_give_log_b(self, B, rng):
        model = CpcModel.init(TOY, rng)
        model.predictors[:] = 0.0
        batch = CpcBatch(rng.normal(size=(B, 10, 5)))
        assert infonce_loss(model, batch) == pytest.approx(math.log(B), abs=1e-15)

    def test_dominant_positive_goes_to_zero(self):
        B, T, K = 4, 6, 2
        z = np.zeros((B, T, B))
        for b in range(B):
            z[b, :, b] = 1.0
        preds = np.stack([np.eye(B)] * K)
        losses = [infonce_from_latents(z, z, s * preds, [T] * B) for s in (1, 5, 20, 60)]
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-20
        assert losses[0] == pytest.approx(math.log(1 + 3 * math.exp(-1)), rel=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        B = 2 + seed % 3
        cfg = CpcConfig(in_dim=4, enc_dim=4, ctx_dim=3, n_steps=3)
        model = CpcModel.init(cfg, rng)
        frames = rng.normal(size=(B, 12 + seed, 4))
        lengths = np.full(B, frames.shape[1])
        lengths[0] -= 3
        got = infonce_loss(model, CpcBatch(frames, lengths))
        assert got == pytest.approx(brute_force_infonce(model, frames, lengths), abs=1e-10)
        assert got >= 0

    def test_gradients(self, rng):
        model = CpcModel.init(TOY, rng)
        batch = CpcBatch(rng.normal(size=(2, 9, 5)), np.array([9, 7]))

        def closure():
            loss = model.loss_and_grads(batch, np.random.default_rng(5), train=True)
            return loss, model.grads()

        assert grad_check(closure, model.params(), 1e-5) < 1e-4

    def test_short_sequence_rejected(self, rng):
        model = CpcModel.init(TOY, rng)
        with pytest.raises(InputError):
            infonce_loss(model, CpcBatch(rng.normal(size=(2, 3, 5))))
        with pytest.raises(InputError):
            infonce_loss(model, CpcBatch(rng.normal(size=(1, 10, 5))))


class TestForward:
    def test_zero_model_gives_zero_latents(self, rng):
        model = CpcModel.init(TOY, rng)
        for p in model.params():
            p[...] = 0.0
        z, c = cpc_forward(model, CpcBatch(rng.normal(size=(3, 8, 5))))
        assert not z.any() and not c.any()

    def test_single_utterance_forward_allowed(self, rng):
        z, c = cpc_forward(CpcModel.init(TOY, rng), CpcBatch(rng.normal(size=(1, 8, 5))))
        assert z.shape == (1, 8, 4) and c.shape == (1, 8, 4)

    def test_context_is_causal(self, rng):
        model = CpcModel.init(TOY, rng)
        x = rng.normal(size=(2, 10, 5))
        _, c1 = cpc_forward(model, CpcBatch(x))
        x2 = x.copy()
        x2[:, 6] += 10.0
        z2, c2 = cpc_forward(model, CpcBatch(x2))
        np.testing.assert_array_equal(c1[:, :6], c2[:, :6])
        assert not np.allclose(c1[:, 6], c2[:, 6])


class TestFeatures:
    def test_single_frame(self, rng):
        model = CpcModel.init(CpcConfig(), rng)
        x = rng.normal(size=(1, 40))
        feat = extract_cpc_features(model, x)
        np.testing.assert_allclose(feat.vector, model.encode(x)[0])
        assert feat.vector.shape == (256,) and feat.kind == "cpc256"

    def test_padding_invariant(self, rng):
        model = CpcModel.init(CpcConfig(), rng)
        x = LogMelFrames(rng.normal(size=(130, 40)))
        a = extract_cpc_features(model, x).vector
        for length in (200, 500):
            padded = segment_5s(x, rng, length)
            assert padded.frames[-1, 0] == PAD_VALUE
            np.testing.assert_array_equal(extract_cpc_features(model, padded).vector, a)

    def test_constant_frames(self, rng):
        model = CpcModel.init(CpcConfig(), rng)
        frame = rng.normal(size=40)
        feat = extract_cpc_features(model, np.tile(frame, (25, 1))).vector
        np.testing.assert_allclose(feat, model.encode(frame[None])[0], atol=1e-14)

    def test_dropout_disabled(self, rng):
        model = CpcModel.init(CpcConfig(), rng)
        x = rng.normal(size=(20, 40))
        np.testing.assert_array_equal(extract_cpc_features(model, x).vector, extract_cpc_features(model, x).vector)

    def test_all_pad_rejected(self, rng):
        model = CpcModel.init(CpcConfig(), rng)
        with pytest.raises(InputError):
            extract_cpc_features(model, LogMelFrames(np.zeros((10, 40)), n_valid=0))


SMALL = CpcConfig(in_dim=40, enc_dim=32, ctx_dim=32, n_steps=12)


class TestTraining:
    def test_learns_below_chance_and_is_deterministic(self):
        corpus = temporal_utterances(n_utterances=40, n_frames=72, seed=3)
        sched = TrainSchedule(lr=3e-3, max_epochs=12, segment_frames=48)
        m1, h1 = train_cpc(corpus.utterances, sched, seed=11, config=SMALL)
        m2, h2 = train_cpc(corpus.utterances, sched, seed=11, config=SMALL)
        assert h1["val_loss"] == h2["val_loss"]
        assert h1["best_val_loss"] < math.log(8)
        assert h1["best_val_loss"] == min(h1["val_loss"])
        for a, b in zip(m1.params(), m2.params()):
            np.testing.assert_array_equal(a, b)

    def test_zero_patience_stops_after_first_non_improvement(self):
        corpus = temporal_utterances(n_utterances=20, n_frames=48, seed=1)
        sched = TrainSchedule(lr=0.0, stop_patience=0, max_epochs=50, segment_frames=24)
        _, hist = train_cpc(corpus.utterances, sched, seed=0, config=SMALL)
        assert len(hist["val_loss"]) == 2
        assert hist["val_loss"][0] == hist["val_loss"][1]

    def test_schedule_replay(self):
        corpus = temporal_utterances(n_utterances=20, n_frames=48, seed=1)
        sched = TrainSchedule(lr=0.05, lr_patience=1, stop_patience=4, max_epochs=40, segment_frames=24)
        _, hist = train_cpc(corpus.utterances, sched, seed=0, config=SMALL)
        # replay plateau/early-stop rules from the recorded validation curve
        lr, best, bad, plateau, expected_lr = 0.05, math.inf, 0, 0, []
        stopped_at = None
        for epoch, v in enumerate(hist["val_loss"]):
            expected_lr.append(lr)
            if v < best:
                best, bad, plateau = v, 0, 0
                continue
            bad += 1
            plateau += 1
            if bad > 4:
                stopped_at = epoch
                break
            if plateau > 1:
                lr *= 0.7
                plateau = 0
        assert hist["lr"] == pytest.approx(expected_lr, rel=1e-15)
        assert stopped_at in (None, len(hist["val_loss"]) - 1)
        assert min(hist["lr"]) < 0.05

    def test_too_few_utterances(self):
        with pytest.raises(InputError):
            train_cpc([np.zeros((50, 40))] * 9, config=SMALL)

    def test_checkpoint_roundtrip(self, tmp_path, rng):
        model = CpcModel.init(TOY, rng)
        model.save(tmp_path / "cpc.bin")
        loaded = CpcModel.load(tmp_path / "cpc.bin")
        assert loaded.config == TOY
        for a, b in zip(model.params(), loaded.params()):
            np.testing.assert_array_equal(a, b)
