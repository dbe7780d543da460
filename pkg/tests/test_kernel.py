"""Kernel checks: ops vs naive oracles, gradients vs finite differences,
metrics vs confusion counting, determinism of training and search."""

import math

import numpy as np
import pytest

from trinity_lite.errors import ValidationError
from trinity_lite.geo import TileKey
from trinity_lite.labels import LabelRaster
from trinity_lite.dataprep import Example
from trinity_lite.kernel import (
    AdamState,
    Checkpoint,
    Hyperparams,
    Lcg,
    ModelSpec,
    adam_step,
    automl_search,
    backward,
    build_model,
    derive_stream,
    evaluate,
    forward,
    load_checkpoint,
    loss_and_grad,
    parameter_count,
    save_checkpoint,
    softmax,
    train,
)
from trinity_lite.kernel.losses import ce_parts, evaluate_predictions
from trinity_lite.kernel.model import parameter_shapes
from trinity_lite.kernel.ops import (
    conv3x3_backward,
    conv3x3_forward,
    maxpool2_backward,
    maxpool2_forward,
    upsample2_backward,
    upsample2_forward,
)

IGNORE = 255


def rel_err(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


class TestRng:
    def test_sequence_is_deterministic(self):
        a, b = Lcg(42), Lcg(42)
        assert [a.next_uint64() for _ in range(5)] == [b.next_uint64() for _ in range(5)]

    def test_uniform_range(self):
        rng = Lcg(7)
        xs = [rng.uniform() for _ in range(1000)]
        assert all(0.0 <= x < 1.0 for x in xs)
        assert 0.3 < sum(xs) / len(xs) < 0.7

    def test_shuffle_is_permutation(self):
        items = list(range(100))
        rng = Lcg(3)
        shuffled = list(items)
        rng.shuffle(shuffled)
        assert sorted(shuffled) == items
        assert shuffled != items

    def test_derived_streams_differ(self):
        xs = [derive_stream(5, i).next_uint64() for i in range(10)]
        assert len(set(xs)) == 10


class TestOps:
    def test_conv3x3_matches_naive_loops(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 6, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = conv3x3_forward(x, w, b)
        want = np.zeros((4, 6, 6))
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        for co in range(4):
            for y in range(6):
                for xx in range(6):
                    acc = b[co]
                    for ci in range(3):
                        for ky in range(3):
                            for kx in range(3):
                                acc += w[co, ci, ky, kx] * xp[ci, y + ky, xx + kx]
                    want[co, y, xx] = acc
        assert rel_err(got, want) < 1e-10

    def test_conv3x3_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        upstream = rng.normal(size=(3, 4, 4))

        dx, dw, db = conv3x3_backward(x, w, upstream)

        def loss():
            return float((conv3x3_forward(x, w, b) * upstream).sum())

        for arr, grad in ((x, dx), (w, dw), (b, db)):
            flat, want = arr.reshape(-1), np.zeros(arr.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + 1e-3
                fp = loss()
                flat[i] = orig - 1e-3
                fm = loss()
                flat[i] = orig
                want[i] = (fp - fm) / 2e-3
            assert rel_err(grad.reshape(-1), want) < 1e-4

    def test_maxpool_picks_first_on_ties(self):
        x = np.zeros((1, 2, 2))
        out, idx = maxpool2_forward(x)
        assert out[0, 0, 0] == 0
        assert idx[0, 0, 0] == 0
        back = maxpool2_backward(np.ones((1, 1, 1)), idx, (1, 2, 2))
        assert back[0, 0, 0] == 1 and back.sum() == 1

    def test_maxpool_roundtrip_known_values(self):
        x = np.arange(16, dtype=float).reshape(1, 4, 4)
        out, idx = maxpool2_forward(x)
        assert np.array_equal(out[0], [[5, 7], [13, 15]])
        back = maxpool2_backward(out, idx, (1, 4, 4))
        assert back[0, 1, 1] == 5 and back[0, 3, 3] == 15 and back.sum() == out.sum()

    def test_upsample_adjoint(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 4, 4))
        y = rng.normal(size=(3, 8, 8))
        lhs = float((upsample2_forward(x) * y).sum())
        rhs = float((x * upsample2_backward(y)).sum())
        assert abs(lhs - rhs) < 1e-10


SMALL_SPEC = ModelSpec("unet_mini", 2, (("a", 2),))


def small_example(seed, h=8, w=8, tasks=((("a", 2)),)):
    rng = np.random.default_rng(seed)
    image = rng.normal(size=(2, h, w)).astype(np.float32)
    labels = (image[0] > 0).astype(np.uint8)[None, :, :]
    return Example(TileKey(seed % 100, seed % 100),
                   image, LabelRaster(TileKey(seed % 100, seed % 100), labels))


class TestModel:
    def test_logit_shapes(self):
        spec = ModelSpec("fcn_mini", 4, (("a", 2), ("b", 3)))
        params = build_model(spec, 0)
        logits = forward(spec, params, np.zeros((4, 16, 16), dtype=np.float32))
        assert logits["a"].shape == (2, 16, 16)
        assert logits["b"].shape == (3, 16, 16)

    def test_parameter_count_closed_form(self):
        spec = ModelSpec("fcn_mini", 4, (("a", 2),))
        expected = (
            (9 * 4 * 16 + 16) + (9 * 16 * 32 + 32) + (9 * 32 * 64 + 64)
            + (9 * 64 * 32 + 32) + (9 * 32 * 16 + 16) + (16 * 2 + 2))
        assert parameter_count(spec) == expected
        total = sum(p.size for p in build_model(spec, 1).values())
        assert total == expected

    def test_zero_weights_give_zero_logits(self):
        spec = ModelSpec("fcn_mini", 2, (("a", 2),))
        params = {k: np.zeros_like(v) for k, v in build_model(spec, 0).items()}
        logits = forward(spec, params, np.ones((2, 8, 8), dtype=np.float32))
        assert not logits["a"].any()

    def test_archs_share_params_differ_in_output(self):
        fcn = ModelSpec("fcn_mini", 2, (("a", 2),))
        unet = ModelSpec("unet_mini", 2, (("a", 2),))
        p1, p2 = build_model(fcn, 9), build_model(unet, 9)
        assert all(np.array_equal(p1[k], p2[k]) for k in p1)
        x = np.random.default_rng(3).normal(size=(2, 8, 8)).astype(np.float32)
        assert not np.allclose(forward(fcn, p1, x)["a"], forward(unet, p2, x)["a"])

    def test_unknown_architecture_rejected(self):
        with pytest.raises(ValidationError):
            ModelSpec("resnet", 2, (("a", 2),))

    def test_input_shape_mismatch_rejected(self):
        params = build_model(SMALL_SPEC, 0)
        with pytest.raises(ValidationError):
            forward(SMALL_SPEC, params, np.zeros((3, 8, 8)))

    @pytest.mark.parametrize("arch", ["fcn_mini", "unet_mini"])
    def test_gradcheck_sampled_parameters(self, arch):
        spec = ModelSpec(arch, 2, (("a", 2), ("b", 3)))
        params = {k: v.astype(np.float64) for k, v in build_model(spec, 11).items()}
        rng = np.random.default_rng(4)
        image = rng.normal(size=(2, 8, 8))
        labels = rng.integers(0, 2, size=(2, 8, 8)).astype(np.uint8)
        labels[0, 0] = IGNORE

        def run_loss():
            logits = forward(spec, params, image)
            loss, _ = loss_and_grad(logits, labels, spec.tasks)
            return loss

        logits, cache = forward(spec, params, image, want_cache=True)
        _, dlogits = loss_and_grad(logits, labels, spec.tasks)
        grads = backward(spec, params, cache, dlogits)

        # h=1e-3 first; when a ReLU/pool kink sits inside that stencil the
        # difference is polluted, so retry at h=1e-6 before judging
        for name, _ in parameter_shapes(spec):
            flat = params[name].reshape(-1)
            picks = rng.choice(flat.size, size=min(3, flat.size), replace=False)
            for i in picks:
                analytic = grads[name].reshape(-1)[i]
                errs = []
                for h in (1e-3, 1e-6):
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = run_loss()
                    flat[i] = orig - h
                    fm = run_loss()
                    flat[i] = orig
                    fd = (fp - fm) / (2 * h)
                    errs.append(rel_err(np.array([analytic]), np.array([fd])))
                    if errs[-1] < 1e-4:
                        break
                assert min(errs) < 1e-4, (name, i, errs)


class TestLoss:
    def test_uniform_logits_give_ln2(self):
        logits = {"a": np.zeros((2, 8, 8), dtype=np.float32)}
        labels = np.random.default_rng(0).integers(0, 2, (1, 8, 8)).astype(np.uint8)
        loss, grads = loss_and_grad(logits, labels, (("a", 2),))
        assert abs(loss - math.log(2)) < 1e-9

    def test_all_ignore_contributes_nothing(self):
        logits = {"a": np.random.default_rng(1).normal(size=(2, 8, 8))}
        labels = np.full((1, 8, 8), IGNORE, dtype=np.uint8)
        loss, grads = loss_and_grad(logits, labels, (("a", 2),))
        assert loss == 0.0
        assert not grads["a"].any()

    def test_loss_and_grad_match_scalar_oracle(self):
        rng = np.random.default_rng(2)
        logits = {"a": rng.normal(size=(3, 4, 4))}
        labels = rng.integers(0, 3, (1, 4, 4)).astype(np.uint8)
        labels[0, 1, 1] = IGNORE
        loss, grads = loss_and_grad(logits, labels, (("a", 3),))

        want_loss, want_grad = 0.0, np.zeros((3, 4, 4))
        n_valid = int((labels[0] != IGNORE).sum())
        for y in range(4):
            for x in range(4):
                if labels[0, y, x] == IGNORE:
                    continue
                z = logits["a"][:, y, x]
                p = np.exp(z - z.max())
                p /= p.sum()
                want_loss += -math.log(p[labels[0, y, x]]) / n_valid
                for c in range(3):
                    one = 1.0 if c == labels[0, y, x] else 0.0
                    want_grad[c, y, x] = (p[c] - one) / n_valid
        assert abs(loss - want_loss) < 1e-6
        assert rel_err(grads["a"], want_grad) < 1e-6

    def test_grad_matches_finite_differences_of_loss(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(2, 3, 3))
        labels = rng.integers(0, 2, (1, 3, 3)).astype(np.uint8)

        _, grads = loss_and_grad({"a": logits}, labels, (("a", 2),))
        flat = logits.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + 1e-5
            fp, _ = loss_and_grad({"a": logits}, labels, (("a", 2),))
            flat[i] = orig - 1e-5
            fm, _ = loss_and_grad({"a": logits}, labels, (("a", 2),))
            flat[i] = orig
            assert abs(grads["a"].reshape(-1)[i] - (fp - fm) / 2e-5) < 1e-5

    def test_softmax_shift_invariant_and_normalized(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(3, 5, 5))
        p = softmax(logits)
        assert np.allclose(p.sum(axis=0), 1.0, atol=1e-6)
        assert np.allclose(softmax(logits + 7.5), p, atol=1e-6)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        params = {"w": np.zeros(4, dtype=np.float32)}
        grads = {"w": np.ones(4, dtype=np.float32)}
        state = AdamState.for_params(params)
        hp = Hyperparams(epochs=1, learning_rate=1e-3)
        adam_step(params, grads, state, hp)
        assert np.allclose(params["w"], -1e-3 / (1 + 1e-8), atol=1e-9)

    def test_zero_grad_zero_state_no_change(self):
        params = {"w": np.full(3, 2.5, dtype=np.float32)}
        state = AdamState.for_params(params)
        adam_step(params, {"w": np.zeros(3, dtype=np.float32)}, state,
                  Hyperparams(epochs=1))
        assert np.array_equal(params["w"], np.full(3, 2.5, dtype=np.float32))

    def test_three_steps_match_hand_trace(self):
        # minimize f(x) = x^2 from x=1: g = 2x, hand-step the recurrences
        params = {"x": np.array([1.0])}
        state = AdamState.for_params(params)
        hp = Hyperparams(epochs=1, learning_rate=0.1)
        x, m, v = 1.0, 0.0, 0.0
        for t in range(1, 4):
            g = 2 * x
            adam_step(params, {"x": np.array([g])}, state, hp)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9 ** t)
            vh = v / (1 - 0.999 ** t)
            x = x - 0.1 * mh / (math.sqrt(vh) + 1e-8)
            assert abs(params["x"][0] - x) < 1e-12


class TestEvaluate:
    def test_perfect_prediction_scores_one(self):
        labels = np.random.default_rng(0).integers(0, 2, (1, 8, 8)).astype(np.uint8)
        logits = np.zeros((2, 8, 8))
        logits[1] = np.where(labels[0] == 1, 5.0, -5.0)
        rec = evaluate_predictions([({"a": logits}, labels)], (("a", 2),))
        m = rec.tasks["a"]
        assert (m["accuracy"], m["precision"], m["recall"], m["f1"]) == (1, 1, 1, 1)
        assert m["iou"] == [1.0, 1.0] and m["fiou"] == 1.0

    def test_disjoint_prediction_iou_zero(self):
        labels = np.zeros((1, 4, 4), dtype=np.uint8)
        labels[0, :2] = 1
        logits = np.zeros((2, 4, 4))
        logits[1, 2:] = 5.0          # predict 1 exactly where label is 0
        logits[0, :2] = 5.0
        rec = evaluate_predictions([({"a": logits}, labels)], (("a", 2),))
        assert rec.tasks["a"]["iou"][1] == 0.0

    def test_known_confusion_counts(self):
        # TP=50, FP=25, FN=25 on a 256-pixel raster
        labels = np.zeros((1, 16, 16), dtype=np.uint8)
        logits = np.zeros((2, 16, 16))
        flat_l = labels[0].reshape(-1)
        flat_p = logits[1].reshape(-1)
        flat_l[:50] = 1
        flat_p[:50] = 5.0          # TP
        flat_l[50:75] = 1          # FN (predicted 0)
        flat_p[75:100] = 5.0       # FP
        logits[0] = np.where(logits[1] == 0, 5.0, 0.0)
        rec = evaluate_predictions([({"a": logits}, labels)], (("a", 2),))
        m = rec.tasks["a"]
        assert abs(m["iou"][1] - 0.5) < 1e-12
        assert abs(m["precision"] - 2 / 3) < 1e-12
        assert abs(m["recall"] - 2 / 3) < 1e-12
        assert abs(m["f1"] - 2 / 3) < 1e-12

    def test_random_rasters_match_confusion_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            k = int(rng.integers(2, 5))
            labels = rng.integers(0, k, (1, 8, 8)).astype(np.uint8)
            labels[0][rng.random((8, 8)) < 0.2] = IGNORE
            logits = rng.normal(size=(k, 8, 8))
            rec = evaluate_predictions([({"a": logits}, labels)], (("a", k),))
            pred = logits.argmax(axis=0)
            tp = [0] * k
            fp = [0] * k
            fn = [0] * k
            nc = [0] * k
            correct = n = 0
            for y in range(8):
                for x in range(8):
                    t = labels[0, y, x]
                    if t == IGNORE:
                        continue
                    p = pred[y, x]
                    n += 1
                    nc[t] += 1
                    correct += t == p
                    for c in range(k):
                        tp[c] += (t == c) and (p == c)
                        fp[c] += (t != c) and (p == c)
                        fn[c] += (t == c) and (p != c)
            m = rec.tasks["a"]
            assert m["accuracy"] == correct / n
            for c in range(k):
                denom = tp[c] + fp[c] + fn[c]
                want = tp[c] / denom if denom else 1.0
                assert abs(m["iou"][c] - want) < 1e-12
            want_fiou = sum(nc[c] / n * m["iou"][c] for c in range(k))
            assert abs(m["fiou"] - want_fiou) < 1e-12

    def test_ignore_pixels_never_counted(self):
        labels = np.full((1, 4, 4), IGNORE, dtype=np.uint8)
        labels[0, 0, 0] = 1
        logits = np.zeros((2, 4, 4))
        logits[1] = 5.0
        rec = evaluate_predictions([({"a": logits}, labels)], (("a", 2),))
        assert rec.tasks["a"]["n_valid"] == 1
        assert rec.tasks["a"]["accuracy"] == 1.0


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        spec = ModelSpec("unet_mini", 2, (("a", 2),))
        params = build_model(spec, 5)
        state = AdamState.for_params(params)
        state.t = 7
        state.m = {k: np.random.default_rng(1).normal(size=v.shape).astype(np.float32)
                   for k, v in params.items()}
        ck = Checkpoint(spec, params, epoch=3,
                        metrics_snapshot={"total_loss": 0.5}, optimizer_state=state)
        path = str(tmp_path / "model.trnk")
        save_checkpoint(ck, path)
        loaded = load_checkpoint(path)
        assert loaded.epoch == 3
        assert loaded.spec == spec
        assert loaded.metrics_snapshot == {"total_loss": 0.5}
        assert loaded.optimizer_state.t == 7
        for k in params:
            assert loaded.params[k].tobytes() == params[k].tobytes()
            assert loaded.optimizer_state.m[k].tobytes() == state.m[k].tobytes()

    def test_forward_identical_after_reload(self, tmp_path):
        spec = ModelSpec("fcn_mini", 2, (("a", 2),))
        params = build_model(spec, 8)
        path = str(tmp_path / "m.trnk")
        save_checkpoint(Checkpoint(spec, params), path)
        loaded = load_checkpoint(path)
        x = np.random.default_rng(0).normal(size=(2, 8, 8)).astype(np.float32)
        assert np.array_equal(forward(spec, params, x)["a"],
                              forward(spec, loaded.params, x)["a"])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.trnk"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValidationError):
            load_checkpoint(str(path))


class TestTrain:
    def _examples(self, n, seed0=0):
        return [small_example(seed0 + i) for i in range(n)]

    def test_two_runs_identical(self):
        hp = Hyperparams(epochs=2, batch_size=2, init_seed=12)
        exs = self._examples(4)
        c1, h1 = train(exs[:3], exs[3:], SMALL_SPEC, hp)
        c2, h2 = train(exs[:3], exs[3:], SMALL_SPEC, hp)
        for k in c1.params:
            assert c1.params[k].tobytes() == c2.params[k].tobytes()
        assert [r.to_json() for r in h1] == [r.to_json() for r in h2]

    def test_loss_decreases_on_separable_task(self):
        hp = Hyperparams(epochs=6, batch_size=2, learning_rate=3e-3, init_seed=1)
        exs = self._examples(6)
        ckpt, history = train(exs[:4], exs[4:], SMALL_SPEC, hp)
        train_recs = [r for r in history if r.split == "train"]
        assert train_recs[-1].total_loss < train_recs[0].total_loss

    def test_warm_start_zero_epochs_keeps_metrics(self, tmp_path):
        hp = Hyperparams(epochs=2, batch_size=2, init_seed=3)
        exs = self._examples(4)
        ckpt, _ = train(exs[:3], exs[3:], SMALL_SPEC, hp)
        resumed, history = train(exs[:3], exs[3:], SMALL_SPEC,
                                 Hyperparams(epochs=0, init_seed=3),
                                 warm_start=ckpt)
        assert history == []
        assert resumed.metrics_snapshot == ckpt.metrics_snapshot
        for k in ckpt.params:
            assert resumed.params[k].tobytes() == ckpt.params[k].tobytes()

    def test_warm_start_continues_epoch_numbering(self):
        exs = self._examples(4)
        first, _ = train(exs[:3], exs[3:], SMALL_SPEC,
                         Hyperparams(epochs=2, batch_size=2, init_seed=3))
        more, history = train(exs[:3], exs[3:], SMALL_SPEC,
                              Hyperparams(epochs=1, batch_size=2, init_seed=3),
                              warm_start=first)
        assert first.epoch == 2
        assert more.epoch == 3
        assert history[0].epoch == 3

    def test_incompatible_warm_start_rejected(self):
        exs = self._examples(2)
        ckpt, _ = train(exs[:1], exs[1:], SMALL_SPEC,
                        Hyperparams(epochs=1, init_seed=0))
        other = ModelSpec("fcn_mini", 2, (("a", 2),))
        with pytest.raises(ValidationError):
            train(exs[:1], exs[1:], other, Hyperparams(epochs=1), warm_start=ckpt)

    def test_checkpoints_written_on_cadence(self, tmp_path):
        exs = self._examples(3)
        out = str(tmp_path / "run")
        train(exs[:2], exs[2:], SMALL_SPEC,
              Hyperparams(epochs=5, batch_size=2, init_seed=0),
              checkpoint_every=2, out_dir=out)
        import os
        names = sorted(p for p in os.listdir(out) if p.endswith(".trnk"))
        assert names == ["ckpt_0002.trnk", "ckpt_0004.trnk", "ckpt_0005.trnk"]
        assert os.path.exists(f"{out}/history.jsonl")


class TestAutoml:
    def _data(self):
        exs = [small_example(i) for i in range(4)]
        return exs[:3], exs[3:]

    def test_single_trial_wins(self):
        tr, va = self._data()
        hp, ckpt, table, best = automl_search(
            tr, va, SMALL_SPEC, {"learning_rate": (1e-3, 1e-2), "batch_size": [2]},
            n_trials=1, parallelism=1, seed=0, epochs=1)
        assert best == 0 and len(table) == 1

    def test_parallelism_does_not_change_results(self):
        tr, va = self._data()
        args = (tr, va, SMALL_SPEC,
                {"learning_rate": (1e-4, 1e-2), "batch_size": [1, 2]})
        r1 = automl_search(*args, n_trials=3, parallelism=1, seed=77, epochs=1)
        r4 = automl_search(*args, n_trials=3, parallelism=4, seed=77, epochs=1)
        assert r1[2] == r4[2]
        assert r1[3] == r4[3]
        for k in r1[1].params:
            assert r1[1].params[k].tobytes() == r4[1].params[k].tobytes()

    def test_winner_is_argmin_of_table(self):
        tr, va = self._data()
        _, _, table, best = automl_search(
            tr, va, SMALL_SPEC, {"learning_rate": (1e-4, 1e-2), "batch_size": [1, 2]},
            n_trials=3, parallelism=2, seed=5, epochs=1)
        losses = [row["final_val_loss"] for row in table]
        assert best == losses.index(min(losses))

    def test_empty_ranges_rejected(self):
        tr, va = self._data()
        with pytest.raises(ValidationError):
            automl_search(tr, va, SMALL_SPEC, {"learning_rate": (1e-3, 1e-2)},
                          n_trials=1, parallelism=1, seed=0, epochs=1)
