import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _gradcheck import ACTS, KINDS, build_case
from dnnfault import objectives
from dnnfault.detector import DeepLocalize, DetectorConfig, VerdictCode, make_verdict
from dnnfault.engine import Model, TrainConfig, fit, predict
from dnnfault.errors import ContractError, ShapeError
from dnnfault.layers import Activation, Dense, Dropout
from dnnfault.probes import TraceWriter
from dnnfault.tensor import Rng
from dnnfault.workbench.bench import XOR_SPEC
from dnnfault.workbench.data import xor
from dnnfault.workbench.spec import parse_model_spec


class Collect:
    def __init__(self):
        self.snaps = []

    def on_batch_end(self, snapshot):
        self.snaps.append(snapshot)


class StopAt:
    def __init__(self, t):
        self.t = t

    def on_batch_end(self, snapshot):
        if snapshot.global_iteration == self.t:
            return make_verdict(VerdictCode.MDL, None, snapshot, 0.0, "test stop")
        return None


def reference_fit(model, x, y, config):
    """Plain loop with no instrumentation, no shuffling and no dropout."""
    n = x.shape[0]
    for _ in range(config.epochs):
        for start in range(0, n, config.batch_size):
            out = x[start:start + config.batch_size]
            yb = y[start:start + config.batch_size]
            for layer in model.layers:
                out = layer.forward(out, True, None)
            layers = model.layers
            if model._fused_tail():
                dy = objectives.fused_output_grad(model.loss, model._fused_tail(), out, yb)
                layers = layers[:-1]
            else:
                dy = objectives.loss_grad(model.loss, out, yb)
            for layer in reversed(layers):
                dy, _, _ = layer.backward(dy, model.optimizer)


def small_regressor(seed=0, lr=0.05):
    return Model.build([Dense(3), Activation("tanh"), Dense(1)], (2,), "mse", objectives.SGD(lr), "none", seed)


def regression_data(n=10):
    rng = Rng(5)
    x = rng.normal((n, 2))
    return x, x[:, :1] - 0.5 * x[:, 1:]


def test_xor_trains_to_cm_and_predicts():
    model, config = parse_model_spec(XOR_SPEC)
    ds = xor()
    outcome = fit(model, ds.x, ds.y, config, [DeepLocalize()])
    assert outcome.verdict.code is VerdictCode.CM
    assert outcome.final_accuracy == 1.0
    assert outcome.batches_executed == config.epochs
    pred = predict(model, ds.x)[:, 0]
    assert np.all((pred > 0.5) == (ds.y[:, 0] == 1.0))


def test_probe_transparency_against_reference_loop():
    ds = xor()
    spec = dict(XOR_SPEC, fit={"batch_size": 4, "epochs": 300})
    plain, cfg = parse_model_spec(spec)
    probed, _ = parse_model_spec(spec)
    ref, _ = parse_model_spec(spec)
    fit(plain, ds.x, ds.y, cfg)
    fit(probed, ds.x, ds.y, cfg, [DeepLocalize(), TraceWriter(io.StringIO())])
    reference_fit(ref, ds.x, ds.y, cfg)
    for a, b, c in zip(plain.weights(), probed.weights(), ref.weights()):
        for pa, pb, pc in zip(a, b, c):
            assert pa.tobytes() == pb.tobytes() == pc.tobytes()


def test_early_termination_emits_t_plus_one_snapshots():
    x, y = regression_data()
    before, after = Collect(), Collect()
    outcome = fit(small_regressor(), x, y, TrainConfig(batch_size=3, epochs=5), [before, StopAt(6), after])
    assert outcome.verdict.iteration == 6
    assert outcome.batches_executed == 7
    assert [s.global_iteration for s in before.snaps] == list(range(7))
    # observers after the one that fired never see the stopping batch
    assert [s.global_iteration for s in after.snaps] == list(range(6))


def test_cm_runs_every_batch_with_short_last_batch():
    x, y = regression_data(10)
    seen = Collect()
    model = small_regressor()
    outcome = fit(model, x, y, TrainConfig(batch_size=3, epochs=2), [seen])
    assert outcome.verdict.code is VerdictCode.CM
    assert outcome.batches_executed == 2 * math.ceil(10 / 3)
    assert [s.global_iteration for s in seen.snaps] == list(range(8))
    assert [(s.epoch, s.batch) for s in seen.snaps[:4]] == [(0, 0), (0, 1), (0, 2), (0, 3)]
    sizes = [s.forward[0].pre_activation.shape[0] for s in seen.snaps[:4]]
    assert sizes == [3, 3, 3, 1]
    last = seen.snaps[3]
    out = last.forward[-1].post_activation
    assert last.loss == pytest.approx(float(np.mean((out - y[9:]) ** 2)), rel=1e-12)
    assert len(outcome.epoch_loss) == 2


def test_snapshot_layout_matches_model():
    x, y = regression_data()
    seen = Collect()
    model = small_regressor()
    fit(model, x, y, TrainConfig(batch_size=5, epochs=1), [seen])
    snap = seen.snaps[-1]
    assert [r.user_index for r in snap.forward] == [1, 2]
    assert [r.user_index for r in snap.backward] == [2, 1]
    assert snap.backward[1].updated_params_flat.size == 2 * 3 + 3
    # the last layer has no activation, so AF equals FW
    assert snap.forward[1].pre_activation.tobytes() == snap.forward[1].post_activation.tobytes()
    # post-update weights: kernel then bias of the final state
    w = model.weights()[1]
    assert snap.backward[0].updated_params_flat.tolist() == np.concatenate([w[0].ravel(), w[1].ravel()]).tolist()


def test_reproducible_with_shuffle_and_dropout():
    x, y = regression_data(12)

    def run():
        model = Model.build([Dense(4), Activation("relu"), Dropout(0.3), Dense(1)], (2,), "mse",
                            objectives.Adam(0.01), "none", 3)
        out = fit(model, x, y, TrainConfig(batch_size=5, epochs=4, shuffle=True, seed=11), [Collect()])
        return out, model.weights()

    (o1, w1), (o2, w2) = run(), run()
    assert o1.epoch_loss == o2.epoch_loss
    assert all(a.tobytes() == b.tobytes() for l1, l2 in zip(w1, w2) for a, b in zip(l1, l2))


def test_single_observer_finish_is_used():
    x, y = regression_data()
    det = DeepLocalize(DetectorConfig())
    outcome = fit(small_regressor(), x, y, TrainConfig(batch_size=5, epochs=1), [det])
    assert outcome.verdict.code is VerdictCode.CM and outcome.verdict.iteration == 1
    assert det.config.total_iterations == 2


def test_no_observer_gives_plain_cm():
    x, y = regression_data()
    outcome = fit(small_regressor(), x, y, TrainConfig(batch_size=5, epochs=1))
    assert outcome.verdict.code is VerdictCode.CM and outcome.verdict.iteration is None
    assert outcome.elapsed_seconds > 0


def test_input_scale_multiplies_inputs():
    x, y = regression_data()
    a, b = Collect(), Collect()
    fit(small_regressor(), x, y, TrainConfig(batch_size=10, epochs=1, input_scale=4.0), [a])
    fit(small_regressor(), 4.0 * x, y, TrainConfig(batch_size=10, epochs=1), [b])
    assert a.snaps[0].loss == b.snaps[0].loss


def test_empty_batch_is_contract_error():
    model = small_regressor()
    with pytest.raises(ContractError):
        predict(model, np.zeros((0, 2)))
    with pytest.raises(ContractError):
        fit(model, np.zeros((0, 2)), np.zeros((0, 1)), TrainConfig(batch_size=1))


@pytest.mark.parametrize("x_shape,y_shape", [((4, 3), (4, 1)), ((4, 2), (3, 1)), ((4, 2), (4, 2))])
def test_shape_mismatches(x_shape, y_shape):
    with pytest.raises(ShapeError):
        fit(small_regressor(), np.zeros(x_shape), np.zeros(y_shape), TrainConfig(batch_size=1))


def test_batch_larger_than_dataset():
    x, y = regression_data(4)
    with pytest.raises(ContractError):
        fit(small_regressor(), x, y, TrainConfig(batch_size=5))


@pytest.mark.parametrize("kwargs", [{"batch_size": 0}, {"epochs": 0}, {"input_scale": 0.0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ContractError):
        TrainConfig(**kwargs)


def test_model_needs_a_parameterized_layer():
    with pytest.raises(ContractError):
        Model.build([Dropout(0.5)], (3,), "mse", objectives.SGD(), "none")


def test_dropout_only_predict_is_identity():
    layer = Dropout(0.5)
    layer.build((3,), Rng(0))
    model = Model([layer], "mse", None, "none", (3,))
    x = Rng(1).normal((5, 3))
    assert predict(model, x).tobytes() == x.tobytes()


@settings(max_examples=30)
@given(st.sampled_from(KINDS), st.sampled_from(ACTS), st.integers(0, 50))
def test_snapshots_are_well_formed_for_random_models(kind, act, seed):
    loss = "categorical_crossentropy" if act == "softmax" else "mse"
    model, x, y = build_case(kind, act, loss, seed)
    model.optimizer = objectives.SGD(0.01)
    seen = Collect()
    fit(model, x, y, TrainConfig(batch_size=x.shape[0], epochs=2), [seen])
    params = len(model.parameterized)
    for i, snap in enumerate(seen.snaps):
        assert snap.global_iteration == i
        assert [r.user_index for r in snap.forward] == list(range(1, params + 1))
        assert [r.user_index for r in snap.backward] == list(range(params, 0, -1))
        for rec, layer in zip(snap.backward, reversed(model.parameterized)):
            assert rec.updated_params_flat.size == sum(p.size for p in layer.params)
            assert rec.delta_params_flat.size == rec.updated_params_flat.size
