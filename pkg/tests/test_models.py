import numpy as np
import pytest

from fedattr import models, oracles
from fedattr.models import LabeledBatch, ModelSpec


def random_batch(rng, spec, n=8):
    return LabeledBatch(
        rng.normal(size=(n, spec.input_dim)), rng.integers(0, spec.num_classes, n)
    )


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("mlp1", input_dim=2, num_classes=2, hidden_dim=0)
    with pytest.raises(ValueError):
        ModelSpec("logistic", input_dim=2, num_classes=2, hidden_dim=3)
    with pytest.raises(ValueError):
        ModelSpec("logistic", input_dim=2, num_classes=1)
    with pytest.raises(ValueError):
        ModelSpec("resnet", input_dim=2, num_classes=2)


def test_param_count():
    assert ModelSpec("logistic", input_dim=2, num_classes=2).param_count == 6
    assert (
        ModelSpec("mlp1", input_dim=3, num_classes=4, hidden_dim=5).param_count
        == 15 + 5 + 20 + 4
    )


def test_init_deterministic_and_biases_zero():
    spec = ModelSpec("logistic", input_dim=2, num_classes=2)
    a = models.init_params(spec, 7)
    b = models.init_params(spec, 7)
    assert np.array_equal(a, b)
    assert np.all(a[-2:] == 0.0)

    mspec = ModelSpec("mlp1", input_dim=3, num_classes=2, hidden_dim=4)
    p = models.init_params(mspec, 1)
    w1_end = 4 * 3
    assert np.all(p[w1_end : w1_end + 4] == 0.0)  # hidden biases
    assert np.all(p[-2:] == 0.0)  # output biases


def test_forward_uniform_at_zero_params():
    spec = ModelSpec("logistic", input_dim=3, num_classes=4)
    batch = random_batch(np.random.default_rng(0), spec, n=5)
    probs = models.forward(spec, np.zeros(spec.param_count), batch)
    assert np.allclose(probs, 0.25)


def test_forward_rows_sum_to_one():
    rng = np.random.default_rng(1)
    for spec in (
        ModelSpec("logistic", input_dim=4, num_classes=3),
        ModelSpec("mlp1", input_dim=4, num_classes=3, hidden_dim=6),
    ):
        params = rng.normal(size=spec.param_count)
        probs = models.forward(spec, params, random_batch(rng, spec, 20))
        assert np.all(probs >= 0)
        assert np.max(np.abs(probs.sum(axis=1) - 1.0)) <= 1e-9


def test_forward_hand_constructed_logistic():
    # weights favor class 1 on positive inputs: w0 = (-1, 0), w1 = (1, 0), b = 0
    spec = ModelSpec("logistic", input_dim=2, num_classes=2)
    params = np.array([-1.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    batch = LabeledBatch(np.array([[3.0, 0.5]]), np.array([1]))
    probs = models.forward(spec, params, batch)
    # logits are (-3, 3); direct computation of the softmax
    expect = np.exp(3.0) / (np.exp(3.0) + np.exp(-3.0))
    assert probs[0, 1] == pytest.approx(expect, abs=1e-12)
    assert probs[0].argmax() == 1


def test_forward_dimension_mismatch():
    spec = ModelSpec("logistic", input_dim=3, num_classes=2)
    batch = LabeledBatch(np.zeros((2, 2)), np.zeros(2, dtype=int))
    with pytest.raises(ValueError):
        models.forward(spec, np.zeros(spec.param_count), batch)


def test_loss_at_zero_params_is_log_c():
    for c in (2, 3, 7):
        spec = ModelSpec("logistic", input_dim=2, num_classes=c)
        batch = random_batch(np.random.default_rng(c), spec, 6)
        loss, _ = models.loss_and_grad(spec, np.zeros(spec.param_count), batch)
        assert loss == pytest.approx(np.log(c), abs=1e-12)


def test_loss_empty_batch_rejected():
    spec = ModelSpec("logistic", input_dim=2, num_classes=2)
    batch = LabeledBatch(np.zeros((0, 2)), np.zeros(0, dtype=int))
    with pytest.raises(ValueError):
        models.loss_and_grad(spec, np.zeros(spec.param_count), batch)
    with pytest.raises(ValueError):
        models.accuracy(spec, np.zeros(spec.param_count), batch)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    for trial in range(100):
        if trial % 2 == 0:
            spec = ModelSpec(
                "logistic",
                input_dim=int(rng.integers(2, 6)),
                num_classes=int(rng.integers(2, 5)),
            )
        else:
            spec = ModelSpec(
                "mlp1",
                input_dim=int(rng.integers(2, 5)),
                num_classes=int(rng.integers(2, 4)),
                hidden_dim=int(rng.integers(2, 6)),
            )
        params = rng.normal(size=spec.param_count)
        batch = random_batch(rng, spec, int(rng.integers(2, 10)))
        _, grad = models.loss_and_grad(spec, params, batch)
        fd = oracles.fd_gradient(
            lambda p: models.loss_and_grad(spec, p, batch)[0], params, 1e-5
        )
        scale = max(np.max(np.abs(fd)), 1e-8)
        assert np.max(np.abs(grad - fd)) / scale <= 1e-4


def test_loss_and_grad_mean_reduction_duplication_invariant():
    spec = ModelSpec("logistic", input_dim=3, num_classes=3)
    rng = np.random.default_rng(5)
    params = rng.normal(size=spec.param_count)
    batch = random_batch(rng, spec, 6)
    doubled = LabeledBatch(
        np.concatenate([batch.inputs, batch.inputs]),
        np.concatenate([batch.labels, batch.labels]),
    )
    l1, g1 = models.loss_and_grad(spec, params, batch)
    l2, g2 = models.loss_and_grad(spec, params, doubled)
    assert l1 == pytest.approx(l2, abs=1e-12)
    assert np.allclose(g1, g2, atol=1e-12)


def test_loss_and_grad_row_permutation_invariant():
    spec = ModelSpec("mlp1", input_dim=3, num_classes=3, hidden_dim=4)
    rng = np.random.default_rng(6)
    params = rng.normal(size=spec.param_count)
    batch = random_batch(rng, spec, 9)
    perm = rng.permutation(9)
    shuffled = LabeledBatch(batch.inputs[perm], batch.labels[perm])
    l1, g1 = models.loss_and_grad(spec, params, batch)
    l2, g2 = models.loss_and_grad(spec, params, shuffled)
    assert l1 == pytest.approx(l2, abs=1e-12)
    assert np.allclose(g1, g2, atol=1e-12)


def test_accuracy_perfect_separation():
    spec = ModelSpec("logistic", input_dim=2, num_classes=2)
    params = np.array([-1.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    batch = LabeledBatch(
        np.array([[2.0, 0.0], [-2.0, 1.0], [3.0, -1.0]]), np.array([1, 0, 1])
    )
    assert models.accuracy(spec, params, batch) == 1.0


def test_accuracy_tie_breaks_to_lowest_class():
    spec = ModelSpec("logistic", input_dim=2, num_classes=2)
    batch = LabeledBatch(np.random.default_rng(0).normal(size=(10, 2)), np.zeros(10, dtype=int))
    assert models.accuracy(spec, np.zeros(spec.param_count), batch) == 1.0


def test_accuracy_random_params_near_chance():
    spec = ModelSpec("logistic", input_dim=2, num_classes=4)
    rng = np.random.default_rng(9)
    batch = LabeledBatch(rng.normal(size=(4000, 2)), rng.integers(0, 4, 4000))
    acc = models.accuracy(spec, rng.normal(size=spec.param_count), batch)
    assert abs(acc - 0.25) <= 0.1


def test_sgd_rejects_bad_hyperparameters():
    spec = ModelSpec("logistic", input_dim=2, num_classes=2)
    batch = random_batch(np.random.default_rng(0), spec, 4)
    p = models.init_params(spec, 0)
    with pytest.raises(ValueError):
        models.sgd_train(spec, p, batch, epochs=0, batch_size=2, eta_w=0.1, seed=0)
    with pytest.raises(ValueError):
        models.sgd_train(spec, p, batch, epochs=1, batch_size=0, eta_w=0.1, seed=0)
    with pytest.raises(ValueError):
        models.sgd_train(spec, p, batch, epochs=1, batch_size=2, eta_w=-0.1, seed=0)


def test_sgd_single_full_batch_step_is_exact():
    spec = ModelSpec("logistic", input_dim=3, num_classes=3)
    rng = np.random.default_rng(3)
    params = rng.normal(size=spec.param_count)
    batch = random_batch(rng, spec, 7)
    _, grad = models.loss_and_grad(spec, params, batch)
    out = models.sgd_train(
        spec, params, batch, epochs=1, batch_size=100, eta_w=0.3, seed=11
    )
    assert np.array_equal(out, params - 0.3 * grad)


def test_sgd_deterministic_and_pure():
    spec = ModelSpec("mlp1", input_dim=2, num_classes=2, hidden_dim=3)
    rng = np.random.default_rng(4)
    params = rng.normal(size=spec.param_count)
    before = params.copy()
    batch = random_batch(rng, spec, 20)
    a = models.sgd_train(spec, params, batch, epochs=3, batch_size=4, eta_w=0.1, seed=5)
    b = models.sgd_train(spec, params, batch, epochs=3, batch_size=4, eta_w=0.1, seed=5)
    assert np.array_equal(a, b)
    assert np.array_equal(params, before)


def test_sgd_training_reduces_loss_on_separable_blobs():
    from fedattr.data import DatasetSpec, synthesize

    train, _ = synthesize(
        DatasetSpec("gaussian_blobs", 3, 2, 60, class_separation=6.0, noise_scale=1.0, seed=0)
    )
    spec = ModelSpec("logistic", input_dim=2, num_classes=3)
    params = models.init_params(spec, 1)
    loss0, _ = models.loss_and_grad(spec, params, train)
    trained = models.sgd_train(
        spec, params, train, epochs=50, batch_size=16, eta_w=0.2, seed=2
    )
    loss1, _ = models.loss_and_grad(spec, trained, train)
    assert loss1 < loss0


def test_param_codec_round_trip():
    rng = np.random.default_rng(8)
    vec = rng.normal(size=37)
    blob = models.params_to_bytes(vec)
    assert len(blob) == 8 + 8 * 37
    back = models.params_from_bytes(blob)
    assert np.array_equal(vec, back)
    with pytest.raises(ValueError):
        models.params_from_bytes(blob[:-1])


def test_batch_rejects_non_finite_and_mismatch():
    with pytest.raises(ValueError):
        LabeledBatch(np.array([[np.inf, 0.0]]), np.array([0]))
    with pytest.raises(ValueError):
        LabeledBatch(np.zeros((2, 2)), np.array([0]))
