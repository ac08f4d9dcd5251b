import time

import numpy as np
import pytest

from gtrace.regret_model import (AdamState, MlpParams, TrainConfig, adam_step, backward, forward, l1_loss,
                                 load_model, save_curves, save_model, train)


def numeric_grad(params, x, y, slope, h=1e-6):
    out = []
    for k, arr in enumerate(params.arrays()):
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            arrays = [a.copy() for a in params.arrays()]
            arrays[k][idx] += h
            up = l1_loss(MlpParams(*arrays), x, y, slope)
            arrays[k][idx] -= 2 * h
            down = l1_loss(MlpParams(*arrays), x, y, slope)
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n_in, hidden, n = int(rng.integers(2, 7)), int(rng.integers(3, 12)), int(rng.integers(1, 9))
    slope = float(rng.choice([0.01, 0.1, 0.3]))
    params = MlpParams.init(rng, n_in, hidden)
    x = rng.normal(size=(n, n_in))
    y = rng.normal(size=n)
    loss, grads = backward(params, x, y, slope)
    assert loss == pytest.approx(l1_loss(params, x, y, slope), abs=1e-15)
    g = np.concatenate([a.ravel() for a in grads.arrays()])
    fd = np.concatenate([a.ravel() for a in numeric_grad(params, x, y, slope)])
    assert np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd)) < 1e-4


def test_forward_shapes_and_errors():
    p = MlpParams.init(np.random.default_rng(0), 40, 8)
    assert isinstance(forward(p, np.zeros(40)), float)
    assert forward(p, np.zeros((3, 40))).shape == (3,)
    with pytest.raises(ValueError):
        forward(p, np.zeros(39))
    with pytest.raises(ValueError):
        backward(p, np.zeros((0, 40)), np.zeros(0))


def test_leaky_branch_at_zero_preactivation():
    p = MlpParams(np.zeros((2, 1)), np.array([0.0, -1.0]), np.array([[1.0, 1.0]]), np.array([0.0]))
    assert forward(p, np.array([5.0]), 0.1) == pytest.approx(-0.1)


def test_adam_first_step_moves_by_lr():
    p = MlpParams.zeros(3, 2)
    g = p.map(lambda a: np.full_like(a, 2.0))
    new, st = adam_step(p, g, AdamState.zeros_like(p), 0.01)
    assert st.t == 1
    for a in new.arrays():
        assert np.allclose(a, -0.01, rtol=1e-6)


def test_overfits_small_dataset():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 40))
    y = rng.normal(size=100)
    t0 = time.perf_counter()
    params, curves = train(x, y, TrainConfig(epochs=400, batch=100, val_fraction=0.0, seed=0))
    assert l1_loss(params, x, y) < 1e-3
    assert min(c.train_l1 for c in curves) < 1e-3
    assert time.perf_counter() - t0 < 60


def test_training_is_bit_exact_and_seed_dependent():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(60, 40))
    y = rng.normal(size=60)
    cfg = TrainConfig(epochs=20, batch=16, hidden=64, seed=5)
    a, ca = train(x, y, cfg)
    b, cb = train(x, y, cfg)
    assert all(np.array_equal(u, v) for u, v in zip(a.arrays(), b.arrays()))
    assert ca == cb
    c, _ = train(x, y, TrainConfig(epochs=20, batch=16, hidden=64, seed=6))
    assert not np.array_equal(a.W1, c.W1)


def test_plateau_schedule_cuts_learning_rate():
    x = np.zeros((10, 4))
    y = np.ones(10)
    # targets are constant, so after convergence validation stops improving
    _, curves = train(x, y, TrainConfig(epochs=60, batch=10, hidden=4, plateau_patience=5, val_fraction=0.2))
    lrs = [c.lr for c in curves]
    assert lrs[0] == 0.005 and min(lrs) < 0.005
    assert all(b in (a, a * 0.1) for a, b in zip(lrs, lrs[1:]))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)
    with pytest.raises(ValueError):
        train(np.zeros((0, 40)), np.zeros(0))


def test_model_file_roundtrip(tmp_path):
    p = MlpParams.init(np.random.default_rng(1), 40, 16)
    save_model(tmp_path / "m.txt", p, 0.02)
    q, slope = load_model(tmp_path / "m.txt")
    assert slope == 0.02
    assert all(np.array_equal(u, v) for u, v in zip(p.arrays(), q.arrays()))
    (tmp_path / "bad.txt").write_text("40 16 2 0.01\n")
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad.txt")


def test_curves_file(tmp_path):
    rng = np.random.default_rng(0)
    _, curves = train(rng.normal(size=(20, 40)), rng.normal(size=20), TrainConfig(epochs=3, hidden=8))
    save_curves(tmp_path / "c.csv", curves)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_l1,val_l1,lr" and len(lines) == 4
