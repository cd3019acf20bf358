import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mlcsc.estimator import MLCSCRegressor
from mlcsc.linop import make_inpainting_mask


def smooth_signals(n, length=24, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, length)
    freq = rng.uniform(1, 3, (n, 1, 1))
    phase = rng.uniform(0, 6, (n, 1, 1))
    return np.sin(2 * np.pi * freq * t + phase)


def test_params_round_trip_and_clone():
    est = MLCSCRegressor(filters=(4,), kernel_sizes=(3,), n_sweeps=4)
    params = est.get_params()
    assert params["filters"] == (4,) and params["n_sweeps"] == 4
    c = clone(est)
    assert c.get_params() == params
    est.set_params(bias=0.5)
    assert est.bias == 0.5


def test_fit_predict_denoising():
    z = smooth_signals(24)
    x = z + 0.05 * np.random.default_rng(1).standard_normal(z.shape)
    est = MLCSCRegressor(filters=(4, 4), kernel_sizes=(5, 3), n_sweeps=4, init="delta",
                         epochs=8, learning_rate=1e-2)
    est.fit(x, z)
    assert est.predict(x).shape == z.shape
    assert est.transform(x).shape == (24, 4, 24)
    assert est.train_loss_[-1] < est.train_loss_[0]
    assert est.score(x, z) > 0.9
    assert est.n_features_in_ == 24


def test_fit_with_per_sample_operators():
    z = smooth_signals(8)
    ops = [make_inpainting_mask((1, 24), 0.3, seed=k) for k in range(8)]
    x = np.stack([op.apply(s) for op, s in zip(ops, z)])
    est = MLCSCRegressor(filters=(4,), kernel_sizes=(5,), n_sweeps=3, epochs=2)
    est.fit(x, z, operators=ops)
    assert est.predict(x, operators=ops).shape == z.shape
    with pytest.raises(ValueError):
        est.predict(x, operators=ops[:3])


def test_fit_is_deterministic():
    z = smooth_signals(8)
    a = MLCSCRegressor(filters=(4,), kernel_sizes=(3,), n_sweeps=3, epochs=2).fit(z, z)
    b = MLCSCRegressor(filters=(4,), kernel_sizes=(3,), n_sweeps=3, epochs=2).fit(z, z)
    assert np.array_equal(a.predict(z), b.predict(z))


def test_errors():
    z = smooth_signals(4)
    with pytest.raises(NotFittedError):
        MLCSCRegressor().predict(z)
    with pytest.raises(ValueError):
        MLCSCRegressor(filters=(4, 4), kernel_sizes=(3,)).fit(z, z)
    with pytest.raises(ValueError):
        MLCSCRegressor(init="zeros").fit(z, z)
    with pytest.raises(ValueError):
        MLCSCRegressor().fit(z, z[:3])
    with pytest.raises(ValueError):
        MLCSCRegressor().fit(z[:, 0], z[:, 0])
