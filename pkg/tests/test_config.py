import pytest

from mlcsc.config import KINDS, ConfigError, default_config, load_config, parse_config


@pytest.mark.parametrize("kind", KINDS)
def test_defaults_are_valid(kind):
    cfg = default_config(kind, seed=3)
    assert cfg.kind == kind and cfg.seed == 3 and cfg.train.seed == 3
    assert len(cfg.model.filters) == len(cfg.model.kernels)


def test_full_config_parses():
    text = """
[experiment]
kind = jpeg-ar
seed = 5
grid = 10, 50

[model]
sweeps = 3
filters = 8, 4
kernels = 3, 3
bias = 0.02
init = random
noise = 0.5
eval_sweeps = 0
consistent = no

[train]
learning_rate = 0.01
batch_size = 4
epochs = 2
optimizer = sgd
momentum = 0.5
clip = 0
checkpoint_every = 1

[data]
train_images = coffee_0
test_images = coffee_1
n_train = 8
n_test = 2
crop = 16
"""
    cfg = parse_config(text)
    assert cfg.kind == "jpeg-ar" and cfg.seed == 5 and cfg.grid == (10, 50)
    assert all(isinstance(q, int) for q in cfg.grid)
    assert cfg.model.filters == (8, 4) and cfg.model.noise == 0.5
    assert cfg.model.consistent is False
    assert parse_config(text.replace("consistent = no", "consistent = yes")).model.consistent
    assert cfg.train.optimizer == "sgd" and cfg.train.batch_size == 4
    assert cfg.train.checkpoint_every == 1 and cfg.train.clip == 0.0
    assert cfg.data.train_images == ("coffee_0",) and cfg.data.crop == 16
    assert parse_config(text, seed=9).seed == 9


def test_alpha_grid_parses_floats():
    cfg = parse_config("[experiment]\nkind = alpha-sweep\ngrid = 0, 0.5, 1\n")
    assert cfg.grid == (0.0, 0.5, 1.0)


@pytest.mark.parametrize("text", [
    "[experiment]\nkind = nope\n",
    "[experiment]\ncolour = red\n",
    "[bogus]\nx = 1\n",
    "[model]\nlayers = 3\n",
    "[train]\nseed = 3\n",
    "[train]\nloss = l1\n",
    "[model]\nkernels = 4, 3\n",
    "[model]\nfilters = 8\n",
    "[model]\nsweeps = many\n",
    "[model]\ninit = zeros\n",
    "[experiment]\nkind = alpha-sweep\ngrid = 0, 1.5\n",
    "[experiment]\nkind = jpeg-ar\ngrid = 0\n",
    "[experiment]\nkind = jpeg-ar\ngrid =\n",
    "[experiment]\nseed = -1\n",
    "[train]\noptimizer = rmsprop\n",
    "[data]\nn_train = 0\n",
    "[experiment]\nkind = jpeg-ar\n[data]\nfixture_dir = /does/not/exist\n",
    "no section header\n",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    (tmp_path / "c.ini").write_text("[experiment]\nkind = traj\n")
    assert load_config(tmp_path / "c.ini", seed=2).seed == 2
