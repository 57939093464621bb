import hashlib

import numpy as np
import pytest

from sean import checkpoint as ckpt
from sean.tensor import Parameter
from sean.training import (
    LOG_HEADER,
    Adam,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    build_state,
    gen_synthetic_dataset,
    load_state,
    stack_samples,
    train,
    train_step,
)


def tiny_config(**kw):
    base = dict(image_size=8, style_dim=8, batch_size=2, steps=4, log_interval=2, checkpoint_interval=0, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def tiny_data(n=4, seed=0):
    return gen_synthetic_dataset(n, 3, 8, seed)


def digest(params):
    h = hashlib.sha256()
    for p in params:
        h.update(p.data.tobytes())
    return h.hexdigest()


# -- ADAM ---------------------------------------------------------------------------

def test_adam_zero_grad_leaves_parameter():
    p = Parameter(np.array([1.0, -2.0]))
    p.value.grad = np.zeros(2)
    adam_step(p, 1e-3, 0.0, 0.999, 1e-8, 1)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert p.grad is None


def test_adam_first_step_by_hand():
    p = Parameter(np.array(0.0))
    p.value.grad = np.array(1.0)
    adam_step(p, 1e-4, 0.0, 0.999, 1e-8, 1)
    assert abs(p.data - (-1e-4 / (1 + 1e-8))) < 1e-18


def test_adam_errors():
    p = Parameter(np.zeros(2))
    with pytest.raises(ValueError, match="gradient"):
        adam_step(p, 1e-3, 0.0, 0.999, 1e-8, 1)
    p.value.grad = np.ones(2)
    with pytest.raises(ValueError, match="step"):
        adam_step(p, 1e-3, 0.0, 0.999, 1e-8, 0)


def test_adam_runs_are_bitwise_reproducible():
    def run():
        rng = np.random.default_rng(7)
        p = Parameter(rng.standard_normal(5))
        opt = Adam([p], 1e-2, 0.0, 0.999)
        for _ in range(100):
            p.value.grad = 2 * p.data + rng.standard_normal(5)
            opt.step()
        return p.data

    assert np.array_equal(run(), run())


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_g=0.0)
    with pytest.raises(ValueError):
        TrainConfig(beta2=1.0)


# -- synthetic data -----------------------------------------------------------------

def test_dataset_properties():
    data = gen_synthetic_dataset(6, 3, 16, seed=4)
    for sample in data:
        assert sorted(np.unique(sample.mask)) == [0, 1, 2]
        assert sample.image.shape == (3, 16, 16)
        assert np.all(np.abs(sample.image) <= 1.0)
        assert len(sample.style_seeds) == 3
    again = gen_synthetic_dataset(6, 3, 16, seed=4)
    for a, b in zip(data, again):
        assert a.image.tobytes() == b.image.tobytes()
        assert a.mask.tobytes() == b.mask.tobytes()
    other = gen_synthetic_dataset(1, 3, 16, seed=5)[0]
    assert not np.array_equal(other.image, data[0].image)


def test_dataset_errors():
    with pytest.raises(ValueError):
        gen_synthetic_dataset(1, 1, 16, 0)
    with pytest.raises(ValueError):
        gen_synthetic_dataset(1, 5, 3, 0)


# -- loop -----------------------------------------------------------------------------

def test_zero_steps_checkpoint_equals_initialization(tmp_path):
    cfg = tiny_config(steps=0)
    result = train(cfg, tiny_data(), out_dir=tmp_path)
    _, saved = ckpt.load(result.checkpoint_path)
    fresh = build_state(cfg).checkpoint_entries()
    assert saved.keys() == fresh.keys()
    for k in fresh:
        assert np.array_equal(saved[k], fresh[k]), k
    assert (tmp_path / "log.csv").read_text().strip() == ",".join(LOG_HEADER)


def test_log_length_and_header(tmp_path):
    result = train(tiny_config(steps=6, log_interval=2), tiny_data(), out_dir=tmp_path)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == ",".join(LOG_HEADER)
    assert len(lines) - 1 == 6 // 2 == len(result.log_rows)
    assert [int(row.split(",")[0]) for row in lines[1:]] == [2, 4, 6]


def test_periodic_checkpoints(tmp_path):
    train(tiny_config(steps=4, checkpoint_interval=2), tiny_data(), out_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.glob("*.ckpt"))
    assert names == ["checkpoint.ckpt", "checkpoint_step2.ckpt", "checkpoint_step4.ckpt"]


def test_d_and_g_steps_touch_only_their_parameters():
    state = build_state(tiny_config())
    images, masks = stack_samples(tiny_data())
    seen = {}
    d_step, g_step = state.opt_d.step, state.opt_g.step

    def watched_d():
        before = digest(state.model.parameters()), digest(state.disc.parameters())
        d_step()
        seen["d"] = before, (digest(state.model.parameters()), digest(state.disc.parameters()))

    def watched_g():
        before = digest(state.model.parameters()), digest(state.disc.parameters())
        g_step()
        seen["g"] = before, (digest(state.model.parameters()), digest(state.disc.parameters()))

    state.opt_d.step, state.opt_g.step = watched_d, watched_g
    train_step(state, images[:2], masks[:2])
    (gm0, dm0), (gm1, dm1) = seen["d"]
    assert gm0 == gm1 and dm0 != dm1
    (gm0, dm0), (gm1, dm1) = seen["g"]
    assert gm0 != gm1 and dm0 == dm1


def test_encoder_and_generator_receive_gradients():
    result = train(tiny_config(steps=3), tiny_data())
    assert all(enc > 0 and gen > 0 for enc, gen in result.grad_norms)


def test_training_is_deterministic(tmp_path):
    a = train(tiny_config(steps=3), tiny_data(), out_dir=tmp_path / "a")
    b = train(tiny_config(steps=3), tiny_data(), out_dir=tmp_path / "b")
    assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()
    assert (tmp_path / "a" / "log.csv").read_bytes() == (tmp_path / "b" / "log.csv").read_bytes()


def test_resume_from_checkpoint_matches_uninterrupted(tmp_path):
    cfg = tiny_config(steps=2)
    images, masks = stack_samples(tiny_data())
    result = train(cfg, (images, masks), out_dir=tmp_path)
    resumed = load_state(result.checkpoint_path)
    assert resumed.step == 2 and resumed.opt_g.t == 2
    a = train_step(result.state, images[:2], masks[:2])
    b = train_step(resumed, images[:2], masks[:2])
    assert a == b
    assert digest(result.state.model.parameters()) == digest(resumed.model.parameters())


def test_nan_loss_aborts_with_dump(tmp_path):
    cfg = tiny_config(steps=2)
    state = build_state(cfg)
    state.model.generator.final.bias.data[...] = np.nan
    with pytest.raises(TrainingDivergedError, match="step 1") as err:
        train(cfg, tiny_data(), out_dir=tmp_path, state=state)
    assert "diverged_step1.npz" in str(err.value)
    dump = np.load(tmp_path / "diverged_step1.npz")
    assert dump["images"].shape == (2, 3, 8, 8)


def test_wrong_image_size_rejected():
    with pytest.raises(ValueError, match="image size"):
        train(tiny_config(), gen_synthetic_dataset(2, 3, 16, 0))
