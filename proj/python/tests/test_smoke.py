import numpy as np
import pytest

import dynanav as dn


@pytest.fixture(scope="module")
def cfg():
    return dn.RunConfig()


@pytest.fixture(scope="module")
def episode(cfg):
    world = dn.gen_world(13, cfg)
    return dn.expert_rollout(world, cfg)


def test_config_defaults_round_trip(tmp_path, cfg):
    assert cfg.window == cfg.past_frames + 1
    path = tmp_path / "run.cfg"
    path.write_text(dn.default_config_text())
    loaded = dn.parse_config_file(str(path))
    assert loaded.epochs == cfg.epochs
    assert loaded.decoder_layers == cfg.decoder_layers


def test_model_checkpoint_round_trip(tmp_path, cfg):
    m = dn.Model(cfg, 7)
    names = m.param_names()
    assert "decoder.pos" in names
    path = tmp_path / "model.ckpt"
    m.save(str(path))
    loaded = dn.Model.load(cfg, str(path))
    for name in names[:5]:
        np.testing.assert_array_equal(m.param(name), loaded.param(name))


def test_world_and_episode(cfg, episode):
    world = dn.gen_world(13, cfg)
    assert world.seed == 13
    assert episode.steps > cfg.window
    assert episode.length > 0.0
    frame = episode.frame(0)
    assert frame.shape == (cfg.image_size, cfg.image_size, 3)
    assert 0.0 <= frame.min() and frame.max() <= 1.0
    img = dn.render(world, 6.0, 6.0, 0.0, cfg.image_size)
    assert img.shape == (cfg.image_size, cfg.image_size, 3)


def test_static_and_dynamic_inference_agree_when_exits_disabled(cfg, episode):
    window = dn.sample_window(episode, cfg.past_frames, cfg)
    goal = episode.goal()
    m = dn.Model(cfg, 3)
    off = dn.ExitThresholds.disabled(cfg)
    st = dn.run_static(m, window, goal)
    dy = dn.run_dynamic(m, window, goal, off)
    np.testing.assert_array_equal(st["actions"], dy["actions"])
    np.testing.assert_array_equal(st["waypoints"], dy["waypoints"])
    assert st["flops"] == dy["flops"]
    assert dy["exit_layer"] == cfg.decoder_layers
    assert st["actions"].shape == (cfg.num_waypoints, 2)
    np.testing.assert_allclose(np.linalg.norm(st["actions"], axis=1), 1.0, atol=1e-9)


def test_forced_early_exit(cfg, episode):
    window = dn.sample_window(episode, cfg.past_frames, cfg)
    m = dn.Model(cfg, 3)
    th = dn.ExitThresholds.disabled(cfg)
    th.layer_exit_enabled = True
    th.eta = [1e9, 0.0, 0.0]
    tr = dn.run_dynamic(m, window, episode.goal(), th)
    assert tr["exit_layer"] == 2
    full = dn.run_static(m, window, episode.goal())
    assert tr["flops"] < full["flops"]


def test_thresholds_round_trip(tmp_path, cfg):
    th = dn.ExitThresholds.disabled(cfg)
    th.eta = [0.1, 0.2, 0.3]
    th.layer_exit_enabled = True
    th.gate_dist = 1.5
    path = tmp_path / "thresholds.txt"
    dn.save_thresholds(str(path), th)
    loaded = dn.load_thresholds(str(path))
    assert loaded.eta == [0.1, 0.2, 0.3]
    assert loaded.layer_exit_enabled
    assert loaded.gate_dist == 1.5


def test_evaluate_policy_summary(cfg, episode):
    m = dn.Model(cfg, 3)
    rep = dn.evaluate_policy(m, [episode], dn.ExitThresholds.disabled(cfg), cfg, stride=8)
    assert rep["mean_flops"] > 0
    assert set(rep["exit_histogram"]) == {cfg.decoder_layers}
    assert -100.0 <= rep["sim_a"] <= 100.0


def test_errors_are_mapped(cfg, episode):
    m = dn.Model(cfg, 3)
    with pytest.raises(dn.ShapeError):
        dn.run_static(m, [episode.frame(0)], episode.goal())
    with pytest.raises(dn.IoError):
        dn.load_thresholds("/nonexistent/thresholds.txt")
