import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from stmdenoise.data import DataConfig, DataConfigError, DomainTag, build_workspace, load_test_pairs
from stmdenoise.objectives import LossWeights, NumericError
from stmdenoise.scenes import SceneConfig
from stmdenoise.trainer import (
    VARIANTS,
    TrainConfig,
    TrainConfigError,
    denoise,
    init_state,
    load_checkpoint,
    make_loaders,
    save_checkpoint,
    train,
    train_step,
    variant_config,
)

DATA = DataConfig(
    resolution=32,
    per_domain=8,
    exp_sources=1,
    exp_crops_per_view=1,
    test_blur=3,
    test_exp=2,
    seed=3,
    scene=SceneConfig(fov_nm=6.0, n_min=1, n_max=3),
)
CFG = TrainConfig(epochs=2, batch=4, channels_base=8, ndf=8, seed=1)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("train_ws")
    build_workspace(root, DATA)
    return root


@pytest.fixture(scope="module")
def loaders(workspace):
    return make_loaders(workspace, CFG)


def first_batches(loaders, epoch=0):
    return {d: next(l.batches(epoch)) for d, l in loaders.items()}


def test_train_config_validation():
    with pytest.raises(TrainConfigError):
        TrainConfig(lr=0)
    with pytest.raises(TrainConfigError):
        TrainConfig(beta1=1.0)
    with pytest.raises(TrainConfigError):
        TrainConfig(mode="hinge")
    assert TrainConfig.from_dict(CFG.as_dict()) == CFG


def test_step_freeze_discipline_and_sharing(loaders):
    state = init_state(CFG)
    for epoch in range(2):
        report = train_step(state, first_batches(loaders, epoch), CFG, audit=True)
        a = state.last_audit
        assert a.generator_delta_phase1 == 0.0
        assert a.discriminator_delta_phase2 == 0.0
        assert a.up_gap == 0.0
        assert state.nets.G_D.up is state.nets.G_DA.up
    assert report.cyc_f >= 0 and report.cyc_b >= 0


def test_step_actually_updates_both_sides(loaders):
    state = init_state(CFG)
    g0 = [p.detach().clone() for p in state.nets.generator_parameters()]
    d0 = [p.detach().clone() for p in state.nets.discriminator_parameters()]
    train_step(state, first_batches(loaders), CFG)
    assert any(not torch.equal(p, q) for p, q in zip(state.nets.generator_parameters(), g0))
    assert any(not torch.equal(p, q) for p, q in zip(state.nets.discriminator_parameters(), d0))


def test_adam_moments_only_for_parameters_with_gradients(loaders):
    cfg = variant_config(CFG, "cycle")
    state = init_state(cfg)
    train_step(state, first_batches(loaders), cfg)
    g_da_only = {id(p) for p in state.nets.G_DA.parameters()} - {id(p) for p in state.nets.G_D.parameters()}
    g_state = {id(k) for k in state.opt_G.state}
    d_state = {id(k) for k in state.opt_D.state}
    for p in state.nets.generator_parameters():
        assert (id(p) in g_state) != (id(p) in g_da_only)
    assert not {id(p) for p in state.nets.D_DA.parameters()} & d_state
    assert {id(p) for p in state.nets.D_D.parameters()} <= d_state


def test_step_is_deterministic(loaders):
    reports = []
    for _ in range(2):
        state = init_state(CFG)
        reports.append([train_step(state, first_batches(loaders, e), CFG) for e in range(2)])
    assert reports[0] == reports[1]


def test_step_rejects_missing_or_mismatched_batches(loaders):
    state = init_state(CFG)
    b = first_batches(loaders)
    with pytest.raises(DataConfigError):
        train_step(state, {DomainTag.EXP: b[DomainTag.EXP]}, CFG)


def test_non_finite_loss_aborts_step(loaders):
    state = init_state(CFG)
    with torch.no_grad():
        state.nets.D_D.body[0].weight.fill_(float("nan"))
    with pytest.raises(NumericError):
        train_step(state, first_batches(loaders), CFG)


def test_zero_epochs_returns_initial_networks(loaders):
    result = train(replace(CFG, epochs=0), loaders)
    assert result.history == [] and result.epoch_means == []
    fresh = init_state(CFG).nets
    assert all(torch.equal(p, q) for p, q in zip(result.state.nets.parameters(), fresh.parameters()))


def test_train_writes_logs_and_history(loaders, tmp_path):
    result = train(CFG, loaders, out_dir=tmp_path)
    assert len(result.history) == 4  # 2 epochs x (8 images / batch 4)
    assert [m["epoch"] for m in result.epoch_means] == [0, 1]
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 4 and "wall_time" in json.loads(lines[0])
    hist = [json.loads(l) for l in (tmp_path / "history.jsonl").read_text().splitlines()]
    assert all("wall_time" not in h for h in hist)
    assert (tmp_path / "checkpoint.pt").exists()


def test_full_run_determinism(loaders):
    a = train(CFG, loaders).history
    b = train(CFG, loaders).history
    assert a == b


def test_resume_mid_epoch_matches_uninterrupted_run(loaders, tmp_path):
    full = train(CFG, loaders)
    part = train(CFG, loaders, out_dir=tmp_path, max_steps=1)
    assert part.state.step_in_epoch == 1
    state, cfg, res = load_checkpoint(tmp_path / "checkpoint.pt")
    assert res == 32 and cfg == CFG
    resumed = train(cfg, loaders, state=state)
    assert resumed.history == full.history
    assert all(torch.equal(p, q) for p, q in zip(resumed.state.nets.parameters(), full.state.nets.parameters()))
    assert resumed.state.nets.G_D.up is resumed.state.nets.G_DA.up


def test_convergence_rule_stops_early(loaders):
    cfg = replace(CFG, epochs=50, patience=1, min_improvement=10.0)
    result = train(cfg, loaders)
    assert result.state.converged
    assert len(result.epoch_means) == 2


def test_variants():
    assert set(VARIANTS) == {"cycle", "cycle_da", "cycle_da_ws", "full"}
    c = variant_config(CFG, "cycle")
    assert (c.weights.lambda_DA, c.weights.lambda_FA, c.share_up) == (0.0, 0.0, False)
    ws = variant_config(CFG, "cycle_da_ws")
    assert (ws.weights.lambda_DA, ws.weights.lambda_FA, ws.share_up) == (1.0, 0.0, True)
    assert variant_config(CFG, "full").weights == LossWeights()
    with pytest.raises(TrainConfigError):
        variant_config(CFG, "bogus")


def test_unshared_variant_keeps_up_stages_apart(loaders):
    cfg = variant_config(CFG, "cycle_da")
    state = init_state(cfg)
    train_step(state, first_batches(loaders), cfg, audit=True)
    assert state.last_audit.up_gap > 0
    assert state.last_audit.generator_delta_phase1 == 0.0


def test_denoise_shape_determinism_and_validation(workspace, loaders):
    state = init_state(CFG)
    x, _, _ = load_test_pairs(workspace)
    a = denoise(state.nets.G_D, x, batch=2)
    b = denoise(state.nets.G_D, x, batch=2)
    assert a.shape == x.shape and a.dtype == np.float32
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(denoise(state.nets.G_D, x, batch=3), a, atol=1e-5)
    assert a.min() >= 0 and a.max() <= 1
    with pytest.raises(DataConfigError):
        denoise(state.nets.G_D, x, resolution=64)
    with pytest.raises(DataConfigError):
        denoise(state.nets.G_D, np.zeros((1, 30, 30)))


def test_checkpoint_rejects_foreign_file(tmp_path):
    torch.save({"hello": 1}, tmp_path / "x.pt")
    with pytest.raises(TrainConfigError):
        load_checkpoint(tmp_path / "x.pt")
    with pytest.raises(TrainConfigError):
        load_checkpoint(tmp_path / "missing.pt")
