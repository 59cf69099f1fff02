import numpy as np
import pytest

from ipbasis.loss import field_loss, readout_fields
from ipbasis.network import DivergedTrainingError, NetworkArch, ReadoutLayer, compute_features, load_checkpoint
from ipbasis.offline import (
    OfflineConfig, build_readout_set, offline_train, pinn_loss, validation_loss, weights_at,
)
from ipbasis.problems import WeightSchedule, get_spec, sample_parameters

SMALL = NetworkArch(1, (8, 8), 8)


def small_dho(**kw):
    return get_spec("dho").with_overrides(arch=SMALL, **kw)


def _setup(n=3, seed=0):
    spec = small_dho()
    params, ics = sample_parameters(spec, n, seed)
    rs = build_readout_set(spec, params, ics, data_loss=False, n_data=0, seed_data=0)
    from ipbasis.network import init_network, init_readout
    R = init_network(spec.arch, 1)
    L = init_readout(8, n, 1, seed=2)
    return spec, rs, R, L


W1 = {"pde": 1.0, "ic": 1.0, "bc": 0.0, "data": 0.0}


def test_zero_weights_zero_loss():
    spec, rs, R, L = _setup()
    total, _ = pinn_loss(spec, R, L, rs.params, rs.points, {t: 0.0 for t in W1}, rs.targets)
    assert total == 0.0


def test_single_point_hand_residual():
    spec = small_dho(n_collocation=(1,))
    from ipbasis.network import forward_basis_hd, init_network
    R = init_network(spec.arch, 0)
    L = ReadoutLayer(np.random.default_rng(0).normal(size=(8, 1)), np.array([0.3]), 1, 1)
    params = np.array([[0.4, 0.9, 0.2]])
    pts = {"colloc": spec.collocation_points()}
    total, terms = pinn_loss(spec, R, L, params, pts, {"pde": 1.0}, None)
    hd = forward_basis_hd(R, pts["colloc"], 0, 0)
    x = hd.re @ L.weight + L.bias
    r = (hd.e12 @ L.weight) + 0.4 * (hd.e1 @ L.weight) + 0.9 * x - 0.2
    assert terms["pde"] == pytest.approx(float(r[0, 0] ** 2), rel=1e-13)


def test_mean_invariance_identical_readouts():
    spec, rs, R, L = _setup(n=1)
    one, _ = pinn_loss(spec, R, L, rs.params, rs.points, W1, rs.targets)
    L4 = ReadoutLayer(np.tile(L.weight, (1, 4)), np.tile(L.bias, 4), 4, 1)
    p4 = np.tile(rs.params, (4, 1))
    ics4 = np.tile(rs.ics, (4, 1))
    rs4 = build_readout_set(spec, p4, ics4, False, 0, 0)
    four, _ = pinn_loss(spec, R, L4, p4, rs4.points, W1, rs4.targets)
    assert four == pytest.approx(one, rel=1e-13)


def test_validation_reuse_equals_recompute():
    spec, rs, R, L = _setup()
    feats = compute_features(R, rs.points, spec.passes)
    a = validation_loss(spec, R, L, rs.params, rs.points, W1, rs.targets, features=feats)
    b = validation_loss(spec, R, L, rs.params, rs.points, W1, rs.targets)
    assert abs(a - b) <= 1e-12


def test_validation_copy_of_training_readout():
    spec, rs, R, L = _setup()
    i = 1
    Lv = ReadoutLayer(L.weight[:, i:i + 1].copy(), L.bias[i:i + 1].copy(), 1, 1)
    rs1 = build_readout_set(spec, rs.params[i:i + 1], rs.ics[i:i + 1], False, 0, 0)
    _, per = pinn_loss(spec, R, L, rs.params, rs.points, W1, rs.targets, per_readout=True)
    v = validation_loss(spec, R, Lv, rs1.params, rs1.points, W1, rs1.targets)
    assert v == pytest.approx(per["pde"][i] + per["ic"][i], rel=1e-12)


def test_zero_readout_validation_equals_mean_square_targets():
    spec, rs, R, _ = _setup()
    Lz = ReadoutLayer(np.zeros((8, 3)), np.zeros(3), 3, 1)
    v = validation_loss(spec, R, Lz, rs.params, rs.points, {"ic": 1.0}, rs.targets)
    expect = np.mean(rs.ics[:, 0] ** 2) + np.mean(rs.ics[:, 1] ** 2)
    assert v == pytest.approx(expect, rel=1e-13)


def _cfg(**kw):
    base = dict(spec="dho", n_readouts=3, n_validation=4, epochs=20, lr=1e-3, val_lr=1e-2, patience=0)
    base.update(kw)
    return OfflineConfig(**base)


def test_one_epoch_records_one_step(tmp_path):
    res = offline_train(_cfg(epochs=1), spec=small_dho(), out_dir=tmp_path)
    assert len(res.history) == 1 and len(res.history.val_loss) == 1
    assert res.history.val_loss[0] is not None
    rows = (tmp_path / "history.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[0].startswith("epoch,train_loss,val_loss")


def test_zero_lr_leaves_parameters_unchanged():
    spec = small_dho()
    from ipbasis.network import init_network
    R0 = init_network(spec.arch, 0)
    res = offline_train(_cfg(epochs=3, lr=0.0, val_lr=0.0), spec=spec)
    for a, b in zip(R0.arrays(), res.R.arrays()):
        assert np.array_equal(a, b)
    assert len(set(res.history.train_loss)) == 1


def test_early_stop_with_frozen_validation(tmp_path):
    res = offline_train(_cfg(epochs=200, val_lr=0.0, patience=10), spec=small_dho(), out_dir=tmp_path)
    assert len(res.history) == 11
    assert res.history.best_epoch == 1


def test_best_checkpoint_reloads_to_recorded_validation_loss(tmp_path):
    spec = small_dho()
    res = offline_train(_cfg(epochs=40, patience=5), spec=spec, out_dir=tmp_path)
    ck = load_checkpoint(res.checkpoint)
    v = validation_loss(spec, ck.R, ck.readouts["L_val"], res.val_set.params, res.train_set.points,
                        weights_at(res.weights, ck.meta["epoch"] - 1), res.val_set.targets)
    assert abs(v - ck.meta["val_loss"]) <= 1e-12
    assert ck.meta["n_readouts"] == 3 and res.checkpoint.name == "dho_r3.ipbn"


def test_training_is_deterministic():
    a = offline_train(_cfg(epochs=15), spec=small_dho())
    b = offline_train(_cfg(epochs=15), spec=small_dho())
    assert a.history.digest() == b.history.digest()
    assert a.history.train_loss == b.history.train_loss


def test_training_reduces_loss():
    res = offline_train(_cfg(epochs=100, lr=1e-2, n_validation=0), spec=small_dho())
    h = res.history.train_loss
    assert h[-1] < 0.5 * h[0]
    decreasing = sum(h[i + 1] <= h[i] for i in range(len(h) - 1))
    assert decreasing >= 0.8 * (len(h) - 1)


def test_train_monitor_without_validation():
    res = offline_train(_cfg(epochs=30, n_validation=0, lr=1e-2), spec=small_dho())
    assert res.meta["monitor"] == "train"
    assert res.meta["train_loss"] == min(res.history.train_loss)


def test_train_monitor_starts_after_last_breakpoint():
    w = {"pde": WeightSchedule(1.0, steps=((10, 0.01),)), "ic": WeightSchedule(1.0)}
    res = offline_train(_cfg(epochs=25, n_validation=0, lr=1e-2, weights=w), spec=small_dho())
    assert res.history.best_epoch >= 11


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(lr=-1e-3).validate()
    with pytest.raises(ValueError):
        _cfg(n_readouts=0).validate()
    with pytest.raises(ValueError):
        _cfg(epochs=0).validate()


def test_divergence_reports_term():
    spec, rs, R, L = _setup()
    fields = readout_fields(compute_features(R, rs.points, spec.passes), L)
    fields["colloc"]["d_tt"] = fields["colloc"]["d_tt"] * np.nan
    with pytest.raises(DivergedTrainingError) as err:
        field_loss(spec, fields, rs.params, rs.points, rs.targets, W1, epoch=7)
    assert err.value.epoch == 7 and err.value.term == "pde"
