import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from ipbasis.problems import (
    MissingFieldError, ResidualInput, UnknownSpecError, UnknownTermNet, WeightSchedule,
    builtin_specs, get_spec, qho_initial_condition, residual_dho, residual_lv, residual_qho,
    sample_parameters,
)

from helpers import fd_gradient


def _col(a):
    return np.asarray(a, dtype=np.float64)[:, None, None]


def test_dho_exact_solutions():
    t = np.linspace(0, 3, 31)
    # x = exp(-t) solves x'' + 2x' + x = 0
    x = np.exp(-t)
    r = residual_dho(ResidualInput(value=_col(x), d_t=_col(-x), d_tt=_col(x), params=np.array([[2.0, 1.0, 0.0]])))
    assert np.max(np.abs(r)) <= 1e-12
    # x = cos(2t) solves x'' + 4x = 0
    c, s = np.cos(2 * t), np.sin(2 * t)
    r = residual_dho(ResidualInput(value=_col(c), d_t=_col(-2 * s), d_tt=_col(-4 * c), params=np.array([[0.0, 4.0, 0.0]])))
    assert np.max(np.abs(r)) <= 1e-12
    # constant x = f / beta
    r = residual_dho(ResidualInput(value=_col(np.full_like(t, 0.5)), d_t=_col(0 * t), d_tt=_col(0 * t),
                                   params=np.array([[0.3, 1.2, 0.6]])))
    assert np.max(np.abs(r)) <= 1e-12


def test_dho_quadratic_hand_value():
    # x = t^2/2 with alpha=beta=0, f=1 -> residual 0; with beta=1 -> residual x
    t = np.array([2.0])
    r = residual_dho(ResidualInput(value=_col(t ** 2 / 2), d_t=_col(t), d_tt=_col([1.0]), params=np.array([[0.0, 1.0, 1.0]])))
    assert r.item() == pytest.approx(2.0)


def test_lv_fixed_point():
    a, b, g, d = 1.1, 0.7, 0.9, 1.3
    n = 5
    v = np.tile([g / d, a / b], (n, 1, 1))
    r = residual_lv(ResidualInput(value=v, d_t=np.zeros_like(v), params=np.array([[a, b, g, d]])))
    assert np.max(np.abs(r)) <= 1e-12


def test_lv_unknown_terms_substitution_equivalence():
    rng = np.random.default_rng(0)
    v = rng.uniform(0.1, 2, size=(20, 3, 2))
    dt = rng.normal(size=v.shape)
    p = rng.uniform(0.5, 1.5, size=(3, 4))
    par = residual_lv(ResidualInput(value=v, d_t=dt, params=p))
    x, y = v[..., 0], v[..., 1]
    u = np.stack([p[:, 1] * x * y, p[:, 3] * x * y], -1)
    up = residual_lv(ResidualInput(value=v, d_t=dt, params=p[:, [0, 2]], unknown_terms=u))
    np.testing.assert_array_equal(par, up)


def test_qho_ground_state_residual_zero():
    for k in (1.0, 2.5, 4.0):
        w = math.sqrt(k)
        E = w / 2
        x = np.linspace(-5, 5, 41)
        for t in (0.0, 0.7, 1.5):
            gs = np.exp(-w * x * x / 2)
            re, im = gs * math.cos(E * t), -gs * math.sin(E * t)
            gxx = (w * w * x * x - w) * gs
            value = np.stack([re, im], -1)[:, None, :]
            d_t = np.stack([E * im, -E * re], -1)[:, None, :]
            d_xx = np.stack([gxx * math.cos(E * t), -gxx * math.sin(E * t)], -1)[:, None, :]
            r = residual_qho(ResidualInput(value=value, d_t=d_t, d_xx=d_xx, x=x[:, None], params=np.array([[k]])))
            assert np.max(np.abs(r)) <= 1e-12


def test_residual_missing_field():
    with pytest.raises(MissingFieldError):
        residual_dho(ResidualInput(value=np.zeros((2, 1, 1)), params=np.zeros((1, 3))))


def _random_input(spec, rng, n=6, q=3, upinn=False):
    d = spec.solution_dim
    inp = dict(value=rng.normal(size=(n, q, d)), params=rng.uniform(0.3, 1.5, size=(q, spec.param_dim)))
    for f in {f for plist in spec.passes.values() for _, _, m in plist for f in m.values()} - {"value"}:
        inp[f] = rng.normal(size=(n, q, d))
    if spec.input_dim > 1:
        inp["x"] = rng.uniform(-5, 5, size=(n, 1))
    if spec.unknown_terms:
        inp["unknown_terms"] = rng.normal(size=(n, q, spec.unknown_terms))
    return {k: v for k, v in inp.items() if k in ResidualInput.__dataclass_fields__}


@pytest.mark.parametrize("name", ["dho", "lv", "lv_upinn", "qho"])
def test_partials_match_finite_differences(name):
    spec = get_spec(name)
    rng = np.random.default_rng(1)
    inp = _random_input(spec, rng)
    parts = spec.partials(ResidualInput(**inp))
    weights = rng.normal(size=spec.residual(ResidualInput(**inp)).shape)

    def scalar():
        return float((spec.residual(ResidualInput(**inp)) * weights).sum())

    for key, pd in parts.items():
        name_in = key if key != "params" else "params"
        fd = fd_gradient(scalar, inp[name_in], h=1e-6)
        wb = weights[..., :, None]
        if key == "params":
            got = (wb * pd).sum(axis=-2).sum(axis=0)
        else:
            got = np.broadcast_to((wb * pd).sum(axis=-2), inp[name_in].shape)
        np.testing.assert_allclose(got, fd, rtol=1e-6, atol=1e-7)


def test_weight_schedule_qho_values():
    w = get_spec("qho").loss_weights
    assert w["pde"](1000) == pytest.approx(5e-4, rel=1e-15)
    assert w["pde"](3000) == pytest.approx(5e-2, rel=1e-15)
    assert w["pde"](2000) == pytest.approx((5e-4 + 5e-2) / 2, rel=1e-14)
    assert w["pde"](0) == 5e-4
    assert w["data"](3001) == pytest.approx(1 / 32, rel=1e-15)
    assert w["data"](999) == 1.0
    assert w["data"](1000) == 0.5


def test_weight_schedule_scaled_and_roundtrip():
    s = WeightSchedule(2e-3, steps=((3000, 0.1),))
    half = s.scaled(0.5)
    assert half(1499) == 2e-3 and half(1500) == pytest.approx(2e-4)
    r = WeightSchedule(5e-4, ramp=(1000, 3000, 5e-2))
    assert WeightSchedule.parse(r.to_config()) == r
    assert WeightSchedule.parse(0.3) == WeightSchedule(0.3)
    with pytest.raises(ValueError):
        WeightSchedule(-1.0)
    with pytest.raises(KeyError):
        WeightSchedule.parse({"value": 1.0, "bogus": 2})


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_sample_parameters_in_range_and_deterministic(seed, n):
    spec = get_spec("dho")
    p1, ic1 = sample_parameters(spec, n, seed)
    p2, ic2 = sample_parameters(spec, n, seed)
    assert np.array_equal(p1, p2) and np.array_equal(ic1, ic2)
    for k, (lo, hi) in enumerate(spec.param_ranges):
        assert np.all((p1[:, k] >= lo) & (p1[:, k] <= hi))
    assert np.all(np.abs(ic1) <= 5)


def test_sample_parameters_overrides():
    p, _ = sample_parameters(get_spec("lv"), 200, 3, param_ranges=((1.5, 2.5),) * 4)
    assert p.min() >= 1.5 and p.max() <= 2.5
    _, ics = sample_parameters(get_spec("dho"), 200, 3, ic_ranges=((-40, 40),) * 2)
    assert np.abs(ics).max() > 5
    with pytest.raises(ValueError):
        sample_parameters(get_spec("dho"), 0, 3)


def test_builtin_specs():
    specs = builtin_specs()
    assert set(specs) == {"dho", "lv", "lv_upinn", "qho"}
    dho = specs["dho"]
    assert dho.param_ranges == ((0.0, 1.5), (0.0, 1.5), (-1.5, 1.5))
    assert dho.t_span == (0.0, 3.0) and dho.n_collocation == (30,)
    assert dho.arch.hidden_widths == (40,) * 4 and dho.arch.n_basis == 40
    assert specs["lv"].n_collocation == (1000,) and specs["lv"].t_span == (0.0, 10.0)
    qho = specs["qho"]
    assert qho.readout_params == tuple((float(k),) for k in range(6))
    assert qho.collocation_points().shape == (10000, 2)
    assert qho.arch.hidden_widths == (100,) * 5
    with pytest.raises(UnknownSpecError):
        get_spec("bogus")


def test_qho_initial_condition():
    x = np.linspace(-10, 10, 20001)
    re, im = qho_initial_condition(x)
    mod2 = re ** 2 + im ** 2
    # with amplitude 1/(sigma sqrt(pi)) the squared modulus integrates to 1/(sigma sqrt(pi))
    assert np.trapezoid(mod2, x) == pytest.approx(1 / (0.5 * math.sqrt(math.pi)), rel=1e-9)
    assert x[np.argmax(mod2)] == pytest.approx(-2.0)


def test_unknown_term_net_gradients():
    rng = np.random.default_rng(2)
    net = UnknownTermNet.init(2, 2, 2, (5, 4), seed=3)
    for b in net.biases:
        b += rng.normal(size=b.shape) * 0.1
    state = rng.normal(size=(7, 2, 2))
    bar = rng.normal(size=(7, 2, 2))

    def scalar():
        return float((net.forward(state) * bar).sum())

    tape = []
    net.forward(state, tape)
    grads, sbar = net.backward(bar, tape)
    for p, g in zip(net.arrays(), grads):
        np.testing.assert_allclose(g, fd_gradient(scalar, p, h=1e-6), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(sbar, fd_gradient(scalar, state, h=1e-6), rtol=1e-6, atol=1e-8)


def test_unknown_term_groups_independent():
    net = UnknownTermNet.init(3, 2, 2, (4,), seed=0)
    s = np.random.default_rng(0).normal(size=(5, 3, 2))
    out = net.forward(s)
    s2 = s.copy()
    s2[:, 1] += 1.0
    out2 = net.forward(s2)
    np.testing.assert_array_equal(out[:, [0, 2]], out2[:, [0, 2]])
