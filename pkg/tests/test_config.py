import pytest

from ipbasis.config import ConfigError, defaults, merge, parse_override, resolve


def test_empty_config_resolves_to_defaults():
    for name in ("dho", "lv", "lv_upinn", "qho"):
        assert resolve({}, name) == defaults(name)


def test_reference_defaults():
    d = defaults("dho")
    assert d["offline"]["epochs"] == 30000 and d["offline"]["lr"] == 5e-5
    assert d["offline"]["n_validation"] == 100 and d["offline"]["val_lr"] == 3e-2
    assert d["online"]["lr"] == {"value": 5e-2, "steps": [[5000, 0.1]]}
    assert d["online"]["weights"]["pde"] == 1e-3 and d["data"]["points"] == 100
    lv = defaults("lv_upinn")
    assert lv["offline"]["epochs"] == 40000 and lv["online"]["mode"] == "upinn"
    assert lv["online"]["weights"]["pde"] == 0.1 and lv["online"]["lr"] == 3e-3
    q = defaults("qho")
    assert q["online"]["epochs"] == 6000 and q["data"]["n_queries"] == 10
    assert q["data"]["param_values"][0] == [pytest.approx(1 / 3)]
    assert q["offline"]["weights"]["pde"]["ramp"] == [1000, 3000, 5e-2]


def test_unknown_key_reports_path():
    with pytest.raises(ConfigError) as err:
        resolve({"offline": {"weights": {"pdee": 1.0}}}, "dho")
    assert err.value.path == "offline.weights.pdee"
    with pytest.raises(ConfigError) as err:
        resolve({"bogus": 1}, "dho")
    assert err.value.path == "bogus"
    with pytest.raises(ConfigError) as err:
        resolve({"online": {"lr": {"value": 1.0, "stepz": []}}}, "dho")
    assert err.value.path == "online.lr.stepz"


def test_type_checks():
    with pytest.raises(ConfigError):
        resolve({"offline": {"epochs": "many"}}, "dho")
    with pytest.raises(ConfigError):
        resolve({"offline": {"epochs": 1.5}}, "dho")
    with pytest.raises(ConfigError):
        resolve({"offline": {"data_loss": 1}}, "dho")
    assert resolve({"offline": {"epochs": 20.0}}, "dho")["offline"]["epochs"] == 20


def test_semantic_validation():
    for bad in ({"offline": {"lr": -1e-3}}, {"online": {"lr": {"value": -1.0}}},
                {"online": {"weights": {"pde": -1.0}}}, {"data": {"layout": "grid"}},
                {"online": {"mode": "magic"}}, {"bench": {"reps": 3}}, {"data": {"noise": -0.1}},
                {"data": {"n_queries": 0}}):
        with pytest.raises(ConfigError):
            resolve(bad, "dho")


def test_parse_override():
    assert parse_override("online.lr=0.01") == {"online": {"lr": 0.01}}
    assert parse_override("data.layout=random") == {"data": {"layout": "random"}}
    assert parse_override("data.ic_ranges=[[-40, 40], [-40, 40]]") == {"data": {"ic_ranges": [[-40, 40], [-40, 40]]}}
    assert parse_override("online.lr={value = 0.1, steps = [[10, 0.5]]}")["online"]["lr"]["steps"] == [[10, 0.5]]
    with pytest.raises(ConfigError):
        parse_override("novalue")
    with pytest.raises(ConfigError):
        parse_override("=3")


def test_precedence():
    cfg = resolve({"spec": "lv", "online": {"epochs": 5}}, None, ["online.epochs=7"])
    assert cfg["spec"] == "lv" and cfg["online"]["epochs"] == 7
    assert resolve({"spec": "lv"}, "qho")["spec"] == "qho"
    assert resolve({}, None)["spec"] == "dho"
    with pytest.raises(ConfigError):
        resolve({}, "bogus")


def test_merge_does_not_mutate():
    base = defaults("dho")
    merged = merge(base, {"offline": {"epochs": 3}})
    assert base["offline"]["epochs"] == 30000 and merged["offline"]["epochs"] == 3
