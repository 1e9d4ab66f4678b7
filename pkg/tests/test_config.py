import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from swarm_gov import config
from swarm_gov.config import ConfigError, canonical_json, config_hash, load, parse, validate, validate_file
from swarm_gov.scenarios import default_burst, default_comparative, default_sweep


def paths(diags):
    return [d.path for d in diags]


def test_empty_document_is_valid_and_parses_to_defaults():
    assert validate({}) == []
    cfg = parse({})
    assert cfg.topology.num_services == 100
    assert cfg.training.gamma == 0.9


@pytest.mark.parametrize("make", [default_comparative, default_sweep, default_burst])
def test_canned_configs_round_trip(make):
    cfg = make()
    doc = json.loads(json.dumps(cfg.to_json()))
    assert validate(doc) == []
    again = parse(doc)
    assert again.to_json() == cfg.to_json()
    assert again.config_hash() == cfg.config_hash()


def test_edge_prob_diagnostic():
    diags = validate({"topology": {"edge_prob": 1.5}})
    assert "topology.edge_prob" in paths(diags)


def test_gamma_diagnostic_names_the_open_interval():
    diags = validate({"training": {"gamma": 1.0}})
    d = [d for d in diags if d.path == "training.gamma"]
    assert d and "open interval" in d[0].message


def test_every_violation_is_listed():
    doc = {
        "topology": {"edge_prob": -1, "layers": 0},
        "training": {"gamma": 0.0, "batch_size": 0},
        "evolution": {"mutation_rate": 3},
        "scenario": {"mode": "bogus", "seeds": []},
        "nonsense": {},
    }
    got = set(paths(validate(doc)))
    for p in ("topology.edge_prob", "topology.layers", "training.gamma", "training.batch_size",
              "evolution.mutation_rate", "scenario.mode", "scenario.seeds", "nonsense"):
        assert p in got, p


def test_unknown_field_and_wrong_types():
    got = paths(validate({"topology": {"num_servces": 5}, "agents": []}))
    assert "topology.num_servces" in got and "agents" in got
    assert validate([1, 2]) and paths(validate([1, 2])) == ["$"]


def test_parse_raises_with_all_diagnostics():
    with pytest.raises(ConfigError) as err:
        parse({"topology": {"edge_prob": 2.0}, "training": {"gamma": 1.0}})
    assert {"topology.edge_prob", "training.gamma"} <= set(paths(err.value.diagnostics))


@given(st.dictionaries(st.sampled_from(["a", "b", "c", "d"]), st.integers(), min_size=1))
def test_hash_is_stable_under_key_order(d):
    rev = dict(reversed(list(d.items())))
    assert config_hash(d) == config_hash(rev)
    assert canonical_json(d) == canonical_json(rev)


def test_hash_changes_with_content():
    a = default_comparative()
    b = a.with_scenario(seeds=(0, 1))
    assert a.config_hash() != b.config_hash()


def test_load_and_validate_file(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"topology": {"num_services": 12, "layers": 3}}))
    assert validate_file(good) == []
    assert load(good).topology.num_services == 12
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert validate_file(bad)
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.json")


def test_validator_is_shared_with_parse():
    # whatever validate accepts, parse accepts, and vice versa
    docs = [
        {}, {"topology": {"edge_prob": 0.5}}, {"training": {"gamma": 0.99}},
        {"training": {"gamma": 1.0}}, {"workload": {"burst": {"first_window": 3, "last_window": 4}}},
        {"workload": {"burst": {"first_window": 30, "last_window": 90}}},
        {"scenario": {"mode": "no_embedding"}}, {"agents": {"count": 500}},
    ]
    for doc in docs:
        ok = not validate(doc)
        try:
            parse(doc)
            parsed = True
        except ConfigError:
            parsed = False
        assert ok == parsed, doc


@pytest.mark.parametrize("name, make", [
    ("comparative.json", default_comparative),
    ("agent_sweep.json", default_sweep),
    ("burst.json", default_burst),
])
def test_shipped_configs_match_canned_scenarios(name, make):
    path = Path(__file__).resolve().parent.parent / "configs" / name
    assert load(path) == make()
