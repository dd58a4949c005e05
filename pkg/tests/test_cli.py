import json
import os
from pathlib import Path

import pytest

from ttfm import cli
from ttfm.errors import NumericalError

CONFIG = """\
[run]
seed = 3
[paths]
data = data
fit = fit
pings = synth/pings.csv
restaurants = synth/restaurants.csv
homes = synth/homes.csv
area = synth/area.txt
events = synth/events.csv
[synth]
n_users = 40
n_restaurants = 30
n_weeks = 14
visits_per_user = 20
box_miles = 3
pings = true
k1 = 4
k2 = 4
k3 = 2
[pipeline]
sample_end = 2017-04-09
min_weekly_restaurant_visits = 0.2
[model]
kind = both
k1 = 4
k2 = 4
k3 = 2
[fit]
max_steps = 150
eval_every = 50
minibatch_size = 128
[counterfactual]
min_consideration = 20
"""

STEPS = [
    ["synth", "--out", "synth"],
    ["ingest", "--out", "data"],
    ["fit", "--out", "fit"],
    ["report", "--out", "report"],
    ["counterfactual", "--out", "cf-red", "--mode", "redistribution"],
    ["counterfactual", "--out", "cf-alt", "--mode", "alternatives"],
    ["counterfactual", "--out", "cf-loc", "--mode", "best-category"],
    ["counterfactual", "--out", "cf-self", "--mode", "self-check"],
    ["similar", "--out", "sim", "--restaurant-id", "r00001", "-n", "5"],
    ["similar", "--out", "sim-u", "--restaurant-id", "r00001", "--space", "utility"],
]


def _workflow(root):
    root.mkdir()
    (root / "run.ini").write_text(CONFIG)
    cwd = os.getcwd()
    os.chdir(root)
    try:
        codes = [cli.main([s[0], "--config", "run.ini", *s[1:]]) for s in STEPS]
    finally:
        os.chdir(cwd)
    return codes


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file()}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    a, b = base / "a", base / "b"
    return _workflow(a), _workflow(b), a, b


def test_every_command_succeeds(runs):
    codes_a, codes_b, a, _ = runs
    assert codes_a == [0] * len(STEPS) and codes_b == codes_a
    assert (a / "fit" / "posterior_ttfm.snapshot").exists()
    assert (a / "cf-self" / "self_check.csv").exists()
    assert len((a / "sim" / "similar_r00001_latent.csv").read_text().splitlines()) == 6


def test_reruns_are_byte_identical(runs):
    _, _, a, b = runs
    ta, tb = _tree(a), _tree(b)
    assert ta.keys() == tb.keys()
    diff = [k for k in ta if ta[k] != tb[k]]
    assert diff == []


def test_manifests(runs):
    _, _, a, _ = runs
    m = json.loads((a / "fit" / "manifest_fit.json").read_text())
    assert m["command"] == "fit" and m["seed"] == 3
    assert m["config"]["fit"]["max_steps"] == "150"
    assert "posterior_ttfm.snapshot" in m["outputs"]
    assert any(k.endswith("visits.csv") for k in m["inputs"])
    for step in STEPS:
        out = a / step[2]
        assert (out / f"manifest_{step[0]}.json").exists()


def _run(tmp_path, argv, config=CONFIG):
    (tmp_path / "run.ini").write_text(config)
    cwd = os.getcwd()
    os.chdir(tmp_path)
    try:
        return cli.main([argv[0], "--config", "run.ini", *argv[1:]])
    finally:
        os.chdir(cwd)


def test_zero_users_is_config_error(tmp_path, capsys):
    code = _run(tmp_path, ["synth", "--out", "s"], CONFIG.replace("n_users = 40", "n_users = 0"))
    assert code == 2
    assert "n_users must be positive" in capsys.readouterr().err


def test_unknown_key_is_config_error(tmp_path):
    assert _run(tmp_path, ["synth", "--out", "s"], CONFIG + "[fit]\nlr = 1\n") == 2
    assert _run(tmp_path, ["synth", "--out", "s", "--seed", "-1"]) == 2
    assert _run(tmp_path, ["synth", "--out", "s", "--threads", "0"]) == 2


def test_bad_input_row_is_data_error(tmp_path, capsys):
    assert _run(tmp_path, ["synth", "--out", "synth"]) == 0
    pings = tmp_path / "synth" / "pings.csv"
    lines = pings.read_text().splitlines()
    pings.write_text("\n".join(lines[:3] + ["u1,never,1,2,3"]) + "\n")
    assert _run(tmp_path, ["ingest", "--out", "data"]) == 3
    assert "synth/pings.csv:4: bad timestamp" in capsys.readouterr().err


def test_missing_fit_is_data_error(tmp_path):
    assert _run(tmp_path, ["synth", "--out", "data"]) == 0
    assert _run(tmp_path, ["report", "--out", "report"]) == 3


def test_empty_ping_file_exits_cleanly(tmp_path):
    assert _run(tmp_path, ["synth", "--out", "synth"]) == 0
    pings = tmp_path / "synth" / "pings.csv"
    pings.write_text(pings.read_text().splitlines()[0] + "\n")
    assert _run(tmp_path, ["ingest", "--out", "data"]) == 0
    rows = (tmp_path / "data" / "ingest_summary.csv").read_text().splitlines()
    assert rows[-1] == "estimation-sample,0,0,0"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(tmp_path, capsys):
    assert _run(tmp_path, ["synth", "--out", "data"]) == 0
    config = CONFIG.replace("minibatch_size = 128", "minibatch_size = 128\nstep_size = 1e300")
    code = _run(tmp_path, ["fit", "--out", "fit", "--model", "ttfm"], config)
    assert code == 4
    assert "non-finite" in capsys.readouterr().err


def test_numerical_error_from_command(tmp_path, monkeypatch):
    def boom(run, mode=None):
        raise NumericalError("diverged", family="theta")
    monkeypatch.setattr(cli, "cmd_counterfactual", boom)
    assert _run(tmp_path, ["counterfactual", "--out", "cf"]) == 4


def test_parser_rejects_unknown_command():
    with pytest.raises(SystemExit) as exc:
        cli.main(["dance"])
    assert exc.value.code == 2
