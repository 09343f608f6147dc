import json

import pytest

from warpmin import cli
from warpmin.errors import ConfigError
from warpmin.scenarios import run_scenario, validate

HYP_CLASSIFY = """
id = "hyp"
experiment = "classify"
[metric]
model = "hyperbolic_polar"
k = 1.0
[params]
region = [[0.1, 3.0], [0.0, 6.283185307179586]]
"""

EQUATOR_FLOW = """
id = "equator"
experiment = "flow"
seed = 3
[metric]
model = "sphere_polar"
k = 1.0
[params.seed]
kind = "latitude"
level = 1.5707963267948966
n = 48
"""

COSH_FLOW = """
id = "neck"
experiment = "flow"
seed = 11
[metric]
model = "warped"
f = {type = "cosh"}
[params.seed]
kind = "latitude"
level = 0.6
n = 40
amplitude = 0.1
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(args, capsys=None):
    code = cli.main([str(a) for a in args])
    out = capsys.readouterr() if capsys else None
    return code, out


def test_classify_hyperbolic(tmp_path, capsys):
    cfg = write(tmp_path, "hyp.toml", HYP_CLASSIFY)
    code, out = run(["classify", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "o" / "hyp" / "summary.json").read_text())
    assert "expanding" in summary["result"]["flags"]
    assert "flags=" in out.out


def test_missing_metric_is_a_config_error(tmp_path, capsys):
    cfg = write(tmp_path, "bad.toml", 'id = "x"\nexperiment = "classify"\n')
    code, out = run(["classify", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 2
    assert "metric" in out.err


@pytest.mark.parametrize("text,key", [
    ('id = "x"\nexperiment = "nope"\n[metric]\nmodel = "flat"\n', "experiment"),
    ('id = "x"\nexperiment = "classify"\nseed = "a"\n[metric]\nmodel = "flat"\n', "seed"),
    ('id = "x"\nexperiment = "classify"\n[metric]\nmodel = "torus"\n', "metric"),
    ('id = "x"\nexperiment = "classify"\n[metric\n', "config"),
])
def test_config_errors_name_the_key(tmp_path, capsys, text, key):
    cfg = write(tmp_path, "bad.toml", text)
    code, out = run(["report", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 2
    assert f"[{key}]" in out.err


def test_verb_experiment_mismatch(tmp_path, capsys):
    cfg = write(tmp_path, "hyp.toml", HYP_CLASSIFY)
    code, out = run(["flow", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 2 and "experiment" in out.err


def test_missing_config_file(tmp_path, capsys):
    code, _ = run(["classify", "--config", tmp_path / "none.toml"], capsys)
    assert code == 2


def test_equator_flow_converges(tmp_path):
    cfg = write(tmp_path, "eq.toml", EQUATOR_FLOW)
    assert cli.main(["flow", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "equator" / "summary.json").read_text())
    assert summary["trace"]["verdict"] == "converged_minimal"
    assert (tmp_path / "equator" / "trace.csv").exists()
    assert (tmp_path / "equator" / "final_immersion.txt").exists()


def test_negative_result_still_exits_zero(tmp_path):
    cfg = write(tmp_path, "exp.toml", """
id = "expdir"
experiment = "dirichlet"
[metric]
model = "warped"
f = {type = "exp"}
[params]
grid = {n = 33}
sign = "ge"
[params.solver]
max_iter = 30
""")
    assert cli.main(["dirichlet", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "expdir" / "summary.json").read_text())
    assert summary["report"]["verdict"] == "no_convergence"


def test_runtime_failure_exits_one(tmp_path, capsys):
    cfg = write(tmp_path, "f.toml", """
id = "fail"
experiment = "flow"
[metric]
model = "flat"
f_domain = [[-1.0, 1.0, false]]
[params.seed]
kind = "latitude"
level = 0.0
""")
    code, out = run(["flow", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 1
    assert "fail" in out.err


def test_unknown_suite(capsys):
    code, out = run(["verify", "everything"], capsys)
    assert code == 2
    assert "usage" in out.err


def test_bad_verb(capsys):
    code, _ = run(["frobnicate"], capsys)
    assert code == 2


def test_verify_solvers_writes_reports(tmp_path, capsys):
    code, out = run(["verify", "solvers", "--out", tmp_path], capsys)
    assert code == 0
    assert "PASS [c9]" in out.out
    assert (tmp_path / "verify_solvers.txt").read_text() == out.out
    assert json.loads((tmp_path / "verify_solvers.json").read_text())[0]["key"] == "c9"


def test_batch_directory_parallel_and_env(tmp_path, monkeypatch):
    d = tmp_path / "cfgs"
    d.mkdir()
    write(d, "a.toml", HYP_CLASSIFY)
    write(d, "b.toml", COSH_FLOW)
    out = tmp_path / "env_out"
    monkeypatch.setenv("WARPMIN_OUT", str(out))
    monkeypatch.setenv("WARPMIN_WORKERS", "2")
    assert cli.main(["report", "--config", str(d)]) == 0
    merged = json.loads((out / "summary.json").read_text())
    assert [s["id"] for s in merged] == ["hyp", "neck"]
    assert merged[1]["trace"]["verdict"] == "converged_minimal"


def test_duplicate_ids_rejected(tmp_path, capsys):
    d = tmp_path / "cfgs"
    d.mkdir()
    write(d, "a.toml", HYP_CLASSIFY)
    write(d, "b.toml", HYP_CLASSIFY)
    code, out = run(["report", "--config", d, "--out", tmp_path], capsys)
    assert code == 2 and "duplicate" in out.err


def test_bad_worker_setting(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path, "hyp.toml", HYP_CLASSIFY)
    monkeypatch.setenv("WARPMIN_WORKERS", "many")
    code, _ = run(["classify", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 2


def test_outputs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, "neck.toml", COSH_FLOW)
    for sub in ("one", "two"):
        assert cli.main(["flow", "--config", str(cfg), "--out", str(tmp_path / sub), "--seed", "5"]) == 0
    for name in ("summary.json", "trace.csv", "final_immersion.txt"):
        assert (tmp_path / "one" / "neck" / name).read_bytes() == (tmp_path / "two" / "neck" / name).read_bytes()


SCENARIOS = {
    "formula_check": """
[metric]
model = "euclidean_polar"
[params.seed]
kind = "geodesic_circle"
center = [1.5, 0.0]
radius = 0.5
n = 32
""",
    "graph_solve": """
[metric]
model = "warped"
f = {type = "cosh"}
[params]
grid = {n = 24}
initial = {amplitude = 0.3}
""",
    "ball_threshold": """
[metric]
model = "sphere_polar"
k = 1.0
[params]
radii = [1.2, 1.8]
seeds_per_radius = 1
n = 24
diameter = 3.141592653589793
""",
    "normal_growth": """
[metric]
model = "hyperbolic_polar"
k = 1.0
[params]
direction = [1.0]
radii = {start = 0.1, stop = 1.5, step = 0.2}
""",
}


@pytest.mark.parametrize("experiment", sorted(SCENARIOS))
def test_every_experiment_runs(experiment):
    sc = validate({"id": experiment, "experiment": experiment, **__import__("tomli").loads(SCENARIOS[experiment])})
    summary, artifacts = run_scenario(sc)
    assert summary["id"] == experiment
    json.dumps(summary)
    for text in artifacts.values():
        assert text.endswith("\n")
    if experiment == "graph_solve":
        assert summary["report"]["verdict"] == "constant_solution"
    if experiment == "normal_growth":
        assert summary["strictly_increasing"]
    if experiment == "ball_threshold":
        assert summary["estimate"]["threshold"] == 1.8


def test_validate_rejects_non_table_params():
    with pytest.raises(ConfigError) as err:
        validate({"experiment": "classify", "metric": {"model": "flat"}, "params": 3})
    assert err.value.key == "params"
