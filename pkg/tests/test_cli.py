import csv
import io
import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mg1w import config as cfgmod
from mg1w.cli import run

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).resolve().parent / "data" / "late_cost_golden.csv"


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def rows(text):
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(body))


def header(text):
    return dict(ln[2:].split("=", 1) for ln in text.splitlines() if ln.startswith("# "))


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_unit_cost_is_a_straight_line():
    code, out, _ = call("wfn", "--config", str(CONFIGS / "unit_cost.yaml"))
    assert code == 0
    r = rows(out)
    assert len(r) == 11
    for row in r:
        u = float(row["u"])
        assert float(row["w"]) == pytest.approx(u)  # lam/(1-rho) = 1
        assert float(row["wprime"]) == pytest.approx(1.0)
    assert float(header(out)["cbar"]) == pytest.approx(1.0)


def test_late_cost_matches_golden_table():
    code, out, _ = call("wfn", "--config", str(CONFIGS / "late_cost.yaml"))
    assert code == 0
    got = rows(out)
    with open(GOLDEN, newline="") as fh:
        want = list(csv.DictReader(fh))
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert float(g["u"]) == pytest.approx(float(w["u"]))
        assert float(g["w"]) == pytest.approx(float(w["w"]), rel=1e-11, abs=1e-13)
        assert float(g["wprime"]) == pytest.approx(float(w["wprime"]), rel=1e-11, abs=1e-13)


def test_json_output_matches_csv():
    _, text_csv, _ = call("wfn", "--config", str(CONFIGS / "unit_cost.yaml"))
    code, text_json, _ = call("wfn", "--config", str(CONFIGS / "unit_cost.yaml"), "--format", "json")
    assert code == 0
    doc = json.loads(text_json)
    assert doc["header"]["spec_hash"] == header(text_csv)["spec_hash"]
    assert [r["w"] for r in doc["rows"]] == [float(r["w"]) for r in rows(text_csv)]


def test_out_file(tmp_path):
    dest = tmp_path / "w.csv"
    code, out, _ = call("wfn", "--config", str(CONFIGS / "unit_cost.yaml"), "--out", str(dest))
    assert code == 0 and out == ""
    assert dest.read_text().startswith("# spec_hash=")


def test_grid_override():
    code, out, _ = call("wfn", "--config", str(CONFIGS / "unit_cost.yaml"), "--grid", "0:1:3")
    assert code == 0
    assert [float(r["u"]) for r in rows(out)] == [0.0, 0.5, 1.0]


# --- exit codes ---------------------------------------------------------------


def test_malformed_yaml_reports_line(tmp_path):
    path = write(tmp_path, "command: wfn\nqueue:\n  lambda: [0.5\n  model: x\n")
    code, _, err = call("wfn", "--config", path)
    assert code == 2
    assert "line" in err


def test_unknown_key_rejected(tmp_path):
    text = (CONFIGS / "unit_cost.yaml").read_text() + "colour: blue\n"
    code, _, err = call("wfn", "--config", write(tmp_path, text))
    assert code == 2
    assert "colour" in err


def test_missing_key_rejected(tmp_path):
    code, _, err = call("wfn", "--config", write(tmp_path, "command: wfn\ngrid: '0:1:2'\n"))
    assert code == 2
    assert "queue" in err


def test_wrong_command_rejected():
    code, _, _ = call("simulate", "--config", str(CONFIGS / "unit_cost.yaml"))
    assert code == 2


def test_missing_file_is_config_error(tmp_path):
    code, _, _ = call("wfn", "--config", str(tmp_path / "nope.yaml"))
    assert code == 2


def test_unstable_queue_exit_code(tmp_path):
    text = (CONFIGS / "unit_cost.yaml").read_text().replace("lambda: 0.5", "lambda: 1.0")
    code, _, err = call("wfn", "--config", write(tmp_path, text))
    assert code == 3
    assert "rho" in err or "stab" in err


def test_inadmissible_rate_exit_code(tmp_path):
    text = """command: wfn
queue: {lambda: 0.5, model: {kind: exponential, omega: 1.0}}
cost: {kind: exppoly, terms: [{kappa: 1.0, m: 0, a: -0.9}]}
grid: "0:1:2"
"""
    code, _, _ = call("wfn", "--config", write(tmp_path, text))
    assert code == 2


def test_divergent_regime_exit_code():
    code, out, err = call("bounds", "--config", str(CONFIGS / "bounds_mm1_marginal.yaml"))
    assert code == 4
    assert "regime" in header(out)


def test_divergent_taylor_series_exit_code(tmp_path):
    text = """command: taylor
queue: {lambda: 0.5, model: {kind: exponential, omega: 1.0}}
cost: {kind: exp_decay, a: 0.75}
n: 10
grid: "0:2:3"
"""
    code, _, err = call("taylor", "--config", write(tmp_path, text))
    assert code == 4
    assert "diverg" in err


# --- other commands -----------------------------------------------------------


def test_bounds_converging_case():
    code, out, _ = call("bounds", "--config", str(CONFIGS / "bounds_mm1.yaml"))
    assert code == 0
    for r in rows(out):
        assert float(r["lower"]) <= float(r["upper"]) + 1e-12


@pytest.mark.parametrize("name", ["taylor.yaml", "approx_quotient.yaml", "approx_periodic.yaml", "bounds_md1.yaml"])
def test_shipped_configs_run(name):
    cmd = cfgmod.parse_text((CONFIGS / name).read_text())["command"]
    code, out, err = call(cmd, "--config", str(CONFIGS / name))
    assert code == 0, err
    assert rows(out)


def test_policy_small_grid():
    code, out, _ = call("policy", "--config", str(CONFIGS / "policy_quotient.yaml"), "--grid", "0:4:2")
    assert code == 0
    r = rows(out)
    assert list(r[0]) == ["u1", "u2", "winner", "n_star", "rounds"]
    assert len(r) == 4
    h = header(out)
    assert int(h["points"]) == 4


def test_simulate_is_deterministic_across_threads():
    base = ["simulate", "--config", str(CONFIGS / "simulate.yaml"), "--grid", "1:2:2", "--reps", "4000"]
    _, a, _ = call(*base)
    _, b, _ = call(*base, "--threads", "4")
    _, c, _ = call(*base, "--seed", "7")
    assert a == b
    assert a != c


# --- config round trip --------------------------------------------------------


grids = st.builds(
    lambda a, w, n: f"{a}:{a + w}:{n}", st.integers(0, 5), st.integers(1, 10), st.integers(2, 50)
)
models = st.one_of(
    st.builds(lambda d: {"kind": "deterministic", "d": d}, st.floats(0.1, 2.0)),
    st.builds(lambda w: {"kind": "exponential", "omega": w}, st.floats(0.5, 4.0)),
    st.builds(lambda q, w: {"kind": "erlang", "q": q, "omega": w}, st.integers(1, 5), st.floats(0.5, 4.0)),
)
terms = st.lists(
    st.fixed_dictionaries({"kappa": st.floats(-5, 5), "m": st.integers(0, 4), "a": st.floats(0, 3)}),
    min_size=1,
    max_size=4,
)


@settings(max_examples=60, deadline=None)
@given(grids, models, terms, st.floats(0.01, 5.0))
def test_config_round_trip(grid, model, tms, lam):
    doc = {"command": "wfn", "queue": {"lambda": lam, "model": model}, "cost": {"kind": "exppoly", "terms": tms}, "grid": grid}
    once = cfgmod.validate(doc, "wfn")
    for fmt in ("yaml", "json"):
        again = cfgmod.validate(cfgmod.parse_text(cfgmod.dump(once, fmt)), "wfn")
        assert again == once
        assert cfgmod.spec_hash(again) == cfgmod.spec_hash(once)
