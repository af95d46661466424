import json
import subprocess
import sys

import numpy as np
import pytest

from fracpme.citations import CITATIONS
from fracpme.cli import main
from fracpme.experiments import (
    ORACLES,
    REGISTRY,
    ConfigError,
    compare_reference,
    list_experiments,
    load_config,
    make_datum,
    run_experiment,
    set_path,
    sweep,
)
from fracpme.grid import mass, save_field

FAST = ["linear-kernel-check", "mass-conservation", "property-suite", "energy-identity", "parameter-continuity",
        "dirichlet-suite", "ode-limit", "operator-cross-validation", "resolvent-contraction", "inequalities",
        "mass-leak-scaling"]


def cfg(name, **over):
    return {"schema_version": 1, "experiment": name, **over}


def write(tmp_path, data, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_registry_listing_is_stable():
    names = [e["name"] for e in list_experiments()]
    assert names == list(REGISTRY)
    assert len(names) == len(set(names)) >= 14
    for e in list_experiments():
        assert e["reference"] in CITATIONS
        load_config(e["defaults"])  # every default validates


@pytest.mark.parametrize("name", FAST)
def test_fast_experiments_pass_and_cite(name):
    b = run_experiment(cfg(name), write=False)
    assert b.passed, [v.line() for v in b.verdicts]
    assert b.verdicts
    assert all(v.reference in CITATIONS for v in b.verdicts)


@pytest.mark.parametrize(
    "override,field",
    [
        ({"schema_version": 2}, "schema_version"),
        ({"experiment": "nope"}, "experiment"),
        ({"params": {"sigma": 2.5}}, "params.sigma"),
        ({"params": {"m": -1}}, "params.m"),
        ({"grid": {"points_per_dim": 7}}, "grid.points_per_dim"),
        ({"grid": {"dim": 3}}, "grid.dim"),
        ({"grid": {"half_length": "x"}}, "grid.half_length"),
        ({"mode": "finite-volume"}, "mode"),
        ({"schedule": {"T": -1}}, "schedule.T"),
        ({"schedule": {"n": 2.5}}, "schedule.n"),
        ({"schedule": {"tau": -0.1}}, "schedule.tau"),
        ({"schedule": {"T": 1.0, "n": 10, "tau": 0.5}}, "schedule.tau"),
        ({"checks": {"mass": {"tol": -1e-3}}}, "checks.mass.tol"),
        ({"datum": {"kind": "triangle"}}, "datum.kind"),
    ],
)
def test_malformed_config_names_the_field(override, field):
    raw = {**cfg("mass-conservation"), **override}
    with pytest.raises(ConfigError) as info:
        load_config(raw)
    assert field in info.value.errors


def test_load_config_sources(tmp_path):
    raw = cfg("mass-conservation", params={"m": 3.0})
    a = load_config(raw)
    b = load_config(json.dumps(raw))
    c = load_config(write(tmp_path, raw))
    assert a.raw == b.raw == c.raw
    assert a.params.m == 3.0 and a.params.sigma == 1.0  # merged with defaults
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def test_set_path():
    raw = cfg("mass-conservation")
    out = set_path(raw, "params.m", 0.5)
    assert out["params"]["m"] == 0.5 and "params" not in raw
    with pytest.raises(ConfigError):
        set_path({"a": 1}, "a.b", 2)


def test_datums(tmp_path):
    c = load_config(cfg("mass-conservation", datum={"kind": "bump", "width": 1.0, "mass": 2.0}))
    assert mass(make_datum(c)) == pytest.approx(2.0)
    g = load_config(cfg("mass-conservation", datum={"kind": "bump", "shape": "gaussian", "amplitude": 3.0}))
    assert make_datum(g).values.max() == pytest.approx(3.0, rel=1e-3)
    assert np.all(make_datum(load_config(cfg("mass-conservation", datum={"kind": "zero"}))).values == 0)
    h = make_datum(load_config(cfg("mass-conservation", datum={"kind": "heat_kernel", "t0": 1.0})))
    assert mass(h) == pytest.approx(1.0, rel=1e-10)
    r = load_config(cfg("mass-conservation", datum={"kind": "random", "seed": 4, "nonnegative": True}))
    assert np.array_equal(make_datum(r).values, make_datum(r).values)
    assert make_datum(r).values.min() >= 0
    path = tmp_path / "f.bin"
    save_field(h, path)
    f = make_datum(load_config(cfg("mass-conservation", datum={"kind": "from_file", "path": str(path)})))
    assert np.array_equal(f.values, h.values)


def test_bundle_contents_and_bit_exact_rerun(tmp_path):
    raw = cfg("mass-conservation", schedule={"T": 0.5, "n": 20})
    a = run_experiment(raw, tmp_path / "a")
    b = run_experiment(raw, tmp_path / "b")
    for name in ("manifest.json", "verdicts.json", "verdicts.csv", "series.csv", "plot.csv", "snapshots/trajectory.json"):
        assert (a.path / name).exists()
    assert (a.path / "series.csv").read_bytes() == (b.path / "series.csv").read_bytes()
    man = json.loads((a.path / "manifest.json").read_text())
    assert man["status"] == "complete"
    assert set(man["versions"]) >= {"fracpme", "numpy", "scipy", "python"}
    assert man["config"]["schedule"]["n"] == 20
    for v in json.loads((a.path / "verdicts.json").read_text()):
        assert v["reference"] in CITATIONS


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACPME_OUTPUT", str(tmp_path / "root"))
    b = run_experiment(cfg("mass-conservation", schedule={"T": 0.1, "n": 2}))
    assert b.path == tmp_path / "root" / "mass-conservation"


def test_nonconvergence_marks_bundle_failed(tmp_path):
    raw = cfg("mass-conservation", solver={"max_newton_iters": 1, "residual_tol_abs": 1e-15},
              datum={"kind": "bump", "amplitude": 50.0, "width": 0.5})
    b = run_experiment(raw, tmp_path / "x")
    assert b.status == "failed" and not b.passed
    assert json.loads((tmp_path / "x" / "manifest.json").read_text())["status"] == "failed"


@pytest.mark.parametrize("jobs", (1, 2))
def test_sweep(tmp_path, jobs):
    raw = cfg("mass-conservation", schedule={"T": 0.2, "n": 4})
    out = sweep(raw, "params.m", [0.5, 2.0], tmp_path / f"s{jobs}", jobs=jobs)
    assert [b.passed for b in out] == [True, True]
    assert (tmp_path / f"s{jobs}" / "params.m=0.5" / "manifest.json").exists()


def test_compare_linear_first_order():
    raw = cfg("linear-kernel-check", params={"m": 1.0}, mode="symbol", reference="linear",
              schedule={"T": 0.5, "n": 16}, grid={"half_length": 8.0, "points_per_dim": 64})
    rep = compare_reference(raw)
    assert rep.oracle == "linear"
    assert rep.ladder == [16, 32, 64]
    assert all(0.9 < o < 1.1 for o in rep.orders)
    assert rep.errors["l1"][0] == 0.0


def test_compare_rejects_mismatched_oracle():
    with pytest.raises(ConfigError):
        compare_reference(cfg("mass-conservation", reference="linear"))  # m = 2
    with pytest.raises(ConfigError):
        compare_reference(cfg("mass-conservation", reference="bogus"))
    with pytest.raises(ConfigError):
        compare_reference(cfg("mass-conservation", params={"m": 0.5}, reference="ode"))
    assert set(ORACLES) == {"linear", "separated", "ode"}


def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in REGISTRY)


def test_cli_run_exit_codes(tmp_path, capsys):
    ok = write(tmp_path, cfg("mass-conservation", schedule={"T": 0.2, "n": 4}), "ok.json")
    assert main(["run", ok, "--out", str(tmp_path / "ok")]) == 0
    assert "[PASS] mass-conservation" in capsys.readouterr().out
    # an impossible tolerance on the zero-exterior window must fail the verdict
    bad = write(tmp_path, cfg("mass-conservation", mode="kernel-freespace", checks={"mass": {"tol": 1e-14}},
                              grid={"half_length": 3.0, "points_per_dim": 32}), "bad.json")
    assert main(["run", bad, "--out", str(tmp_path / "bad")]) == 1
    assert "[FAIL]" in capsys.readouterr().out
    broken = write(tmp_path, cfg("mass-conservation", params={"sigma": 3}), "broken.json")
    assert main(["run", broken]) == 2
    assert "params.sigma" in capsys.readouterr().err


def test_cli_sweep_compare_resolve_calibrate(tmp_path, capsys):
    c = write(tmp_path, cfg("mass-conservation", schedule={"T": 0.2, "n": 4}))
    assert main(["sweep", c, "--param", "params.sigma", "--values", "0.5,1.5", "--out", str(tmp_path / "sw")]) == 0
    capsys.readouterr()
    lin = write(tmp_path, cfg("linear-kernel-check", reference="linear", schedule={"T": 0.2, "n": 4}), "lin.json")
    assert main(["compare", lin]) == 0
    assert json.loads(capsys.readouterr().out)["oracle"] == "linear"
    assert main(["resolve", c, "--tau", "0.1"]) == 0
    assert json.loads(capsys.readouterr().out)["converged"]
    ext = write(tmp_path, cfg("extinction-separated", grid={"half_length": 50.0, "points_per_dim": 256}), "ext.json")
    assert main(["calibrate-extinction", ext, "--out", str(tmp_path / "cal")]) == 0
    d = json.loads((tmp_path / "cal" / "calibration.json").read_text())
    assert d["alpha"] == pytest.approx(1.5)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "fracpme", "list"], capture_output=True, text=True)
    assert r.returncode == 0 and "mass-conservation" in r.stdout
