import csv
import json

import pytest

from qhydro.cli import main
from qhydro.scenario import SchemaError, apply_overrides, bundled_ids, load, load_raw, parse_override, validate

BUNDLED = {"ho-ground-1p", "free-gauss-1p", "coupled-ho-2p", "perm-equal-mass", "perm-unequal-mass",
           "noneq-guided", "noneq-selfconsistent", "uniqueness-probe"}


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# --- list ---------------------------------------------------------------------

def test_list_contains_bundled_ids(capsys):
    code, out, _ = _run(["list"], capsys)
    assert code == 0
    assert BUNDLED <= {line.split()[0] for line in out.splitlines()[1:]}


def test_list_json(capsys):
    code, out, _ = _run(["list", "--json"], capsys)
    rows = json.loads(out)
    assert code == 0 and {r["id"] for r in rows} == set(bundled_ids())
    assert all(set(r) == {"id", "description"} for r in rows)


def test_list_filter_without_match(capsys):
    code, out, _ = _run(["list", "no-such-scenario"], capsys)
    assert code == 0
    assert out.splitlines()[1:] == []


# --- schema ---------------------------------------------------------------------

def test_every_bundled_scenario_validates():
    for sid in bundled_ids():
        assert load(sid).id == sid


def test_override_parsing():
    assert parse_override("evolution.dt_over_dx=0.05") == (["evolution", "dt_over_dx"], 0.05)
    assert parse_override("scheme=fd4") == (["scheme"], "fd4")
    raw = apply_overrides(load_raw("ho-ground-1p"), ["refinements=[256, 512, 1024]"])
    assert raw["refinements"] == [256, 512, 1024]
    with pytest.raises(SchemaError):
        parse_override("no-equals-sign")


@pytest.mark.parametrize("patch,field", [
    ({"schema_version": 99}, "schema_version"),
    ({"checks": ["bogus"]}, "checks[0]"),
    ({"space": {"dim": 3}}, "space.dim"),
    ({"refinements": [512, 256, 1024]}, "refinements"),
    ({"tolerances": {"made_up": 1.0}}, "tolerances.made_up"),
    ({"mystery": 1}, "mystery"),
])
def test_schema_errors_name_the_field(patch, field):
    raw = load_raw("ho-ground-1p")
    raw.update(patch)
    with pytest.raises(SchemaError) as exc:
        validate(raw)
    assert exc.value.field == field


def test_one_body_check_on_two_body_scenario_rejected():
    raw = load_raw("coupled-ho-2p")
    raw["checks"] = ["wave_1p"]
    with pytest.raises(SchemaError):
        validate(raw)


# --- run --------------------------------------------------------------------------

def test_run_ho_ground(tmp_path, capsys):
    code, out, _ = _run(["run", "ho-ground-1p", "--out", str(tmp_path)], capsys)
    assert code == 0, out
    bundle = tmp_path / "ho-ground-1p"
    meta = json.loads((bundle / "bundle.json").read_text())
    assert meta["status"] == "pass" and meta["exit_code"] == 0
    for art in meta["artifacts"]:
        assert (bundle / art).is_file()
    rows = [r for r in csv.DictReader((bundle / "residuals.csv").open()) if r["equation"] == "wave_1p"]
    assert float(rows[-1]["Linf"]) < 1e-4


def test_run_with_oversized_step_aborts(tmp_path, capsys):
    code, out, _ = _run(["run", "ho-ground-1p", "--override", "evolution.dt_over_dx=10", "--out", str(tmp_path)],
                        capsys)
    assert code == 3
    assert "time step too large" in out


def test_run_unknown_check_is_schema_error(tmp_path, capsys):
    code, _, err = _run(["run", "ho-ground-1p", "--override", 'checks=["bogus"]', "--out", str(tmp_path)], capsys)
    assert code == 2
    assert "checks[0]" in err


def test_run_missing_file(tmp_path, capsys):
    code, _, err = _run(["run", str(tmp_path / "nope.json")], capsys)
    assert code == 2 and "schema error" in err


def test_run_json_and_env_output_root(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QHYDRO_OUT", str(tmp_path / "env"))
    code, out, _ = _run(["run", "uniqueness-probe", "--json"], capsys)
    payload = json.loads(out)
    assert code == 0 and payload["exit_code"] == 0
    assert payload["bundle"].startswith(str(tmp_path / "env"))


# --- report ---------------------------------------------------------------------------

def test_report_convergence_table(tmp_path, capsys):
    main(["run", "free-gauss-1p", "--out", str(tmp_path)])
    capsys.readouterr()
    code, out, _ = _run(["report", str(tmp_path / "free-gauss-1p")], capsys)
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "free-gauss-1p" / "report.csv").open()))
    for eq in ("continuity_1p", "hj_1p", "momentum_1p", "wave_1p", "wave_equilibrium_1p"):
        orders = [r for r in rows if r["check"] == eq and r["metric"] == "order_L2"]
        assert len(orders) == 2
    assert "literal form inconsistent" in out


def test_report_unequal_mass_defect(tmp_path, capsys):
    main(["run", "perm-unequal-mass", "--out", str(tmp_path)])
    capsys.readouterr()
    code, out, _ = _run(["report", str(tmp_path)], capsys)
    meta = json.loads((tmp_path / "perm-unequal-mass" / "bundle.json").read_text())
    defect = next(c for c in meta["checks"] if c["name"] == "permutation")
    assert code == 0
    assert "swap_defect_max = 0.3758" in out
    assert defect["passed"]


def test_report_empty_dir(tmp_path, capsys):
    code, _, err = _run(["report", str(tmp_path)], capsys)
    assert code == 1 and "no bundle found" in err


def test_report_partial_bundle(tmp_path, capsys):
    main(["run", "uniqueness-probe", "--out", str(tmp_path)])
    (tmp_path / "uniqueness-probe" / "metrics.csv").unlink()
    capsys.readouterr()
    code, out, _ = _run(["report", str(tmp_path / "uniqueness-probe")], capsys)
    assert code == 1
    assert "missing artifacts: metrics.csv" in out


def test_round_trip_is_bit_for_bit(tmp_path, capsys):
    main(["run", "ho-ground-1p", "--out", str(tmp_path / "a")])
    echo = json.loads((tmp_path / "a" / "ho-ground-1p" / "bundle.json").read_text())["scenario"]
    path = tmp_path / "echo.json"
    path.write_text(json.dumps(echo))
    main(["run", str(path), "--out", str(tmp_path / "b")])
    capsys.readouterr()
    for name in ("residuals.csv", "metrics.csv"):
        assert (tmp_path / "a" / "ho-ground-1p" / name).read_bytes() == (tmp_path / "b" / "ho-ground-1p" / name).read_bytes()
