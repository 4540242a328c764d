from __future__ import annotations

import textwrap
from pathlib import Path

import numpy as np
import pytest

from fracalderon import operator
from fracalderon.cli import RunReport, load_config, main
from fracalderon.core import read_fhf
from fracalderon.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
[grid]
N_t = 16
N_x = 16

[model]
s = 0.5
potential = bump 0 0 0.3 0.5
potential2 = constant 0.1

[run]
seed = 3
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def _run(tmp_path, command, text, *extra):
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    report = (out / "report.txt").read_text() if (out / "report.txt").exists() else ""
    return code, RunReport.parse(report), out


@pytest.mark.parametrize("command", ["forward", "dnmap", "alessandrini", "selftest"])
def test_commands_succeed_on_small_grid(tmp_path, command):
    code, rep, out = _run(tmp_path, command, SMALL)
    assert code == 0
    assert rep["command"] == command
    assert all(v == "pass" for k, v in rep.items() if k.startswith("check."))


def test_runge_command(tmp_path):
    text = SMALL.replace("16", "32").replace("[run]\n", "[run]\nK = 4 16\n")
    code, rep, _ = _run(tmp_path, "runge", text)
    assert code == 0
    assert float(rep["error_K16"]) < float(rep["error_K4"])


def test_extension_command(tmp_path):
    code, rep, _ = _run(tmp_path, "extension", (CONFIGS / "extension.ini").read_text())
    assert code == 0
    assert abs(float(rep["fitted_constant"]) + 1.0) < 1e-4


def test_manufactured_forward_config(tmp_path):
    code, rep, out = _run(tmp_path, "forward", (CONFIGS / "forward.ini").read_text())
    assert code == 0
    assert float(rep["manufactured_error"]) < 1e-8
    assert (out / "u.fhf").exists() and (out / "u.csv").exists()


def test_zero_datum_gives_zero_field(tmp_path):
    code, rep, out = _run(tmp_path, "forward", SMALL + "datum = zero\n")
    assert code == 0
    assert not np.any(read_fhf(out / "u.fhf").values)
    code, rep, _ = _run(tmp_path, "dnmap", SMALL + "datum = zero\n")
    assert code == 0 and float(rep["output_norm"]) == 0.0


def test_bad_geometry_exit_code(tmp_path, capsys):
    text = SMALL + "\n[geometry]\nomega = rect -0.5 0.5\ncontrol = rect 0.2 1.5\n"
    code, _, _ = _run(tmp_path, "forward", text)
    assert code == 2
    assert "GeometryError" in capsys.readouterr().err


def test_config_error_is_line_numbered(tmp_path, capsys):
    text = SMALL.replace("s = 0.5", "s = 1.5")
    code, _, _ = _run(tmp_path, "forward", text)
    assert code == 2
    err = capsys.readouterr().err
    assert "ConfigError" in err and "line 6" in err
    with pytest.raises(ConfigError) as exc:
        load_config(text="[grid]\nN_t = sixteen\n")
    assert exc.value.line == 2


def test_nonconvergence_exit_code(tmp_path, capsys):
    text = SMALL + "\n[solver]\ntol = 1e-15\nmax_iters = 2\n"
    code, _, _ = _run(tmp_path, "forward", text)
    assert code == 3
    assert "NonConvergence" in capsys.readouterr().err


def test_check_failure_exit_code(tmp_path):
    code, rep, _ = _run(tmp_path, "selftest", SMALL + "tol = 1e-300\n")
    assert code == 1
    assert rep["check.duality"] == "fail"


def test_determinism(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = _run(tmp_path / "a", "dnmap", SMALL)[1]
    b = _run(tmp_path / "b", "dnmap", SMALL)[1]
    keys = [k for k in a if k not in ("wall_time",) and not k.startswith("output")]
    for k in keys:
        if k.startswith("check.") or k in ("command", "config_digest"):
            assert a[k] == b[k]
        else:
            assert float(a[k]) == pytest.approx(float(b[k]), rel=1e-12, abs=1e-300)


def test_seed_override_changes_data(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = _run(tmp_path / "a", "dnmap", SMALL)[1]
    b = _run(tmp_path / "b", "dnmap", SMALL, "--seed", "99")[1]
    assert a["output_norm"] != b["output_norm"]


def test_outputs_stay_under_out_dir(tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    cfg = _write(tmp_path, SMALL)
    assert main(["forward", "--config", str(cfg), "--out", "results"]) == 0
    assert [p.name for p in work.iterdir()] == ["results"]
    rep = RunReport.parse((work / "results" / "report.txt").read_text())
    for k, v in rep.items():
        if k.startswith("output"):
            assert Path(v).resolve().is_relative_to((work / "results").resolve())


def test_selftest_negative_control(tmp_path, monkeypatch):
    real = operator.symbol

    def wrong_branch(grid, exponent, variant="forward"):
        # adjoint silently uses the forward branch
        return real(grid, exponent, "forward")

    monkeypatch.setattr(operator, "symbol", wrong_branch)
    code, rep, _ = _run(tmp_path, "selftest", SMALL)
    assert code == 1
    assert rep["check.duality"] == "fail"


def test_selftest_default_config_passes(tmp_path):
    code, rep, _ = _run(tmp_path, "selftest", (CONFIGS / "selftest.ini").read_text())
    assert code == 0
    for name in ("duality", "coercivity", "mapping_bound", "causality", "plancherel"):
        assert rep[f"check.{name}"] == "pass"


def test_threads_flag_validated(tmp_path):
    cfg = _write(tmp_path, SMALL)
    assert main(["forward", "--config", str(cfg), "--out", str(tmp_path / "o"), "--threads", "0"]) == 2


def test_report_roundtrip():
    r = RunReport("forward", "abc", 1.5, {"x": 0.1}, {"ok": True}, ["out/u.fhf"])
    parsed = RunReport.parse(r.to_text())
    assert parsed["x"] == "0.1" and parsed["check.ok"] == "pass" and parsed["output"] == "out/u.fhf"

