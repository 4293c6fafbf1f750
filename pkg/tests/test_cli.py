import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from projtractor.cli import (
    ConfigError,
    RunConfig,
    config_text,
    format_number,
    main,
    parse_config,
    strata_csv,
)

KLEIN = """\
[chart]
dimension = 2
model = klein_ball

[run]
command = strata
grid = 13
"""


def _run(tmp_path, text, *extra, name="run.cfg"):
    cfg = tmp_path / name
    cfg.write_text(text, encoding="utf-8")
    out = tmp_path / (name + ".out")
    code = main(["--config", str(cfg), "--out", str(out), *extra])
    return code, out


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text(encoding="utf-8"))))


def test_klein_strata(tmp_path, capsys):
    code, out = _run(tmp_path, KLEIN)
    assert code == 0
    report = (out / "report.txt").read_text(encoding="utf-8")
    assert "compactification: order 2" in report
    assert "-- config --" in report and "seed 0" in report
    rows = _rows(out / "strata.csv")
    assert list(rows[0]) == ["x1", "x2", "rankL", "p", "q", "r", "stratum", "tau", "sigma", "det_zeta", "S", "scalar_curv"]
    assert len(rows) == 169
    for row in rows:
        r = np.hypot(float(row["x1"]), float(row["x2"]))
        expected = "plus" if r < 1 - 1e-9 else "minus" if r > 1 + 1e-9 else "zero"
        assert row["stratum"] == expected
        assert row["sigma"] == ""
    center = next(r for r in rows if float(r["x1"]) == 0 and float(r["x2"]) == 0)
    assert center["stratum"] == "plus" and float(center["tau"]) > 0
    assert "order 2" in capsys.readouterr().out


def test_bytes_deterministic(tmp_path):
    _, a = _run(tmp_path, KLEIN, name="a.cfg")
    _, b = _run(tmp_path, KLEIN, name="b.cfg")
    assert (a / "strata.csv").read_bytes() == (b / "strata.csv").read_bytes()
    assert (a / "locus.csv").read_bytes() == (b / "locus.csv").read_bytes()
    assert b"\r\n" not in (a / "strata.csv").read_bytes()


def test_rank_n_strata_with_h0(tmp_path):
    text = """\
[chart]
dimension = 2
model = rank_n_flat

[solution]
h0 = 1, 0, 1; 0, 1, 0; 1, 0, 1

[run]
grid = 9
"""
    code, out = _run(tmp_path, text)
    assert code == 0
    report = (out / "report.txt").read_text(encoding="utf-8")
    assert "compactification: order 1" in report
    assert "boundary type Sigma_+" in report
    rows = _rows(out / "strata.csv")
    assert {r["rankL"] for r in rows} == {"2"}
    for r in rows:
        # on the rank-n branch tau is the weighted determinant, equal to sigma^2
        assert r["tau"] == r["det_zeta"]
        assert float(r["sigma"]) ** 2 == pytest.approx(float(r["tau"]), abs=1e-12)


def test_solve_perturbed(tmp_path):
    text = "[chart]\ndimension = 2\nmodel = perturbed_flat\n\n[run]\ncommand = solve\n"
    code, out = _run(tmp_path, text)
    assert code == 0
    assert "dim = 0" in (out / "report.txt").read_text(encoding="utf-8")


def test_transport_command(tmp_path):
    text = """\
[chart]
dimension = 2
domain.1 = -1, 1
domain.2 = -1, 1

[solution]
h0 = 1, 0, 1; 0, 1, 0; 1, 0, 1

[path]
vertices = 0, 0; 0.5, 0; 0.5, 0.5

[run]
command = transport
"""
    code, out = _run(tmp_path, text)
    assert code == 0
    last = _rows(out / "transport.csv")[-1]
    # zeta at (0.5, 0.5) from the closed form
    assert float(last["H11"]) == pytest.approx(0.25, abs=1e-12)
    assert float(last["H12"]) == pytest.approx(-0.25, abs=1e-12)
    assert float(last["H22"]) == pytest.approx(1.25, abs=1e-12)


def test_analyze_command(tmp_path):
    text = "[chart]\ndimension = 2\nmodel = klein_ball\nparam.representative = levi_civita\n\n[run]\ncommand = analyze\ngrid = 3\n"
    code, out = _run(tmp_path, text)
    assert code == 0
    assert (out / "curvature.csv").read_text(encoding="utf-8").startswith("x1,x2,")


def test_verify_subset(tmp_path, capsys):
    code, out = _run(tmp_path, "[run]\ncommand = verify\ncriteria = 2, 7\n")
    assert code == 0
    text = capsys.readouterr().out
    assert "PASS criterion 2" in text and "PASS criterion 7" in text
    assert "criterion 1:" not in text


def test_hypothesis_failure_exit_code(tmp_path, capsys):
    text = """\
[chart]
dimension = 2
model = flat

[solution]
h0 = 1, 0, 0; 0, 0, 0; 0, 0, 0

[run]
grid = 5
"""
    code, _ = _run(tmp_path, text)
    assert code == 2
    assert "rank" in capsys.readouterr().err


def test_trivial_space_is_an_error(tmp_path):
    code, _ = _run(tmp_path, "[chart]\ndimension = 2\nmodel = perturbed_flat\n")
    assert code == 1


@pytest.mark.parametrize(
    "text, line",
    [
        ("[chart]\ndimension = 2\ndomain.1 = -1, 1\ndomain.2 = -1, 1\ngamma.1.2.1 = x1\n", 5),
        ("[chart]\ndimension = 2\ndomain.1 = -1, 1\ndomain.2 = -1, 1\ngamma.1.1.2 = sin(x1\n", 5),
        ("[chart]\ndimension = 7\n", 2),
        ("[chart]\ndimension = 2\nmodel = flat\n[run]\ngrid = two\n", 5),
        ("[chart]\ndimension = 2\nmodel = flat\n[tolerances]\ntol_rank = -1\n", 5),
        ("[chart]\ndimension = 2\nmodel = flat\n[run]\ngrid = 2\n", 5),
    ],
)
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_config_error_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "[chart]\ndimension = 2\nmodel = flat\ncolour = red\n")
    assert code == 1
    assert "line 4" in capsys.readouterr().err


def test_config_round_trip():
    text = """\
[chart]
dimension = 3
domain.1 = -1, 1
domain.2 = -0.5, 2
domain.3 = 0, 1
gamma.1.1.2 = x2 / (1 + x1^2)   # a comment
gamma.3.3.3 = 0.1*x3

[solution]
zeta.1.1 = 1 - x1^2
base_point = 0, 0.5, 0.5

[path]
vertices = 0, 0.5, 0.5; 0.2, 0.5, 0.5

[run]
command = transport
seed = 4
grid = 7

[tolerances]
tol_rank = 1e-8
ode_step = 0.0005
"""
    cfg = parse_config(text)
    assert isinstance(cfg, RunConfig)
    again = parse_config(config_text(cfg))
    assert again == cfg
    assert config_text(again) == config_text(cfg)


def test_header_only_csv():
    assert strata_csv(3) == "x1,x2,x3,rankL,p,q,r,stratum,tau,sigma,det_zeta,S,scalar_curv\n"


def test_number_format():
    assert format_number(0.1) == "0.10000000000000001"
    assert float(format_number(1 / 3)) == 1 / 3
    assert format_number(-0.0) == "0"
    assert format_number(None) == "" and format_number(float("nan")) == ""


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "v.cfg"
    cfg.write_text("[run]\ncommand = verify\ncriteria = 7\n", encoding="utf-8")
    proc = subprocess.run(
        [sys.executable, "-m", "projtractor", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "PASS criterion 7" in proc.stdout
