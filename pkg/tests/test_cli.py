import csv
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from awbem.cli import (
    EXIT_ERROR,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    RunSpec,
    UsageError,
    build_spec,
    main,
    make_parser,
    read_config,
)

HEADER = ["step", "dofs", "residual", "delta", "wall_time_s"]


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_missing_surface_is_usage_error(capsys):
    assert main(["solve", "--mode", "uniform"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "usage:" in err and "--surface is required" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["solve", "--surface", "torus"],
        ["solve", "--surface", "cube", "--rhs", "point"],
        ["solve", "--surface", "cube", "--max-level", "99"],
        ["solve", "--surface", "cube", "--threads", "0"],
        ["solve", "--surface", "cube", "--eps", "small"],
        ["study", "--surface", "cube", "--window", "3"],
        ["verify", "nonsense"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "awbem: error:" in capsys.readouterr().err


def test_runtime_error_exit_code(capsys):
    assert main(["solve", "--surface", "fichera", "--alpha", "1.5", "--max-level", "1"]) == EXIT_ERROR
    assert "awbem: error:" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# cartoon run\nsurface = cube\nmode=uniform\nmax-level = 3  # cap\neps = 0.5\nno_timing = yes\n")
    assert read_config(str(cfg))["max_level"] == "3"
    args = make_parser().parse_args(["solve", "--config", str(cfg), "--max-level", "1"])
    spec = build_spec(args)
    assert spec == RunSpec(surface="cube", rhs="cartoon", mode="uniform", max_level=1, eps=0.5, timing=False)


@pytest.mark.parametrize("text", ["surface\n", "colour = red\n", "max_level = three\n", "no_timing = maybe\n"])
def test_bad_config_files(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    args = make_parser().parse_args(["solve", "--config", str(cfg)])
    with pytest.raises(UsageError):
        build_spec(args)


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.cfg")]) == EXIT_USAGE


def test_uniform_cartoon_dof_column(tmp_path, capsys):
    out = tmp_path / "u.csv"
    code = main(["solve", "--surface", "cube", "--rhs", "cartoon", "--mode", "uniform",
                 "--max-level", "4", "--csv", str(out)])
    assert code == EXIT_PARTIAL
    table = rows(out)
    assert table[0] == HEADER
    assert [int(r[1]) for r in table[1:]] == [24, 96, 384, 1536, 6144]
    assert "partial result" in capsys.readouterr().out


def test_adaptive_point_solve(tmp_path):
    out, dump, svg = tmp_path / "a.csv", tmp_path / "u.txt", tmp_path / "a.svg"
    code = main(["solve", "--surface", "fichera", "--rhs", "point", "--alpha", "0.5", "--mode", "adaptive",
                 "--eps", "0.08", "--csv", str(out), "--dump-solution", str(dump), "--svg", str(svg),
                 "--threads", "2"])
    assert code == EXIT_OK
    table = rows(out)
    assert table[0] == HEADER
    dofs = [int(r[1]) for r in table[1:]]
    assert dofs == sorted(dofs) and len(dofs) >= 3
    assert float(table[-1][2]) <= 0.08
    assert dump.read_text().strip()
    ET.fromstring(svg.read_text())


def test_study_writes_csv_svg_and_rates(tmp_path, capsys):
    out, svg, cache = tmp_path / "s.csv", tmp_path / "s.svg", tmp_path / "rhs.npz"
    argv = ["study", "--surface", "cube", "--rhs", "cartoon", "--max-level", "2", "--eps", "0.3",
            "--csv", str(out), "--svg", str(svg), "--cache", str(cache), "--no-timing"]
    code = main(argv)
    assert code == EXIT_PARTIAL  # uniform stops at the level cap
    printed = capsys.readouterr().out
    assert "uniform: rate" in printed and "adaptive:" in printed
    table = rows(out)
    assert table[0] == ["mode"] + HEADER
    modes = {r[0] for r in table[1:]}
    assert modes == {"uniform", "adaptive"}
    assert all(r[-1] == "0" for r in table[1:])
    root = ET.fromstring(svg.read_text())
    text = svg.read_text()
    assert root.tag.endswith("svg") and "stroke-dasharray" in text
    assert "http" not in text.replace("http://www.w3.org/2000/svg", "")
    assert cache.exists()
    # a second run reuses the cache and reproduces the table
    first = out.read_text()
    assert main(argv) == EXIT_PARTIAL
    assert out.read_text() == first


@pytest.mark.parametrize("suite", ["quadrature", "basis", "appendix", "oracle"])
def test_verify_suites_pass(suite, capsys):
    assert main(["verify", suite]) == EXIT_OK
    printed = capsys.readouterr().out
    assert f"{suite}: all pass" in printed
    assert "FAIL " not in printed


def test_verify_quadrature_lists_named_checks(capsys):
    main(["verify", "quadrature"])
    printed = capsys.readouterr().out
    assert "gauss closure" in printed and "coplanar" in printed


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "awbem", "solve"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert "usage: awbem" in proc.stderr
