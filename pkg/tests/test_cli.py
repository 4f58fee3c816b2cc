import csv
import subprocess
import sys

import pytest

from triplewell.cli import EXIT_INVALID, EXIT_OK, EXIT_USAGE, main, run
from triplewell.solver import read_field


def write_cfg(path, body):
    path.write_text(body)
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def manifest_files(out):
    lines = (out / "manifest.txt").read_text().splitlines()
    start = lines.index("[files]")
    return dict(line.split(" = ") for line in lines[start + 1:] if line)


def test_angles_equal_costs(tmp_path):
    cfg = write_cfg(tmp_path / "a.cfg", "[junction]\ncosts = 1.0, 1.0, 1.0\n")
    assert run("angles", cfg, out=tmp_path / "out") == EXIT_OK
    table = rows(tmp_path / "out" / "angles.csv")
    assert table[1][:3] == ["120", "120", "120"]


def test_compare_partitions_exponent(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", "[junction]\ncosts = 2.0, 2.0, 2.0\n")
    assert run("compare-partitions", cfg, out=tmp_path / "out") == EXIT_OK
    table = rows(tmp_path / "out" / "compare_summary.csv")
    assert table[0][0] == "fitted_exponent"
    assert float(table[1][0]) == pytest.approx(0.5, abs=0.1)


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    assert run("angles", missing, out=tmp_path / "out") == EXIT_INVALID
    assert str(missing) in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", str(tmp_path / "x.cfg")])
    assert exc.value.code == EXIT_USAGE
    assert run("frobnicate", tmp_path / "x.cfg") == EXIT_USAGE


def test_parse_error_reports_line(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "bad.cfg", "[junction]\nthis line has no separator\n")
    assert run("angles", cfg, out=tmp_path / "out") == EXIT_INVALID
    assert "line 2" in capsys.readouterr().err


def test_triangle_violation_is_validation_error(tmp_path):
    cfg = write_cfg(tmp_path / "t.cfg", "[junction]\ncosts = 1.0, 1.0, 3.0\n")
    assert run("angles", cfg, out=tmp_path / "out") == EXIT_INVALID


def test_rerun_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path / "p.cfg",
                    "[run]\nseed = 7\n[junction]\ncosts = 1.0, 2.0, 2.5\n"
                    "[partition]\nrestarts = 2\n")
    for name in ("r1", "r2"):
        assert run("partition", cfg, out=tmp_path / name) == EXIT_OK
    m1, m2 = manifest_files(tmp_path / "r1"), manifest_files(tmp_path / "r2")
    assert m1 == m2 and set(m1) == {"network.txt", "paths.csv", "partition.csv"}
    assert ((tmp_path / "r1" / "manifest.txt").read_bytes()
            == (tmp_path / "r2" / "manifest.txt").read_bytes())


def test_manifest_covers_every_output(tmp_path):
    cfg = write_cfg(tmp_path / "a.cfg", "[junction]\ncosts = 1.0, 1.0, 1.0\n")
    run("angles", cfg, out=tmp_path / "out")
    listed = set(manifest_files(tmp_path / "out"))
    on_disk = {p.name for p in (tmp_path / "out").iterdir()} - {"manifest.txt"}
    assert listed == on_disk


def test_solve_then_diagnose_and_probe(tmp_path):
    cfg = write_cfg(tmp_path / "s.cfg", "[solver]\ntol = 1e-7\n")
    out = tmp_path / "solve"
    assert main(["solve", str(cfg), "--grid", "64", "--R", "8", "--out", str(out)]) == EXIT_OK
    table = rows(out / "solve.csv")
    assert table[1][0] == "64" and float(table[1][1]) == 8.0
    field = read_field(out / "field.twac")
    assert field.grid.nx == 64 and field.bc == "dirichlet"
    assert (out / "labels.pgm").read_bytes().startswith(b"P5\n64 64\n255\n")

    dcfg = write_cfg(tmp_path / "d.cfg",
                     f"[diagnose]\nfield = {out / 'field.twac'}\n[diagnostics]\nR = 8\n"
                     f"radii = 0.25, 0.5, 0.9\n[probe]\nfield = {out / 'field.twac'}\nR = 8\n"
                     "trials = 2\ntol = 1e-7\n")
    assert run("diagnose", dcfg, out=tmp_path / "diag") == EXIT_OK
    summary = rows(tmp_path / "diag" / "circle_summary.csv")
    assert abs(float(summary[1][5])) == 1.0
    assert run("probe", dcfg, out=tmp_path / "probe") == EXIT_OK
    assert rows(tmp_path / "probe" / "probe_summary.csv")[1][3] == "True"


def test_solve_convergence_failure_exit_code(tmp_path):
    cfg = write_cfg(tmp_path / "s.cfg", "[solver]\ngrid = 32\nR = 8\ntol = 1e-14\nmax_iter = 1\n")
    assert run("solve", cfg, out=tmp_path / "o") == 3


def test_threads_env_fallback(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path / "a.cfg", "[junction]\ncosts = 1.0, 1.0, 1.0\n")
    monkeypatch.setenv("TWAC_THREADS", "3")
    run("angles", cfg, out=tmp_path / "out")
    assert "threads = 3" in (tmp_path / "out" / "manifest.txt").read_text()
    monkeypatch.setenv("TWAC_THREADS", "0")
    assert run("angles", cfg, out=tmp_path / "out2") == EXIT_INVALID


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path / "a.cfg", "[junction]\ncosts = 1.0, 1.0, 1.0\n")
    proc = subprocess.run([sys.executable, "-m", "triplewell", "angles", str(cfg), "--out",
                           str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "angles.csv").exists()
