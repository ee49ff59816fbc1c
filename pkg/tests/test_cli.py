import json
import math

import numpy as np
import pytest

from netlump.cli import (
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_PARSE,
    EXIT_RESOURCE,
    EXIT_VALIDATION,
    atomic_write,
    main,
)
from tests.conftest import SIR

DIST = "powerlaw:alpha=2.4,kmax=40"
INIT = "fractions:S=0.95,I=0.05"


@pytest.fixture
def sir_file(tmp_path):
    p = tmp_path / "sir.txt"
    p.write_text(SIR)
    return str(p)


def _csv(path):
    with open(path) as fh:
        head = fh.readline().strip().split(",")
    return head, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _run(*argv):
    return main([str(a) for a in argv])


def test_solve_writes_csv_and_summary(sir_file, tmp_path):
    out, summ = tmp_path / "o.csv", tmp_path / "s.json"
    rc = _run("solve", "--model", sir_file, "--dist", DIST, "--init", INIT, "--tmax", 5,
              "--method", "pa", "--samples", 11, "--out", out, "--summary", summ)
    assert rc == EXIT_OK
    head, data = _csv(out)
    assert head == ["t", "x_S", "x_I", "x_R"]
    assert data.shape == (11, 4)
    assert np.allclose(data[:, 1:].sum(axis=1), 1.0, atol=1e-6)
    s = json.loads(summ.read_text())
    for key in ("command", "model_digest", "dist", "method", "n_unknowns", "rtol", "atol",
                "t_max", "samples", "init", "times"):
        assert key in s
    assert s["n_unknowns"] == (9 + 3) * 40
    assert len(s["model_digest"]) == 64


def test_mf_equals_dbmf_on_regular(sir_file, tmp_path):
    res = {}
    for m in ("mf", "dbmf"):
        out = tmp_path / f"{m}.csv"
        assert _run("solve", "--model", sir_file, "--dist", "delta:k=10", "--init", INIT,
                    "--tmax", 5, "--method", m, "--rtol", 1e-10, "--atol", 1e-12, "--out", out) == 0
        res[m] = _csv(out)[1]
    assert np.abs(res["mf"] - res["dbmf"]).max() <= 1e-8


@pytest.mark.parametrize("method", ["dbmf", "pa"])
def test_lump_with_all_bins_equals_solve(sir_file, tmp_path, method):
    full, lump = tmp_path / "f.csv", tmp_path / "l.csv"
    base = ["--model", sir_file, "--dist", DIST, "--init", INIT, "--tmax", 5, "--method", method,
            "--rtol", 1e-10, "--atol", 1e-12]
    assert _run("solve", *base, "--out", full) == 0
    assert _run("lump", *base, "--bins", 40, "--out", lump) == 0
    assert np.abs(_csv(full)[1] - _csv(lump)[1]).max() <= 1e-8
    eps, summ = tmp_path / "e.csv", tmp_path / "s.json"
    assert _run("compare", *base, "--bins", 40, "--out", eps, "--summary", summ) == 0
    head, data = _csv(eps)
    assert head == ["t", "eps"]
    assert data[:, 1].max() <= 1e-8
    s = json.loads(summ.read_text())
    assert s["n_bins"] == 40 and s["eps_tot"] <= 1e-8


def test_compare_partition_and_traj_out(sir_file, tmp_path):
    part, traj = tmp_path / "p.json", tmp_path / "t.csv"
    rc = _run("compare", "--model", sir_file, "--dist", DIST, "--init", INIT, "--tmax", 5,
              "--method", "dbmf", "--bins", 6, "--out", tmp_path / "e.csv",
              "--partition-out", part, "--traj-out", traj)
    assert rc == 0
    bins = json.loads(part.read_text())
    assert len(bins) == 6 and bins[0][0] == 1 and bins[-1][1] == 40
    assert _csv(traj)[0] == ["t", "x_S", "x_I", "x_R"]


def test_bins_merges_and_partition(tmp_path, capsys):
    assert _run("bins", "--dist", "uniform:kmax=20") == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["merges"]) == 19
    assert [m["removed_start"] for m in out["merges"][:3]] == [20, 18, 16]
    assert _run("bins", "--dist", "uniform:kmax=20", "--bins", 4) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["partition"]) == 4


def test_bins_auto_needs_model():
    assert _run("bins", "--dist", DIST, "--auto") == EXIT_VALIDATION


def test_lump_needs_exactly_one_selector(sir_file):
    base = ["lump", "--model", sir_file, "--dist", DIST, "--init", INIT, "--tmax", 1, "--method", "pa"]
    assert _run(*base) == EXIT_VALIDATION
    assert _run(*base, "--bins", 3, "--auto") == EXIT_VALIDATION
    assert _run(*base, "--bins", 99) == EXIT_VALIDATION


def test_simulate_reproducible(sir_file, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"s{i}.csv"
        assert _run("simulate", "--model", sir_file, "--dist", "powerlaw:alpha=2.4,kmax=20", "--init", INIT,
                    "--tmax", 2, "--samples", 11, "--nodes", 300, "--runs", 3, "--seed", 7, "--out", out) == 0
        outs.append(out.read_text())
    assert outs[0] == outs[1]
    assert outs[0].splitlines()[0] == "t,x_S,x_I,x_R,se_S,se_I,se_R"


def test_count(capsys):
    assert _run("count", "--kmax", 1000, "--states", 2) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["ame"] == 1001 * 1002 and out["dbmf"] == 2000 and out["pa"] == 6000
    assert _run("count", "--kmax", 500, "--states", 3) == 0
    assert json.loads(capsys.readouterr().out)["pa"] == 6000


def test_count_from_model(sir_file, capsys):
    assert _run("count", "--kmax", 5, "--model", sir_file) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["states"] == 3 and out["ame"] == 3 * math.comb(8, 3)
    assert _run("count", "--kmax", 5) == EXIT_VALIDATION


def test_exit_parse(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("states: S, I\nS + -> I : 1\n")
    assert _run("solve", "--model", bad, "--dist", DIST, "--init", INIT, "--tmax", 1, "--method", "pa") == EXIT_PARSE


def test_exit_validation(sir_file, tmp_path):
    args = ["solve", "--model", sir_file, "--tmax", 1, "--method", "pa"]
    assert _run(*args, "--dist", "powerlaw:alpha=2.4", "--init", INIT) == EXIT_VALIDATION
    assert _run(*args, "--dist", DIST, "--init", "fractions:S=0.5,I=0.1") == EXIT_VALIDATION
    assert _run(*args, "--dist", DIST, "--init", "fractions:Q=1") == EXIT_VALIDATION
    assert _run("solve", "--model", tmp_path / "missing.txt", "--dist", DIST, "--init", INIT,
                "--tmax", 1, "--method", "pa") == EXIT_VALIDATION


def test_exit_numerical(tmp_path):
    m = tmp_path / "inf.txt"
    m.write_text("states: S, I\nS + I -> I + I : 1e308\nI -> S : 1\n")
    for method in ("dbmf", "pa"):
        rc = _run("solve", "--model", m, "--dist", DIST, "--init", INIT, "--tmax", 1, "--method", method,
                  "--out", tmp_path / "o.csv")
        assert rc == EXIT_NUMERICAL
    assert not (tmp_path / "o.csv").exists()


def test_exit_resource_ame_cap(sir_file, capsys):
    rc = _run("solve", "--model", sir_file, "--dist", "powerlaw:alpha=2.4,kmax=1000", "--init", INIT,
              "--tmax", 1, "--method", "ame")
    assert rc == EXIT_RESOURCE
    assert "unknowns" in capsys.readouterr().err


def test_atomic_write(tmp_path):
    p = tmp_path / "f.txt"
    p.write_text("old")
    atomic_write(p, "new")
    assert p.read_text() == "new"
    assert [q.name for q in tmp_path.iterdir()] == ["f.txt"]
    with pytest.raises(OSError):
        atomic_write(tmp_path / "nodir" / "f.txt", "x")
