import json
import subprocess
import sys
import time

import pytest

from gradlab.cli import EXIT_RUNTIME, EXIT_USAGE, UsageError, main, parse_config
from gradlab.sampler import read_snapshot


def test_empty_argv_is_usage(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_flags_parsed():
    cfg = parse_config(["sample", "--n", "64", "--seed", "7"])
    assert cfg["n"] == 64 and cfg["seed"] == 7
    assert cfg["burnin"] is None and cfg["potential"] == "quadratic"


def test_conflicting_potential():
    with pytest.raises(UsageError):
        parse_config(["sample", "--potential", "quadratic", "--eps", "0.5"])
    with pytest.raises(UsageError):
        parse_config(["sample", "--potential", "cos_perturbed"])
    assert main(["sample", "--bogus", "1"]) == EXIT_USAGE


def test_config_file_and_override(tmp_path):
    f = tmp_path / "c.ini"
    f.write_text("[common]\nseed = 3\npotential = cos_perturbed\neps = 0.5\n[sample]\nn = 5\nsamples = 7\n")
    cfg = parse_config(["sample", "--config", str(f), "--n", "6"])
    assert (cfg["seed"], cfg["n"], cfg["samples"], cfg["eps"]) == (3, 6, 7, 0.5)
    f.write_text("[sample]\nwat = 1\n")
    with pytest.raises(UsageError):
        parse_config(["sample", "--config", str(f)])
    f.write_text("[weird]\nn = 1\n")
    with pytest.raises(UsageError):
        parse_config(["sample", "--config", str(f)])


def test_sample_smoke_and_determinism(tmp_path):
    args = ["sample", "--n", "8", "--samples", "50", "--potential", "cos_perturbed", "--eps", "0.5", "--seed", "4"]
    t0 = time.perf_counter()
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert time.perf_counter() - t0 < 10
    names = ("snapshot.grdf", "snapshot.csv", "snapshot.json")
    first = {n: (tmp_path / "a" / n).read_bytes() for n in names}
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert all((tmp_path / "a" / n).read_bytes() == first[n] for n in names)
    N, arr = read_snapshot(tmp_path / "a" / "snapshot.grdf")
    assert N == 8 and arr.shape == (50, 17, 17)
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["seed"] == 4 and "wall_clock" in man and man["ess"]
    assert (tmp_path / "a" / "snapshot.csv").read_text().startswith("# config: {")


def test_invalid_output_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["sample", "--n", "2", "--samples", "2", "--out", str(blocker / "sub")]) == EXIT_RUNTIME


def test_mw_and_poincare(tmp_path):
    assert main(["mw", "--t-grid", "1,2", "--C", "1", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "mw.csv").read_text().splitlines()
    assert rows[1] == "t,integral,bound" and len(rows) == 4
    assert main(["poincare", "--m", "2", "--trials", "2", "--green-n", "2", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "poincare.json").read_text())["violations"] == 0
    assert (tmp_path / "green.csv").read_text().splitlines()[1] == "x,y,value"
    assert main(["mw", "--t-grid", "x", "--out", str(tmp_path)]) == EXIT_USAGE


def test_clt_summary(tmp_path):
    assert main(["clt", "--n", "8", "--samples", "500", "--g-hat", "0.11", "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert {"g_hat", "sup_gap", "eps1_fit", "C_fit"} <= set(s)
    assert (tmp_path / "charfn.csv").read_text().splitlines()[1] == "t,re,im,se"
    assert (tmp_path / "density.csv").read_text().splitlines()[1] == "x,density"


def test_homog_charfn_decouple(tmp_path):
    assert main(["homog", "--levels", "2", "--samples", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "homog.csv").read_text().splitlines()[1] == "level,p,nu,ahom_xx,ahom_xy,ahom_yy,flux_var"
    assert main(["charfn", "--n", "4", "--samples", "100", "--out", str(tmp_path)]) == 0
    assert main(["decouple", "--n", "12", "--samples", "100", "--boot", "19", "--out", str(tmp_path)]) == 0
    assert "ks_stat" in json.loads((tmp_path / "decouple.json").read_text())


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "gradlab"], capture_output=True, text=True)
    assert r.returncode == EXIT_USAGE
