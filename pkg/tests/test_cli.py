import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from gelfand import cli
from gelfand.errors import ConfigError
from gelfand.report import read_csv
from test_solver import SHOOTING


def _run(tmp_path, *args):
    return cli.main(list(args) + ["-o", str(tmp_path)])


def test_exponents_row(tmp_path, capsys):
    assert _run(tmp_path, "exponents", "--domain.m=2", "--domain.k=6") == 0
    header, rows = read_csv(tmp_path / "exponents.csv")
    row = dict(zip(header, rows[0]))
    assert float(row["q_mk"]) == pytest.approx(2.083075, abs=1e-6)
    assert float(row["p_mk"]) == pytest.approx(50.150, abs=1e-3)
    assert "2.083075" in capsys.readouterr().out


def test_solve_at_zero(tmp_path):
    assert _run(tmp_path, "solve", "--solver.lambda=0", "--solver.h=1/32") == 0
    header, rows = read_csv(tmp_path / "solution.csv")
    assert header == ["i", "j", "s", "t", "value"]
    assert all(float(r[-1]) == 0.0 for r in rows)


def test_standing_assumption_rejected(tmp_path, capsys):
    assert _run(tmp_path, "solve", "--domain.m=1") == 2
    err = capsys.readouterr().err
    assert "domain.m" in err and "m>=2 and k>=2" in err


def test_beyond_fold_is_nonconvergence(tmp_path, capsys):
    assert _run(tmp_path, "solve", "--solver.lambda=50", "--solver.h=1/32") == 3
    assert "solver.lambda" in capsys.readouterr().err


@pytest.mark.parametrize("args,key", [
    (["--analysis.delta=2"], "analysis.delta"),
    (["--solver.h=abc"], "solver.h"),
    (["--nonlinearity.kind=cubic"], "nonlinearity"),
    (["--domain.kind=ellipse"], "domain.kind"),
])
def test_invalid_inputs_name_the_key(tmp_path, capsys, args, key):
    assert _run(tmp_path, "boundary", "--solver.h=1/32", *args) == 2
    assert key in capsys.readouterr().err


def test_override_parsing():
    cfg = cli.load_config("solve", overrides=["--solver.h=1/16", "--domain.dumbbell_extra=x"])
    assert cfg.number("solver", "h") == 0.0625
    assert cfg.get("domain", "dumbbell_extra") == "x"
    assert cfg.numbers("solver", "ladder") == [1 / 32, 1 / 64, 1 / 128]
    with pytest.raises(ConfigError):
        cli.load_config("solve", overrides=["--solverh=1"])
    with pytest.raises(ConfigError):
        cli.load_config("nope")


def test_bad_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        _run(tmp_path, "solve", "--bogus")
    assert info.value.code == 2


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("[domain]\nkind = super-ellipse\nm = 3\nk = 3\ne = 4\n\n[solver]\nh = 1/16\n")
    cfg = cli.load_config("solve", path, ["--domain.k=2"])
    spec = cli.domain_spec(cfg)
    assert (spec.m, spec.k, spec.generator.kind) == (3, 2, "super-ellipse")
    assert cfg.number("solver", "h") == 1 / 16
    missing = cli.run("solve", tmp_path / "absent.cfg", output_dir=tmp_path)
    assert missing == 2


def _sweep(tmp_path, name, command, threads, *args):
    out = tmp_path / name
    env = dict(os.environ, GELFAND_THREADS=str(threads))
    subprocess.run([sys.executable, "-m", "gelfand", command, "-o", str(out), "--master-seed=11", *args],
                   check=True, env=env, capture_output=True)
    return (out / f"{command}.csv").read_bytes()


def test_isoperimetric_sweep_deterministic(tmp_path):
    runs = [_sweep(tmp_path, f"r{i}", "isoperimetric", t, "--inequalities.sweep_size=10")
            for i, t in enumerate((1, 2, 2))]
    assert runs[0] == runs[1] == runs[2]
    header, rows = read_csv(tmp_path / "r0" / "isoperimetric.csv")
    assert tuple(header) == cli.SWEEP_COLUMNS
    assert len(rows) == 15 * 10
    assert all(r[-1] == "true" for r in rows)


def test_master_seed_changes_instances(tmp_path):
    a = _sweep(tmp_path, "a", "isoperimetric", 1, "--inequalities.sweep_size=5")
    env = dict(os.environ, GELFAND_THREADS="1")
    subprocess.run([sys.executable, "-m", "gelfand", "isoperimetric", "-o", str(tmp_path / "b"),
                    "--master-seed=12", "--inequalities.sweep_size=5"], check=True, env=env)
    assert (tmp_path / "b" / "isoperimetric.csv").read_bytes() != a


def test_sobolev_sweep_deterministic(tmp_path):
    args = ("--inequalities.sweep_size=3", "--inequalities.a=-0.5, 1", "--inequalities.b=1",
            "--inequalities.q=1")
    runs = [_sweep(tmp_path, f"s{i}", "sobolev", t, *args) for i, t in enumerate((1, 2))]
    assert runs[0] == runs[1]
    header, rows = read_csv(tmp_path / "s0" / "sobolev.csv")
    assert len(rows) == 6
    assert [int(r[3]) for r in rows] == list(range(6))
    summary = json.loads((tmp_path / "s0" / "sobolev.json").read_text())
    assert summary["all_finite"] is True


def test_exponent_grid_skips_inadmissible_cells():
    cfg = cli.load_config("sobolev", overrides=["--inequalities.a=-0.5, 0.5", "--inequalities.b=-0.5",
                                                "--inequalities.q=1, 3"])
    assert cli._exponent_grid(cfg, True) == [(0.5, -0.5, 1.0)]
    cfg = cli.load_config("sobolev", overrides=["--inequalities.a=-2"])
    with pytest.raises(Exception, match="inequalities.a"):
        cli._exponent_grid(cfg, True)


def test_case_sweep_flags_failed_rows(tmp_path):
    code = _run(tmp_path, "sweep", "--sweep.mk=2x2", "--sweep.nonlinearities=exp",
                "--sweep.domains=quarter-disc, dumbbell", "--solver.ladder=1/8, 1/16, 1/32")
    assert code == 0
    header, rows = read_csv(tmp_path / "sweep.csv")
    assert tuple(header) == cli.CASE_COLUMNS
    by_domain = {r[4]: dict(zip(header, r)) for r in rows}
    assert by_domain["quarter-disc"]["failed"] == "false"
    assert float(by_domain["quarter-disc"]["lambda_star"]) == pytest.approx(SHOOTING[("exp", 4)], rel=0.05)
    # the dumbbell neck is thinner than the coarsest spacing resolves
    assert by_domain["dumbbell"]["failed"] == "true" and by_domain["dumbbell"]["message"]
    assert math.isnan(float(by_domain["dumbbell"]["lambda_star"]))


def test_case_sweep_rejects_bad_split(tmp_path, capsys):
    assert _run(tmp_path, "sweep", "--sweep.mk=1x3") == 2
    assert "m>=2 and k>=2" in capsys.readouterr().err


def test_branch_and_stability_outputs(tmp_path):
    assert _run(tmp_path, "branch", "--solver.h=1/32") == 0
    header, rows = read_csv(tmp_path / "branch.csv")
    lam = np.array([float(r[header.index("lambda")]) for r in rows])
    assert np.all(np.diff(lam) > 0)
    info = json.loads((tmp_path / "branch.json").read_text())
    assert info["interval"][0] <= info["mu1_fold"] <= info["interval"][1]
    assert _run(tmp_path, "stability", "--solver.h=1/32", "--solver.lambda=0") == 0
    mu1 = json.loads((tmp_path / "stability.json").read_text())["mu1"]
    assert mu1 == pytest.approx(14.68, rel=0.01)


@pytest.mark.slow
def test_lambda_star_json_matches_oracle(tmp_path):
    assert _run(tmp_path, "lambda-star") == 0
    info = json.loads((tmp_path / "lambda_star.json").read_text())
    lo, hi = info["interval"]
    assert lo < hi
    ref = SHOOTING[("exp", 4)]
    assert abs(info["extrapolated"] - ref) / ref < 5e-3


def test_readme_sample_config_parses(tmp_path):
    readme = (Path(__file__).parent.parent / "README.md").read_text()
    block = readme.split("```\n[domain]", 1)[1].split("```", 1)[0]
    path = tmp_path / "sample.cfg"
    path.write_text("[domain]" + block)
    cfg = cli.load_config("exponents", path)
    assert cfg.get("domain", "kind") == "quarter-disc"
    assert cfg.numbers("solver", "ladder") == [1 / 32, 1 / 64, 1 / 128]
    assert cfg.numbers("analysis", "p_list") == []
    assert cli.run("exponents", path, output_dir=tmp_path) == 0
