import json
import math
import shutil
import subprocess

import pytest

from spdelab import cli
from spdelab.errors import ConfigError

SMALL_STRONG = ["--set", "mc.seed=3", "--set", "mc.samples=60", "--set", "grid.k=[0.125,0.0625,0.03125]",
                "--set", "params.N_ref=64", "--set", "problem.J=8"]


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_all_subcommands_present():
    ap = cli.build_parser()
    sub = next(a for a in ap._actions if a.dest == "command")
    assert set(sub.choices) == set(cli.KINDS) | {"report"}
    assert len(cli.KINDS) == 10


def test_missing_seed_is_config_error(tmp_path, capsys):
    code, _, err = _run(["converge-weak-exact", "--out", str(tmp_path / "a.csv")], capsys)
    assert code == 2 and "seed" in err
    assert not (tmp_path / "a.csv").exists()


@pytest.mark.parametrize("bad", ["mc.seed=-1", "mc.seed=true", "grid.k=[]", "grid.k=[0.1,-0.2]",
                                 "mc.workers=0", "nosuch.key=1", "noequals"])
def test_bad_overrides(bad, tmp_path, capsys):
    code, _, err = _run(["converge-weak-exact", "--set", "mc.seed=1", "--set", bad,
                         "--out", str(tmp_path / "a.csv")], capsys)
    assert code == 2 and err.startswith("config error")


def test_unknown_config_block(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"solver": {}}))
    code, _, err = _run(["gronwall-demo", "--config", str(cfg), "--set", "mc.seed=0"], capsys)
    assert code == 2 and "solver" in err
    code, _, err = _run(["gronwall-demo", "--config", str(tmp_path / "missing.json")], capsys)
    assert code == 2 and "cannot read config" in err


def test_converge_weak_exact_rows_fit_and_manifest(tmp_path, capsys):
    out = tmp_path / "weak.csv"
    code, stdout, _ = _run(["converge-weak-exact", "--set", "mc.seed=0", "--out", str(out)], capsys)
    assert code == 0 and "PASS weak-exact" in stdout
    header, rows = cli.read_csv(out)
    assert header == cli.ex.COLUMNS
    data = [r for r in rows if r["flag"] == "ok"]
    fits = [r for r in rows if r["flag"] == "fit-k"]
    assert len(data) == 7 and len(fits) == 1
    assert 0.40 <= float(fits[0]["value"]) <= 0.55
    man = json.loads(out.with_suffix(".json").read_text())
    assert man["experiment"] == "converge-weak-exact" and man["seed"] == 0
    assert {"config", "config_digest", "versions", "wall_time", "checks"} <= set(man)
    assert man["config_digest"] == cli.config_digest(cli.resolve_config(
        "converge-weak-exact", overrides=["mc.seed=0"]))
    text = out.read_text()
    assert text.startswith("# spdelab converge-weak-exact\n# config-digest: ")


def test_worker_count_does_not_change_bytes(tmp_path, capsys, monkeypatch):
    outs = []
    for i, env in enumerate(("1", "8")):
        monkeypatch.setenv("SPDELAB_WORKERS", env)
        out = tmp_path / f"s{i}.csv"
        code, _, _ = _run(["converge-strong", *SMALL_STRONG, "--out", str(out)], capsys)
        assert code == 0
        outs.append(out.read_bytes())
    monkeypatch.delenv("SPDELAB_WORKERS")
    out = tmp_path / "s2.csv"
    _run(["converge-strong", *SMALL_STRONG, "--set", "mc.workers=3", "--out", str(out)], capsys)
    outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    # a different seed changes the body
    out = tmp_path / "s3.csv"
    _run(["converge-strong", *SMALL_STRONG, "--set", "mc.seed=4", "--out", str(out)], capsys)
    assert cli.csv_body(out.read_text()) != cli.csv_body(outs[0].decode())


def test_precondition_exit_code(tmp_path, capsys):
    code, _, err = _run(["probe-negnorm", "--set", "mc.seed=0", "--set", "params.gamma=0.7",
                         "--out", str(tmp_path / "n.csv")], capsys)
    assert code == 3 and "gamma" in err


def test_assert_flag_exit_code(tmp_path, capsys):
    argv = ["converge-weak-exact", "--set", "mc.seed=0", "--set", "params.window=[2.0,3.0]",
            "--out", str(tmp_path / "w.csv")]
    code, stdout, _ = _run(argv, capsys)
    assert code == 0 and "FAIL weak-exact" in stdout
    code, _, _ = _run(argv + ["--assert", "--quiet"], capsys)
    assert code == 4


def test_report_single_file_reproduces_fits(tmp_path, capsys):
    out = tmp_path / "weak.csv"
    _run(["converge-weak-exact", "--set", "mc.seed=0", "--out", str(out)], capsys)
    _, rows = cli.read_csv(out)
    stored = float(next(r for r in rows if r["flag"] == "fit-k")["value"])
    text, data, fits = cli.report([out])
    assert len(fits) == 1 and fits[0]["value"] == pytest.approx(stored, rel=1e-12)
    assert "k-slope=" in text


def test_report_pools_seeds(tmp_path, capsys):
    paths = []
    for seed in (3, 4):
        out = tmp_path / f"s{seed}.csv"
        _run(["converge-strong", *SMALL_STRONG, "--set", f"mc.seed={seed}", "--out", str(out)], capsys)
        paths.append(out)
    singles = [[cli._typed(r) for r in cli.read_csv(p)[1] if r["flag"] != "fit-k"] for p in paths]
    _, pooled, fits = cli.report(paths)
    assert len(pooled) == 3 and len(fits) == 1
    for i, r in enumerate(pooled):
        assert r["samples"] == 120
        assert r["stderr"] <= min(s[i]["stderr"] for s in singles)
        lo, hi = sorted(s[i]["value"] for s in singles)
        assert lo <= r["value"] <= hi


def test_report_errors(tmp_path, capsys):
    with pytest.raises(ConfigError, match="at least one"):
        cli.report([])
    code, _, err = _run(["report"], capsys)
    assert code == 2 and "at least one" in err
    a = tmp_path / "a.csv"
    _run(["converge-weak-exact", "--set", "mc.seed=0", "--out", str(a)], capsys)
    b = tmp_path / "b.csv"
    b.write_text(a.read_text().replace(",flag\n", ",status\n", 1))
    with pytest.raises(ConfigError, match="schema mismatch at column 'flag'"):
        cli.report([a, b])


def test_report_norm_tables(tmp_path, capsys):
    out = tmp_path / "norms.csv"
    code, _, _ = _run(["malliavin-norms", "--set", "mc.seed=1", "--set", "grid.h=[0.125]",
                       "--set", "grid.k=[0.125,0.0625]", "--set", "problem.J=16",
                       "--out", str(out)], capsys)
    assert code == 0
    header, rows = cli.read_csv(out)
    assert header == cli.NORM_COLUMNS and len(rows) == 2
    text, _, _ = cli.report([out])
    assert "variation" in text


def test_report_plots(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    out = tmp_path / "weak.csv"
    _run(["converge-weak-exact", "--set", "mc.seed=0", "--out", str(out)], capsys)
    code, _, _ = _run(["report", str(out), "--plot", str(tmp_path / "plots")], capsys)
    assert code == 0
    svgs = list((tmp_path / "plots").glob("*.svg"))
    assert len(svgs) == 1 and svgs[0].read_text().lstrip().startswith("<?xml")


@pytest.mark.parametrize("kind,extra", [
    ("ibp-test", ["--set", "mc.samples=2000"]),
    ("dual-probe", ["--set", "mc.samples=2000"]),
    ("markov-holder", []),
    ("gronwall-demo", []),
    ("probe-operators", ["--set", "grid.h=[0.0625,0.03125,0.015625]", "--set", "grid.k=[0.015625,0.00390625,0.0009765625]"]),
])
def test_quick_experiments_pass(kind, extra, tmp_path, capsys):
    code, stdout, _ = _run([kind, "--set", "mc.seed=0", *extra, "--assert",
                            "--out", str(tmp_path / f"{kind}.csv")], capsys)
    assert code == 0, stdout
    assert "FAIL" not in stdout


def test_config_digest_ignores_workers_and_output():
    a = cli.resolve_config("converge-strong", overrides=["mc.seed=1"])
    b = cli.resolve_config("converge-strong", overrides=["mc.seed=1", "mc.workers=4",
                                                         "output.path=x.csv"])
    c = cli.resolve_config("converge-strong", overrides=["mc.seed=2"])
    assert cli.config_digest(a) == cli.config_digest(b) != cli.config_digest(c)
    assert math.isclose(a["grid"]["k"][0], 0.125)


def test_console_script(tmp_path):
    exe = shutil.which("spdelab")
    if exe is None:
        pytest.skip("console script not installed")
    res = subprocess.run([exe, "gronwall-demo", "--set", "mc.seed=0", "--out",
                          str(tmp_path / "g.csv")], capture_output=True, text=True)
    assert res.returncode == 0 and "PASS" in res.stdout
