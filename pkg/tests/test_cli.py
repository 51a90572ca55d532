import json
import logging

import pytest

from fedkernel.harness.cli import LOCK_NAME, _owned, main, resolve_out_dir
from fedkernel.harness.config import EXPERIMENTS
from fedkernel.harness.plotting import render_svg
from fedkernel.harness import PlotSpec

TINY = ('experiment = "fig-grad-vs-rounds"\ntrials = 2\nmax_rounds = 20\nM = 3\nd = 4\nsizes = 6\n'
        'algorithms = ["fedavg:1", "fedprox"]\n')


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_list(capsys):
    assert main(["list"]) == 0
    assert capsys.readouterr().out.split() == list(EXPERIMENTS)


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "missing.toml"
    assert main(["run", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["nope"], ["run"], ["run", "--experiment", "fig-nope"],
                                  ["run", "--experiment", "fig-grad-vs-rounds", "--seed", "x"]])
def test_bad_arguments_exit_nonzero(argv, capsys):
    assert main(argv) != 0
    assert capsys.readouterr().err


def test_invalid_config_value(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('experiment = "fig-grad-vs-rounds"\ntrials = 0\n')
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "trials" in capsys.readouterr().err


def test_same_seed_same_tree(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(tiny), "--seed", "7", "--out", str(a)]) == 0
    assert main(["run", "--config", str(tiny), "--seed", "7", "--out", str(b)]) == 0
    ta, tb = tree(a), tree(b)
    assert set(ta) == {"results.csv", "summary.csv", "plot-grad_norm.svg", "run-manifest.json", "run.log"}
    assert ta == tb
    manifest = json.loads(ta["run-manifest.json"])
    assert manifest["seed"] == 7 and manifest["trials"] == 2
    assert not (a / LOCK_NAME).exists()


def test_different_seed_differs(tiny, tmp_path):
    main(["run", "--config", str(tiny), "--seed", "1", "--out", str(tmp_path / "a")])
    main(["run", "--config", str(tiny), "--seed", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()


def test_json_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"experiment": "fig-err-vs-rounds", "trials": 1, "max_rounds": 5, "M": 2, "d": 3,
                             "sizes": 4}))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "plot-est_error.svg").is_file()


class TestOutputDirectory:
    def test_precedence(self, monkeypatch):
        monkeypatch.setenv("FEDKERNEL_OUT", "env")
        assert str(resolve_out_dir("cli", "cfg", "x", 0)) == "cli"
        assert str(resolve_out_dir(None, "cfg", "x", 0)) == "env"
        monkeypatch.delenv("FEDKERNEL_OUT")
        assert str(resolve_out_dir(None, "cfg", "x", 0)) == "cfg"
        assert str(resolve_out_dir(None, None, "x", 3)).endswith("x-seed3")

    def test_environment_variable_used(self, tiny, tmp_path, monkeypatch):
        monkeypatch.setenv("FEDKERNEL_OUT", str(tmp_path / "env"))
        assert main(["run", "--config", str(tiny)]) == 0
        assert (tmp_path / "env" / "results.csv").is_file()

    def test_locked_directory(self, tiny, tmp_path, capsys):
        out = tmp_path / "o"
        out.mkdir()
        (out / LOCK_NAME).write_text("1")
        assert main(["run", "--config", str(tiny), "--out", str(out)]) == 2
        assert "locked" in capsys.readouterr().err
        assert not (out / "results.csv").exists()


def test_log_clamp_reaches_run_log(tmp_path):
    with _owned(tmp_path):
        render_svg({"a": ([0, 1], [1.0, 0.0])}, PlotSpec("grad_norm", log_y=True))
    text = (tmp_path / "run.log").read_text()
    assert "WARNING" in text and "clamped" in text
    assert not logging.getLogger("fedkernel").handlers


def test_converged_run_logs_clamp(tmp_path):
    # noise-free s=1 drives the gradient norm to rounding level, below the log-axis floor
    p = tmp_path / "c.toml"
    p.write_text('experiment = "fig-grad-vs-rounds"\ntrials = 1\nmax_rounds = 2000\nM = 2\nd = 2\nsizes = 10\n'
                 'sigma = 0.0\nalgorithms = ["fedavg:1"]\n')
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert "clamped" in (tmp_path / "o" / "run.log").read_text()


def test_check_command(capsys):
    code = main(["check", "--seed", "0"])
    out = capsys.readouterr().out.splitlines()
    assert code == 0
    assert out[-1] == "all checks passed"
    assert sum(line.startswith("[PASS]") for line in out) >= 12


def test_plot_regenerates(tiny, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["run", "--config", str(tiny), "--out", str(run)]) == 0
    original = (run / "plot-grad_norm.svg").read_bytes()
    again = tmp_path / "again"
    assert main(["plot", str(run), "--out", str(again)]) == 0
    assert (again / "plot-grad_norm.svg").read_bytes() == original
    assert str(again / "plot-grad_norm.svg") in capsys.readouterr().out


def test_plot_without_results(tmp_path, capsys):
    assert main(["plot", str(tmp_path)]) == 2
    assert "results.csv" in capsys.readouterr().err
