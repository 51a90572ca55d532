import csv
import json
import logging
import math
import re

import numpy as np
import pytest

from fedkernel import ConfigurationError, EmptySelectionError, InputShapeError
from fedkernel.harness import PlotSpec, ResultTable, emit_plot
from fedkernel.harness.config import (EXPERIMENTS, ExperimentConfig, config_from_dict, default_config,
                                      load_config)
from fedkernel.harness.experiments import plot_specs, run_experiment, trace_rounds, write_outputs
from fedkernel.harness.plotting import LOG_FLOOR, render_svg
from fedkernel.harness.results import COLUMNS, SUMMARY_COLUMNS, fmt


def small(experiment, **kw):
    cfg = default_config(experiment)
    scen = kw.pop("scenario", {})
    if scen:
        cfg = cfg.with_(scenario=cfg.scenario.with_(**scen))
    return cfg.with_(**kw)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_registered_ids(self):
        assert len(EXPERIMENTS) == 7
        for exp in EXPERIMENTS:
            assert default_config(exp).experiment == exp

    def test_full_scale_defaults(self):
        cfg = default_config("fig-grad-vs-rounds")
        assert (cfg.scenario.M, cfg.scenario.d, cfg.scenario.sizes[0], cfg.scenario.sigma) == (25, 100, 500, 0.5)
        assert cfg.eta == 0.1 and cfg.max_rounds == 1000 and cfg.trials == 20
        assert cfg.algorithms == ("fedavg:1", "fedavg:5", "fedavg:10", "fedprox")

    def test_unknown_experiment(self):
        with pytest.raises(ConfigurationError, match="unknown experiment"):
            ExperimentConfig("fig-nope")

    def test_trials_at_least_one(self):
        with pytest.raises(ConfigurationError):
            default_config("fig-err-vs-rounds").with_(trials=0)

    def test_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('experiment = "fig-err-vs-rounds"\ntrials = 3\nseed = 7\nalgorithms = ["fedavg:1", '
                     '"fedprox"]\nmax_rounds = 50\nM = 4\nd = 5\n')
        cfg = load_config(p)
        assert (cfg.trials, cfg.seed, cfg.max_rounds) == (3, 7, 50)
        assert cfg.algorithms == ("fedavg:1", "fedprox")
        assert cfg.scenario.sizes == (500,) * 4 and cfg.scenario.d == 5

    def test_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"experiment": "fg-vs-gamma", "M": 4, "sweep": [0, 1]}))
        cfg = load_config(p)
        assert cfg.scenario.sizes == (50, 50, 500, 500)
        assert cfg.sweep == (0, 1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="missing.toml"):
            load_config(tmp_path / "missing.toml")

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="bogus"):
            config_from_dict({"experiment": "fig-err-vs-rounds", "bogus": 1})

    def test_nested_table(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text('experiment = "fig-err-vs-rounds"\n[scenario]\nM = 3\n')
        with pytest.raises(ConfigurationError, match="flat"):
            load_config(p)

    def test_parse_error(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("experiment = \n")
        with pytest.raises(ConfigurationError, match="cannot parse"):
            load_config(p)

    def test_subspace_dimension_follows_d(self):
        cfg = config_from_dict({"experiment": "fg-vs-subspace-r", "d": 10, "sweep": [1, 5]})
        assert cfg.scenario.r == 10

    def test_bad_algorithm(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({"experiment": "fig-err-vs-rounds", "algorithms": ["adam"]})


class TestResultTable:
    def table(self):
        t = ResultTable("fig-err-vs-rounds")
        for trial, v in enumerate([1.0, 2.0, 4.0]):
            t.add("fedavg:1", 1, 0, "est_error", trial, v)
            t.add("fedprox", 1, 0, "est_error", trial, v / 10)
        return t

    def test_fmt(self):
        assert fmt(0.1) == "0.10000000000000001"
        assert fmt(3) == "3"
        assert fmt(2.0) == "2"
        assert float(fmt(1 / 3)) == 1 / 3

    def test_summary(self):
        s = {r.algorithm: r for r in self.table().summary()}["fedavg:1"]
        v = np.array([1.0, 2.0, 4.0])
        assert s.n == 3
        assert s.mean == pytest.approx(v.mean())
        assert s.stderr == pytest.approx(v.std(ddof=1) / math.sqrt(3))

    def test_single_trial_stderr(self):
        t = ResultTable("x")
        t.add("a", 1, 0, "m", 0, 5.0)
        assert t.summary()[0].stderr == 0.0

    def test_check_complete(self):
        t = self.table()
        t.check_complete(3)
        t.add("fedprox", 1, 0, "est_error", 3, 0.0)
        with pytest.raises(InputShapeError):
            t.check_complete(3)

    def test_csv_round_trip(self, tmp_path):
        t = self.table()
        t.derive("fedavg:1", 1, 0, "ratio", 3, 10.0)
        t.to_csv(tmp_path / "r.csv")
        t.summary_to_csv(tmp_path / "s.csv")
        rows = read_rows(tmp_path / "r.csv")
        assert tuple(rows[0]) == COLUMNS
        assert tuple(read_rows(tmp_path / "s.csv")[0]) == SUMMARY_COLUMNS
        back = ResultTable.from_csv(tmp_path / "r.csv", tmp_path / "s.csv")
        assert back.rows == t.rows
        assert [r.metric for r in back.derived] == ["ratio"]

    def test_bad_header(self, tmp_path):
        (tmp_path / "r.csv").write_text("a,b\n1,2\n")
        with pytest.raises(InputShapeError):
            ResultTable.from_csv(tmp_path / "r.csv")

    def test_series(self):
        x, m, se, n = self.table().series("est_error")["fedprox"]
        assert m[0] == pytest.approx(7 / 30)
        with pytest.raises(EmptySelectionError):
            self.table().series("nothing")


class TestPlots:
    def test_one_polyline_two_vertices(self):
        svg = render_svg({"a": ([0, 1], [1, 2])}, PlotSpec("m"))
        lines = re.findall(r'<polyline points="([^"]*)"', svg)
        assert len(lines) == 1
        assert len(lines[0].split()) == 2
        assert svg.startswith("<svg") and "<polygon" not in svg

    def test_four_legend_entries(self):
        t = ResultTable("fig-err-vs-rounds")
        for alg in ("fedavg:1", "fedavg:5", "fedavg:10", "fedprox"):
            for x in range(3):
                for trial in range(2):
                    t.add(alg, 1, x, "est_error", trial, 1.0 + x + trial)
        svg = emit_plot(t, PlotSpec("est_error"))
        assert svg.count('class="legend-entry"') == 4
        assert svg.count("<polygon") == 4  # one band per series with two trials

    def test_log_clamp_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="fedkernel"):
            svg = render_svg({"a": ([0, 1, 2], [1.0, 0.0, 1e-3])}, PlotSpec("grad_norm", log_y=True))
        assert any("clamped" in r.message and r.levelno == logging.WARNING for r in caplog.records)
        assert "1e-12" in svg or "1e-11" in svg or LOG_FLOOR > 0

    def test_empty_selection(self):
        with pytest.raises(EmptySelectionError):
            emit_plot(ResultTable("x"), PlotSpec("m"))
        with pytest.raises(EmptySelectionError):
            render_svg({}, PlotSpec("m"))


class TestRunExperiment:
    def test_zero_rounds(self):
        cfg = small("fig-grad-vs-rounds", trials=1, max_rounds=0, scenario=dict(M=3, d=4, sizes=10))
        t = run_experiment(cfg)
        assert {r[3] for r in t.rows} == {0}
        assert len(t.rows) == 4

    def test_trace_rounds(self):
        assert trace_rounds(10, 4) == [0, 4, 8, 10]
        assert trace_rounds(0, 5) == [0]

    def test_cells_have_all_trials(self):
        cfg = small("fig-err-vs-rounds", trials=3, max_rounds=4, scenario=dict(M=3, d=4, sizes=10))
        t = run_experiment(cfg)
        t.check_complete(3)
        assert t.metrics == ["est_error"]

    def test_deterministic_bytes(self, tmp_path):
        cfg = small("fg-vs-gamma", trials=2, max_rounds=30, sweep=(0.0, 2.0),
                    scenario=dict(M=4, d=6, sizes=(3, 3, 12, 12)))
        for name in ("a", "b"):
            write_outputs(run_experiment(cfg), cfg, tmp_path / name)
        for f in ("results.csv", "summary.csv", "run-manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    @pytest.mark.parametrize("exp", ["minibatch-sweep", "fg-vs-subspace-r", "chebyshev-rate"])
    def test_worker_count_does_not_change_results(self, tmp_path, exp):
        kw = dict(trials=2, max_rounds=20)
        if exp == "minibatch-sweep":
            kw.update(batch_sizes=(5,), scenario=dict(M=2, d=3, sizes=10))
        elif exp == "fg-vs-subspace-r":
            kw.update(sweep=(1, 3), scenario=dict(M=4, d=6, r=6, sizes=(3, 3, 12, 12)))
        else:
            kw.update(sweep=(1, 2), scenario=dict(M=4, sizes=1))
        cfg = small(exp, **kw)
        a = run_experiment(cfg.with_(workers=1))
        b = run_experiment(cfg.with_(workers=2))
        a.to_csv(tmp_path / "a.csv")
        b.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_fig_grad_s1_converges(self):
        cfg = small("fig-grad-vs-rounds", trials=1, max_rounds=300, algorithms=("fedavg:1", "fedavg:5"))
        t = run_experiment(cfg)
        final = {r[1]: r[6] for r in t.rows if r[3] == 300}
        assert final["fedavg:1"] < 1e-6
        assert final["fedavg:5"] > 1e-3

    def test_fg_outputs(self, tmp_path):
        cfg = small("fg-vs-gamma", trials=2, max_rounds=30, sweep=(0.0, 2.0),
                    scenario=dict(M=4, d=6, sizes=(3, 3, 12, 12)))
        t = run_experiment(cfg)
        assert t.meta["clients"] == {"c0": "scarce", "c2": "rich"}
        gains = [r for r in t.summary() if r.metric.startswith("gain:")]
        assert len(gains) == 2 * 2 * len(cfg.algorithms)
        files = write_outputs(t, cfg, tmp_path)
        assert "plot-gain-c0.svg" in files and "plot-gain-c2.svg" in files
        manifest = json.loads((tmp_path / "run-manifest.json").read_text())
        assert manifest["seed"] == cfg.seed and manifest["experiment"] == "fg-vs-gamma"
        assert "artifact_version" in manifest and manifest["config"]["trials"] == 2

    def test_gain_is_ratio_of_trial_means(self):
        cfg = small("fg-vs-gamma", trials=3, max_rounds=30, sweep=(1.0,), algorithms=("fedprox",),
                    scenario=dict(M=4, d=6, sizes=(3, 3, 12, 12)))
        t = run_experiment(cfg)
        loc = np.array([r[6] for r in t.select("local_err:c0")])
        fed = np.array([r[6] for r in t.select("fed_err:c0")])
        gain = [r for r in t.summary() if r.metric == "gain:c0"][0].mean
        assert gain == pytest.approx(np.mean(loc ** 2) / np.mean(fed ** 2), rel=1e-12)

    def test_chebyshev_reciprocal(self):
        cfg = small("chebyshev-rate", trials=3, max_rounds=50, sweep=(1, 2), scenario=dict(M=4, sizes=1))
        t = run_experiment(cfg)
        s = {(r.algorithm, r.x, r.metric): r.mean for r in t.summary()}
        assert s[("fedprox", 8, "inv_mse")] == pytest.approx(1 / s[("fedprox", 8, "mse")])
        assert {r[3] for r in t.rows} == {4, 8}

    def test_plot_specs_cover_metrics(self):
        for exp in ("fig-grad-vs-rounds", "fig-err-vs-rounds", "chebyshev-rate"):
            metrics = {p.metric for p in plot_specs(default_config(exp))}
            assert metrics
