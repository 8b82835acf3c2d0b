import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from pfopt.core import SearchDomain
from pfopt.harness import (
    MC_HEADER,
    QUANTILE_ROWS,
    SWEEP_HEADER,
    CheckpointBeforeFirstIteration,
    McStudy,
    MissingOptimum,
    SweepStudy,
    default_config,
    error_at_checkpoint,
    export,
    final_errors,
    final_position_errors,
    load_csv,
    load_json,
    quantile_table,
    rank_summary,
    run_mc,
    run_sweep,
    sample_parameters,
)
from pfopt.objective import get_objective
from pfopt.pfo import PfoConfig, RunTrace, TraceRecord, run


def _short_study(**kw):
    cfg = default_config("H2", "pfo", k_max=15)
    return McStudy("H2", config=cfg, n_trials=kw.pop("n_trials", 4), **kw)


class TestDefaults:
    def test_table_rows(self):
        cfg = default_config("H4", "pfo")
        assert (cfg.n_particles, cfg.lam, cfg.Q, cfg.R) == (100, 2.0, 1e-7, 0.5)
        cfg = default_config("H12", "pfo")
        assert (cfg.k_max, cfg.n_particles, cfg.gamma, cfg.R) == (400, 200, 0.4, 1.0)
        np.testing.assert_array_equal(cfg.Q_matrix(2), np.diag([3e-3, 1e-4]))
        assert default_config("H8", "pso").v_max == 7.18

    def test_overrides_and_unknown_optimizer(self):
        assert default_config("H2", "pfo", lam=4.0).lam == 4.0
        with pytest.raises(ValueError):
            default_config("H2", "annealing")


class TestMonteCarlo:
    def test_single_trial_rmse_is_the_error(self):
        study = run_mc(_short_study(n_trials=1))
        trace = study.traces[0]
        expected = [np.linalg.norm(r.x_hat - 1.0) for r in trace.records]
        np.testing.assert_allclose(study.rmse_x[: len(trace)], expected, rtol=0, atol=1e-15)
        np.testing.assert_allclose(study.rmse_y[: len(trace)], np.abs(trace.column("y_hat")), atol=1e-15)

    def test_degenerate_start_at_optimum(self):
        cfg = default_config("H2", "pfo", Q=1e-30, k_max=10)
        study = McStudy("H2", config=cfg, n_trials=3, domain=SearchDomain([1 - 1e-9], [1 + 1e-9]))
        run_mc(study)
        assert np.max(study.rmse_x) <= 1e-9

    def test_h2_reference_decay(self):
        study = run_mc(McStudy("H2", n_trials=10, base_seed=0))
        # frozen from the reference run: 0.5486 at k = 1, 0.0801 at the end
        assert study.rmse_x[0] == pytest.approx(0.5486, abs=5e-4)
        assert study.rmse_x[-1] < study.rmse_x[0] / 5

    def test_padding_and_fes(self):
        study = run_mc(_short_study(n_trials=3))
        k_len = max(len(t) for t in study.traces)
        for arr in (study.rmse_x, study.rmse_y, study.mean_pxx, study.mean_pyy, study.mean_ess):
            assert arr.shape == (k_len,)
        assert np.all(np.diff(study.fes) >= 0)
        assert np.all((study.mean_ess >= 1) & (study.mean_ess <= 50))

    def test_trial_seeds_are_independent_of_trial_count(self):
        a = run_mc(_short_study(n_trials=2, base_seed=10))
        b = run_mc(_short_study(n_trials=4, base_seed=10))
        for ta, tb in zip(a.traces, b.traces):
            np.testing.assert_array_equal(ta.column("y_hat"), tb.column("y_hat"))
        assert not np.array_equal(b.traces[0].column("y_hat"), b.traces[1].column("y_hat"))

    def test_thread_count_does_not_change_results(self):
        a = run_mc(_short_study(n_trials=5), threads=1)
        b = run_mc(_short_study(n_trials=5), threads=4)
        for key in ("rmse_x", "rmse_y", "mean_pxx", "mean_pyy", "mean_ess", "fes"):
            np.testing.assert_array_equal(getattr(a, key), getattr(b, key))

    def test_missing_optimum(self, monkeypatch):
        study = _short_study()
        bare = replace(get_objective("H2"), known_optimum=None)
        monkeypatch.setattr(McStudy, "target", lambda self: bare)
        with pytest.raises(MissingOptimum):
            run_mc(study)

    def test_pso_trials(self):
        cfg = default_config("H6_noiseless", "pso", k_max=10)
        study = run_mc(McStudy("H6_noiseless", optimizer="pso", config=cfg, n_trials=2))
        np.testing.assert_array_equal(study.fes, 150 * np.arange(2, 12))

    def test_final_errors(self):
        study = run_mc(_short_study(n_trials=3))
        true = final_errors(study)
        np.testing.assert_allclose(true, [(t.best_x[0] - 1.0) ** 2 for t in study.traces])
        np.testing.assert_allclose(final_errors(study, "observed"), [abs(t.best_y) for t in study.traces])
        np.testing.assert_allclose(final_position_errors(study), [abs(t.best_x[0] - 1) for t in study.traces])
        with pytest.raises(ValueError):
            final_errors(study, "median")


def _trace(fes_and_y):
    tr = RunTrace(reason="k_max")
    for k, (fes, y) in enumerate(fes_and_y, start=1):
        tr.records.append(TraceRecord(k=k, x_hat=np.zeros(1), y_hat=y, p_xx=np.zeros((1, 1)),
                                      p_yy=0.0, ess=1.0, fes=fes))
    return tr


class TestQuantiles:
    def test_identical_errors(self):
        vals = rank_summary(np.full(25, 0.3))
        np.testing.assert_allclose(vals[:6], 0.3)
        assert vals[6] == 0.0

    def test_arithmetic_ranks(self):
        vals = dict(zip(QUANTILE_ROWS, rank_summary(np.arange(25, 0, -1.0))))
        assert vals["1st (best)"] == 1
        assert vals["7th"] == 7
        assert vals["13th (median)"] == 13
        assert vals["19th"] == 19
        assert vals["25th (worst)"] == 25
        assert vals["mean"] == 13
        # sample variance of 1..n is n(n + 1) / 12
        assert vals["std"] == pytest.approx(math.sqrt(25 * 26 / 12), rel=1e-12)

    def test_checkpoint_uses_best_so_far(self):
        tr = _trace([(100, 3.0), (200, 1.0), (300, 2.0)])
        assert error_at_checkpoint(tr, 0.5, 250) == 0.5
        assert error_at_checkpoint(tr, 0.5, 1000) == 0.5
        assert error_at_checkpoint(tr, 0.0, 150) == 3.0
        with pytest.raises(CheckpointBeforeFirstIteration):
            error_at_checkpoint(tr, 0.0, 99)

    def test_table_from_study(self):
        study = run_mc(_short_study(n_trials=5))
        table = quantile_table(study, [1000, 2000])
        assert table.values.shape == (2, 7)
        assert table.best(1000) <= table.median(1000) <= table.row(1000, "25th (worst)")
        np.testing.assert_array_equal(table.values[0], rank_summary(table.errors[0]))
        with pytest.raises(CheckpointBeforeFirstIteration):
            quantile_table(study, [10])


class TestSweep:
    def test_zero_samples(self):
        assert run_sweep(SweepStudy("H2", n_samples=0)).rows == []

    def test_collapsed_ranges(self):
        ranges = {"k_max": (12, 12), "N": (20, 20), "lambda": (1.0, 1.0), "gamma": (0.5, 0.5),
                  "q": (1e-6, 1e-6), "r": (0.5, 0.5)}
        rows = run_sweep(SweepStudy("H2", ranges=ranges, n_samples=5, base_seed=3)).rows
        params = {(r.k_max, r.N, r.n_thr, r.lam, r.gamma, r.q, r.r) for r in rows}
        assert params == {(12, 20, 10.0, 1.0, 0.5, 1e-6, 0.5)}
        assert [r.seed for r in rows] == [3, 4, 5, 6, 7]
        assert len({r.e for r in rows}) > 1

    def test_two_hundred_samples_on_h2(self):
        rows = run_sweep(SweepStudy("H2", n_samples=200)).rows
        assert len(rows) == 200
        for r in rows:
            assert np.isfinite(r.e) and r.e_x >= 0 and r.e_y >= 0
            assert r.e == pytest.approx(math.hypot(r.e_x, r.e_y))

    def test_draws_respect_ranges(self):
        study = SweepStudy("H2", n_samples=300, base_seed=1)
        draws = sample_parameters(study)
        for key, (lo, hi) in study.ranges.items():
            vals = np.array([d[key] for d in draws])
            assert np.all((vals >= lo) & (vals <= hi))
        assert all(isinstance(d["N"], int) for d in draws)
        # log-uniform: about half the q draws below the geometric midpoint
        q = np.array([d["q"] for d in draws])
        assert 0.4 < np.mean(q < 1e-5) < 0.6

    def test_sweep_row_matches_direct_run(self):
        study = run_sweep(SweepStudy("H2", n_samples=2, base_seed=5))
        row, params = study.rows[1], sample_parameters(study)[1]
        cfg = replace(default_config("H2", "pfo"), seed=6, k_max=params["k_max"],
                      n_particles=params["N"], n_thr=params["N"] / 2, lam=params["lambda"],
                      gamma=params["gamma"], Q=params["q"], R=params["r"])
        tr = run(cfg, get_objective("H2"))
        assert row.e_x == abs(tr.best_x[0] - 1.0)
        assert row.e_y == abs(tr.best_y)

    @pytest.mark.parametrize("bad", [{"mu": (0, 1)}, {"q": (0.0, 1.0)}, {"N": (10, 5)}])
    def test_bad_ranges(self, bad):
        with pytest.raises(ValueError):
            SweepStudy("H2", ranges=bad)


class TestExport:
    def test_mc_csv_header_and_rows(self, tmp_path):
        study = run_mc(_short_study(n_trials=2))
        path = tmp_path / "mc.csv"
        export(study, "csv", str(path))
        raw = path.read_bytes()
        assert raw.startswith(b"k,rmse_x,rmse_y,mean_pxx,mean_pyy,mean_ess,fes\n")
        assert b"\r" not in raw
        header, rows = load_csv(str(path))
        assert tuple(header) == MC_HEADER
        assert len(rows) == len(study.rmse_x)
        np.testing.assert_array_equal([r[1] for r in rows], study.rmse_x)

    def test_sweep_csv_header(self, tmp_path):
        study = run_sweep(SweepStudy("H2", n_samples=3))
        path = tmp_path / "sweep.csv"
        export(study, "csv", str(path))
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        assert ",".join(header) == "sample,k_max,N,n_thr,lambda,gamma,q,r,e,e_x,e_y,seed"
        assert tuple(header) == SWEEP_HEADER

    def test_json_round_trip_is_bitwise(self, tmp_path):
        study = run_mc(_short_study(n_trials=3))
        path = tmp_path / "mc.json"
        export(study, "json", str(path))
        data = load_json(str(path))
        assert data["config"]["k_max"] == 15
        for key in MC_HEADER[1:6]:
            np.testing.assert_array_equal([r[key] for r in data["rows"]], getattr(study, key))
        assert [r["fes"] for r in data["rows"]] == [int(f) for f in study.fes]

    def test_sweep_json_round_trip(self, tmp_path):
        study = run_sweep(SweepStudy("H2", n_samples=4))
        path = tmp_path / "sweep.json"
        export(study, "json", str(path))
        rows = load_json(str(path))["rows"]
        for loaded, row in zip(rows, study.rows):
            assert [loaded[h] for h in SWEEP_HEADER] == row.as_csv_row()

    def test_bad_format(self, tmp_path):
        with pytest.raises(ValueError):
            export(run_mc(_short_study(n_trials=1)), "xml", str(tmp_path / "x"))
        with pytest.raises(TypeError):
            export(PfoConfig(), "csv", str(tmp_path / "x"))
