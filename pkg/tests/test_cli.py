import csv
import json

import numpy as np
import pytest

from margpg.cli import main
from margpg.config import (
    ObservationError,
    apply_override,
    load_config,
    load_observations,
    load_preset,
    preset_names,
    validate_config,
    write_observations,
)
from margpg.samplers import ConfigError

MINIMAL = {
    "model": "benchmark",
    "data": {"simulate": {"theta": {"sigma2_v": 10.0, "sigma2_w": 1.0}, "T": 50, "seed": 1}},
    "sampler": {"method": "mpgas", "N": 50, "M": 100},
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _raw(**changes):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg.update(changes)
    return cfg


class TestConfigValidation:
    def test_minimal_valid(self, tmp_path):
        cfg = load_config(_write(tmp_path, MINIMAL))
        assert cfg.model == "benchmark"
        assert len(cfg.runs) == 1
        run = cfg.runs[0]
        assert run.label == "mpgas-N50"
        assert (run.sampler.method, run.sampler.N, run.sampler.M) == ("mpgas", 50, 100)
        assert cfg.diagnostics["acf_max_lag"] == 50

    def test_blocking_needs_room(self):
        raw = _raw(sampler={"method": "blocked-mpgas", "N": 10, "M": 10, "B": 30, "L": 20})
        with pytest.raises(ConfigError) as e:
            validate_config(raw)
        assert "B, L" in e.value.field

    def test_unknown_sampler_lists_valid(self):
        with pytest.raises(ConfigError, match="valid samplers: pg, pgas"):
            validate_config(_raw(sampler={"method": "smc-squared"}))

    @pytest.mark.parametrize(
        "changes,field",
        [
            ({"seeds": 3}, "seeds"),
            ({"model": "sir"}, "model"),
            ({"model_params": {"alpha": 1.0}}, "model_params"),
            ({"data": {"url": "x"}}, "data"),
            ({"data": {"simulate": {"theta": {}, "T": 0}}}, "data.simulate.T"),
            ({"data": {"simulate": {"theta": {}, "T": 5, "noise": 1}}}, "data.simulate.noise"),
            ({"diagnostics": {"lags": 3}}, "diagnostics.lags"),
            ({"diagnostics": {"acf_max_lag": 0}}, "diagnostics.acf_max_lag"),
            ({"sampler": {"N": 10, "particles": 3}}, "particles"),
            ({"runs": [{"label": "a"}, {"label": "a"}]}, "runs[1].label"),
        ],
    )
    def test_rejected_fields(self, changes, field):
        with pytest.raises(ConfigError) as e:
            validate_config(_raw(**changes))
        assert e.value.field == field

    def test_run_errors_name_the_run(self):
        raw = _raw(runs=[{"method": "pg"}, {"method": "mpg", "M": 0}])
        with pytest.raises(ConfigError) as e:
            validate_config(raw)
        assert e.value.field == "runs[1].M"

    def test_parse_error_position(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "model": "benchmark",\n  "data": ,\n}')
        with pytest.raises(ConfigError, match="line 3, column 11"):
            load_config(p)

    def test_runs_inherit_base_sampler(self):
        raw = _raw(runs=[{"method": "pg", "N": 7}, {"method": "mpg", "label": "m"}])
        cfg = validate_config(raw)
        assert [r.label for r in cfg.runs] == ["pg-N7", "m"]
        assert [r.sampler.N for r in cfg.runs] == [7, 50]
        assert all(r.sampler.M == 100 for r in cfg.runs)


class TestOverrides:
    def test_nested_and_list(self):
        raw = _raw(runs=[{"N": 3}, {"N": 4}])
        apply_override(raw, "runs.1.N=9")
        apply_override(raw, "data.simulate.T=12")
        apply_override(raw, "model_params.alpha_v=2.5")
        apply_override(raw, "out=somewhere")
        assert raw["runs"][1]["N"] == 9
        assert raw["data"]["simulate"]["T"] == 12
        assert raw["model_params"]["alpha_v"] == 2.5
        assert raw["out"] == "somewhere"

    def test_sampler_override_reaches_runs(self):
        raw = _raw(runs=[{"M": 3}, {"N": 4}])
        apply_override(raw, "sampler.M=20")
        assert raw["sampler"]["M"] == 20
        assert raw["runs"][0]["M"] == 20
        assert "M" not in raw["runs"][1]

    def test_malformed(self):
        with pytest.raises(ConfigError):
            apply_override({}, "sampler.M")


class TestObservations:
    def test_well_formed(self, tmp_path):
        p = tmp_path / "y.csv"
        p.write_text("t,y\n1,3.5\n2,4\n3,-1e-3\n")
        np.testing.assert_array_equal(load_observations(p), [3.5, 4.0, -1e-3])

    @pytest.mark.parametrize(
        "text,match",
        [
            ("", "empty"),
            ("t,y\n", "no observations"),
            ("time,value\n1,2\n", "header"),
            ("t,y\n1,2\n1,3\n", "duplicate"),
            ("t,y\n1,2\n2,3\n1,4\n", "non-ascending"),
            ("t,y\n1,2\n3,3\n", "missing"),
            ("t,y\n1,2\n2,abc\n", "malformed"),
            ("t,y\n1,2,3\n", "two columns"),
            ("t,y\n1,nan\n", "non-finite"),
            ("t,y\n0,1\n", "start at 1"),
        ],
    )
    def test_rejected(self, tmp_path, text, match):
        p = tmp_path / "y.csv"
        p.write_text(text)
        with pytest.raises(ObservationError, match=match):
            load_observations(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ObservationError):
            load_observations(tmp_path / "nope.csv")

    def test_round_trip(self, tmp_path):
        y = np.random.default_rng(0).standard_normal(20) * 1e3
        write_observations(tmp_path / "y.csv", y)
        np.testing.assert_array_equal(load_observations(tmp_path / "y.csv"), y)

    def test_csv_path_relative_to_config(self, tmp_path):
        (tmp_path / "data").mkdir()
        write_observations(tmp_path / "data" / "obs.csv", [1.0, 2.0, 3.0])
        cfg = load_config(_write(tmp_path, _raw(data={"csv": "data/obs.csv"})))
        y, x = cfg.observations()
        assert x is None and len(y) == 3


class TestPresets:
    def test_names(self):
        assert preset_names() == ["fig1", "fig2-blocking", "fig4-epidemic", "fig5-sparrows"]

    def test_all_validate(self):
        for name in preset_names():
            load_preset(name)

    def test_fig1_settings(self):
        cfg = load_preset("fig1")
        assert [r.label for r in cfg.runs] == ["PGAS_50", "PGAS_500", "PGAS_5000", "mPGAS_50", "mPGAS_500"]
        assert all(r.sampler.M == 10000 and r.sampler.burn_in == 1500 for r in cfg.runs)

    def test_unknown(self):
        with pytest.raises(ConfigError, match="available"):
            load_preset("fig9")


class TestRun:
    def test_minimal_run_outputs(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", str(_write(tmp_path, MINIMAL)), "--out", str(out), "--override", "sampler.M=20"]) == 0
        for f in ("samples.csv", "acf.csv", "update_frequency.csv", "summary.json", "resolved_config.json",
                  "observations.csv", "states_true.csv"):
            assert (out / f).is_file(), f
        rows = _read_csv(out / "samples.csv")
        assert rows[0] == ["run", "iteration", "sigma2_v", "sigma2_w"]
        assert len(rows) == 21
        summary = json.loads((out / "summary.json").read_text())
        run = summary["runs"]["mpgas-N50"]
        assert summary["T"] == 50
        assert {"method", "N", "M", "burn_in", "wall_clock_seconds", "params"} <= set(run)
        assert {"mean", "variance", "ess", "mcse", "quantiles"} <= set(run["params"]["sigma2_v"])
        uf = _read_csv(out / "update_frequency.csv")
        assert uf[0] == ["t", "mpgas-N50"] and len(uf) == 51

    def test_resolved_config_reruns_identically(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["run", str(_write(tmp_path, MINIMAL)), "--out", str(a), "--override", "sampler.M=15"])
        assert main(["run", str(a / "resolved_config.json"), "--out", str(b)]) == 0
        for f in ("samples.csv", "acf.csv", "update_frequency.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_seed_flag(self, tmp_path):
        p = _write(tmp_path, MINIMAL)
        main(["run", str(p), "--out", str(tmp_path / "a"), "--seed", "1", "--override", "sampler.M=10"])
        main(["run", str(p), "--out", str(tmp_path / "b"), "--seed", "2", "--override", "sampler.M=10"])
        assert (tmp_path / "a" / "samples.csv").read_bytes() != (tmp_path / "b" / "samples.csv").read_bytes()

    def test_store_states(self, tmp_path):
        out = tmp_path / "o"
        main(["run", str(_write(tmp_path, MINIMAL)), "--out", str(out), "--override", "sampler.M=5",
              "--override", "diagnostics.store_states=true"])
        header = _read_csv(out / "samples.csv")[0]
        assert header[-1] == "x50" and len(header) == 4 + 51

    def test_config_error_exit_code(self, tmp_path, capsys):
        raw = _raw(sampler={"method": "blocked-mpg", "B": 40, "L": 20})
        assert main(["run", str(_write(tmp_path, raw)), "--out", str(tmp_path / "o")]) == 2
        assert "B, L" in capsys.readouterr().err

    def test_weight_collapse_exit_code(self, tmp_path, capsys):
        write_observations(tmp_path / "y.csv", [1.0, 2.0, 5000.0])
        raw = {"model": "epidemic", "model_params": {"population": 100}, "data": {"csv": "y.csv"},
               "sampler": {"method": "pg", "N": 10, "M": 5}}
        assert main(["run", str(_write(tmp_path, raw)), "--out", str(tmp_path / "o")]) == 1
        assert "t=3" in capsys.readouterr().err

    def test_chains(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", str(_write(tmp_path, MINIMAL)), "--out", str(out), "--chains", "2",
                     "--override", "sampler.M=10"]) == 0
        a = (out / "chain-0" / "samples.csv").read_bytes()
        b = (out / "chain-1" / "samples.csv").read_bytes()
        assert a != b
        pooled = json.loads((out / "summary.json").read_text())
        assert pooled["chains"] == 2
        assert {"mean", "between_chain_sd", "ess"} == set(pooled["runs"]["mpgas-N50"]["sigma2_v"])

    def test_simulate_then_fit(self, tmp_path, capsys):
        sim = tmp_path / "sim"
        assert main(["simulate", str(_write(tmp_path, MINIMAL)), "--out", str(sim)]) == 0
        y = load_observations(sim / "observations.csv")
        assert len(y) == 50
        raw = _raw(data={"csv": str(sim / "observations.csv")})
        assert main(["run", str(_write(tmp_path, raw, "fit.json")), "--out", str(tmp_path / "fit"),
                     "--override", "sampler.M=5"]) == 0
        assert not (tmp_path / "fit" / "states_true.csv").exists()

    def test_list_presets(self, capsys):
        assert main(["list-presets"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert [ln.split("\t")[0] for ln in lines] == preset_names()


class TestPresetRuns:
    """Presets at reduced iteration counts produce the documented tables."""

    def test_fig1_layout(self, tmp_path):
        out = tmp_path / "fig1"
        main(["run", "fig1", "--out", str(out), "--override", "sampler.M=40", "--override", "sampler.burn_in=10",
              "--override", "runs.2.N=200", "--override", "data.simulate.T=40"])
        header = _read_csv(out / "acf.csv")[0]
        labels = ["PGAS_50", "PGAS_500", "PGAS_5000", "mPGAS_50", "mPGAS_500"]
        assert header == ["lag"] + [f"{lab}.{p}" for lab in labels for p in ("sigma2_v", "sigma2_w")]
        assert len(_read_csv(out / "acf.csv")) == 1 + 30  # lags 0..29 after burn-in
        assert not (out / "update_frequency.csv").exists()

    def test_fig2_layout(self, tmp_path):
        out = tmp_path / "fig2"
        main(["run", "fig2-blocking", "--out", str(out), "--override", "sampler.M=20",
              "--override", "sampler.burn_in=5", "--override", "sampler.N=20"])
        rows = _read_csv(out / "update_frequency.csv")
        assert rows[0] == ["t", "PGAS", "PGASm", "PGASmb"]
        assert [r[0] for r in rows[1:]] == [str(t) for t in range(1, 10)]

    def test_fig4_layout(self, tmp_path):
        out = tmp_path / "fig4"
        main(["run", "fig4-epidemic", "--out", str(out), "--override", "sampler.M=20", "--override", "sampler.N=64",
              "--override", "sampler.burn_in=5", "--override", "runs.2.M=10"])
        hist = _read_csv(out / "histogram.csv")
        assert hist[0] == ["run", "param", "bin_left", "bin_right", "density"]
        assert {r[0] for r in hist[1:]} == {"PG", "mPG", "mIS"}
        acf_header = _read_csv(out / "acf.csv")[0]
        assert "mIS.rho" not in acf_header and "mPG.rho" in acf_header

    def test_fig5_with_supplied_counts(self, tmp_path):
        counts = [40, 45, 38, 50, 60, 55, 48, 42, 47, 52, 58, 61, 57, 49, 44, 46, 53, 59, 62, 54, 50]
        write_observations(tmp_path / "counts.csv", counts)
        out = tmp_path / "fig5"
        rc = main(["run", "fig5-sparrows", "--out", str(out), "--override", f"data.csv={tmp_path / 'counts.csv'}",
                   "--override", "sampler.M=30", "--override", "sampler.burn_in=10", "--override", "sampler.N=64",
                   "--override", "sampler.theta_u_init={\"c\": 0.0}"])
        assert rc == 0
        assert _read_csv(out / "samples.csv")[0][:3] == ["run", "iteration", "c"]
        filt = _read_csv(out / "filtered.csv")
        assert filt[0] == ["run", "t", "mean", "sd", "sd_obs", "y"]
        assert len(filt) == 1 + 21
        summary = json.loads((out / "summary.json").read_text())
        run = summary["runs"]["mpmmh-N64"]
        assert 0 <= run["acceptance_rate"] <= 1 and "all_rejected" in run

    def test_fig5_missing_data_message(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert main(["run", "fig5-sparrows", "--out", str(tmp_path / "o")]) == 2
        assert "song_sparrows.csv" in capsys.readouterr().err
