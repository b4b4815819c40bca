"""Tests for the command-line harness."""

import json
import math

import numpy as np
import pytest

from switchem.cli import ExperimentConfig, build_config, main, mc_variance


def _read(path):
    return path.read_text(encoding="utf-8")


class TestRun:
    def test_row_count_and_header(self, tmp_path):
        out = tmp_path / "o"
        code = main(["run", "--scenario", "benchmark", "--steps", "10", "--runs", "1",
                     "--seed", "0", "--particles", "20", "--out", str(out)])
        assert code == 0
        lines = _read(out / "run_0.csv").splitlines()
        assert len(lines) == 11
        assert lines[0].split(",")[:2] == ["t", "mu_e_0"]

    def test_rerun_byte_identical(self, tmp_path):
        args = ["run", "--scenario", "benchmark", "--steps", "15", "--runs", "2",
                "--seed", "3", "--particles", "25", "--out"]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + [str(out1)]) == 0
        assert main(args + [str(out2)]) == 0
        for j in range(2):
            assert _read(out1 / f"run_{j}.csv") == _read(out2 / f"run_{j}.csv")

    def test_distinct_run_seeds(self, tmp_path):
        out = tmp_path / "o"
        assert main(["run", "--scenario", "benchmark", "--steps", "15", "--runs", "2",
                     "--seed", "3", "--particles", "25", "--out", str(out)]) == 0
        assert _read(out / "run_0.csv") != _read(out / "run_1.csv")

    def test_fixed_vs_fresh_data(self, tmp_path):
        base = ["run", "--scenario", "jmls_failure", "--steps", "12", "--runs", "1",
                "--particles", "15", "--seed", "9"]
        fixed_dir, fresh_dir = tmp_path / "fixed", tmp_path / "fresh"
        assert main(base + ["--out", str(fixed_dir), "--set", "data_seed=77"]) == 0
        assert main(base + ["--out", str(fresh_dir), "--set", "data_seed=77",
                            "--set", "data_mode=fresh"]) == 0
        # run 0 sees the same data either way
        assert _read(fixed_dir / "run_0.csv") == _read(fresh_dir / "run_0.csv")

    def test_unwritable_out_dir(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code = main(["run", "--scenario", "benchmark", "--steps", "5", "--runs", "1",
                     "--particles", "10", "--out", str(blocker / "sub")])
        assert code == 1

    def test_collapse_exit_code_and_trailer(self, tmp_path):
        model_file = tmp_path / "bomb.py"
        model_file.write_text(
            "import numpy as np\n"
            "from switchem.model import GaussianModeParams, GaussianModel, "
            "InitialCondition, Theta\n"
            "from switchem.simulate import Scenario\n\n"
            "class Bomb(GaussianModel):\n"
            "    def __init__(self):\n"
            "        fixed = (GaussianModeParams(0., 1., 0., 1.),)\n"
            "        super().__init__(1, 1, 1, fixed, uniform_dynamics=True)\n"
            "    def drift(self, k, x, t):\n"
            "        return 0.5 * x\n"
            "    def meas(self, k, x, t):\n"
            "        return x\n"
            "    def log_meas_density(self, k, y, x, theta_k, t):\n"
            "        base = super().log_meas_density(k, y, x, theta_k, t)\n"
            "        return np.where(t > 7, -np.inf, base)\n\n"
            "def build():\n"
            "    m = Bomb()\n"
            "    th = Theta(m.fixed_params, np.array([[1.0]]))\n"
            "    return Scenario('custom', m, th, th,\n"
            "                    InitialCondition(state=np.zeros(1), mode=0), {})\n")
        out = tmp_path / "o"
        code = main(["run", "--scenario", "custom", "--model-file", str(model_file),
                     "--steps", "20", "--runs", "1", "--particles", "10",
                     "--seed", "1", "--out", str(out)])
        assert code == 2
        lines = _read(out / "run_0.csv").splitlines()
        assert lines[-1] == "# collapsed at t=8"
        assert len(lines) == 1 + 7 + 1  # header + rows t=1..7 + trailer


class TestConfigResolution:
    def test_scenario_defaults_applied(self):
        cfg, scen = build_config(_args(scenario="jmls_failure"))
        assert cfg.particles == 500
        assert cfg.exponent == 0.95
        assert cfg.algorithm == "rbpf_path"

    def test_file_overrides_preset_and_set_overrides_file(self, tmp_path):
        f = tmp_path / "cfg.json"
        f.write_text(json.dumps({"scenario": "benchmark", "particles": 60,
                                 "exponent": 0.8}))
        cfg, _ = build_config(_args(config=str(f), set=["particles=70"]))
        assert cfg.particles == 70
        assert cfg.exponent == 0.8

    def test_flag_overrides_everything(self, tmp_path):
        f = tmp_path / "cfg.json"
        f.write_text(json.dumps({"scenario": "benchmark", "particles": 60}))
        cfg, _ = build_config(_args(config=str(f), set=["particles=70"], particles=80))
        assert cfg.particles == 80

    def test_cv_var_cap_preset(self):
        cfg, _ = build_config(_args(scenario="cv_positioning"))
        assert cfg.var_cap == 100.0
        assert cfg.em_config().feasibility.var_cap == 100.0

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            ExperimentConfig(algorithm="imm")
        with pytest.raises(ValueError):
            ExperimentConfig(runs=0)


def _args(**kw):
    class A:
        config = None
        set = None
        scenario = None
        model_file = None
        algorithm = None
        particles = None
        steps = None
        runs = None
        seed = None
        out = None

    a = A()
    for k, v in kw.items():
        setattr(a, k, v)
    return a


class TestMcvar:
    def _write_run(self, path, values):
        with open(path, "w") as fh:
            fh.write("t,p,state_mean_0,mode_marginal_0\n")
            for t, v in enumerate(values, 1):
                fh.write(f"{t},{v!r},0.0,1.0\n")

    def test_identical_runs_zero_variance(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        self._write_run(a, [1.0] * 8)
        self._write_run(b, [1.0] * 8)
        names, var = mc_variance([str(a), str(b)])
        assert names == ["p"]
        np.testing.assert_allclose(var, [0.0], atol=1e-15)

    def test_plus_minus_c_gives_two_c_squared(self, tmp_path):
        c = 0.7
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        self._write_run(a, [c] * 10)
        self._write_run(b, [-c] * 10)
        _, var = mc_variance([str(a), str(b)])
        np.testing.assert_allclose(var, [2 * c * c], atol=1e-12)

    def test_burn_fraction_window(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        self._write_run(a, [0.0] * 5 + [1.0] * 5)
        self._write_run(b, [0.0] * 5 + [-1.0] * 5)
        _, full = mc_variance([str(a), str(b)], burn_fraction=0.0)
        _, tail = mc_variance([str(a), str(b)], burn_fraction=0.5)
        np.testing.assert_allclose(full, [1.0], atol=1e-12)
        np.testing.assert_allclose(tail, [2.0], atol=1e-12)

    def test_column_mismatch_exit_code(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        self._write_run(a, [1.0] * 4)
        with open(b, "w") as fh:
            fh.write("t,q,state_mean_0,mode_marginal_0\n1,1.0,0.0,1.0\n")
        assert main(["mcvar", str(a), str(b)]) == 1

    def test_needs_two_runs(self, tmp_path):
        a = tmp_path / "a.csv"
        self._write_run(a, [1.0])
        assert main(["mcvar", str(a)]) == 1

    def test_cli_writes_report(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        self._write_run(a, [0.5] * 6)
        self._write_run(b, [0.1] * 6)
        rep = tmp_path / "rep.csv"
        assert main(["mcvar", str(a), str(b), "--out", str(rep)]) == 0
        lines = _read(rep).splitlines()
        assert lines[0] == "parameter,variance"
        assert lines[1].startswith("p,")


class TestTime:
    def test_zero_steps_empty_table(self, capsys):
        code = main(["time", "--scenario", "benchmark", "--steps", "0",
                     "--particles", "10", "--algorithms", "rbpf_path",
                     "--particle-grid", "10"])
        assert code == 0
        out = capsys.readouterr().out
        assert "ms/step" in out
        assert len(out.strip().splitlines()) == 1

    def test_small_grid_runs(self, tmp_path, capsys):
        rep = tmp_path / "times.csv"
        code = main(["time", "--scenario", "benchmark", "--steps", "30",
                     "--seed", "0", "--algorithms", "pf_path,rbpf_path",
                     "--particle-grid", "20", "--warmup", "5",
                     "--out", str(rep)])
        assert code == 0
        lines = _read(rep).splitlines()
        assert lines[0] == "algorithm,particles,ms_per_step"
        assert len(lines) == 3


class TestEstimateCmd:
    def test_round_trip_from_simulate(self, tmp_path):
        traj_file = tmp_path / "traj.csv"
        assert main(["simulate", "--scenario", "benchmark", "--steps", "20",
                     "--seed", "5", "--out-file", str(traj_file)]) == 0
        rec_file = tmp_path / "rec.csv"
        code = main(["estimate", "--scenario", "benchmark", "--particles", "20",
                     "--seed", "1", "--input", str(traj_file),
                     "--out-file", str(rec_file)])
        assert code == 0
        lines = _read(rec_file).splitlines()
        assert len(lines) == 21

    def test_estimate_matches_run_on_same_data(self, tmp_path):
        # the estimate command on a simulated file reproduces cmd_run's records
        out = tmp_path / "runs"
        assert main(["run", "--scenario", "benchmark", "--steps", "12", "--runs", "1",
                     "--particles", "15", "--seed", "4", "--out", str(out)]) == 0
        traj_file = tmp_path / "traj.csv"
        assert main(["simulate", "--scenario", "benchmark", "--steps", "12",
                     "--seed", "4", "--out-file", str(traj_file)]) == 0
        rec_file = tmp_path / "rec.csv"
        assert main(["estimate", "--scenario", "benchmark", "--particles", "15",
                     "--seed", "4", "--input", str(traj_file),
                     "--out-file", str(rec_file)]) == 0
        assert _read(rec_file) == _read(out / "run_0.csv")

    def test_truncated_input_names_line(self, tmp_path, capsys):
        traj_file = tmp_path / "traj.csv"
        assert main(["simulate", "--scenario", "benchmark", "--steps", "6",
                     "--seed", "2", "--out-file", str(traj_file)]) == 0
        lines = _read(traj_file).splitlines()
        lines[3] = lines[3].rsplit(",", 1)[0]
        traj_file.write_text("\n".join(lines) + "\n")
        code = main(["estimate", "--scenario", "benchmark", "--particles", "10",
                     "--input", str(traj_file), "--out-file", str(tmp_path / "r.csv")])
        assert code == 1
        assert ":4:" in capsys.readouterr().err


class TestSimulateCmd:
    def test_writes_trajectory(self, tmp_path):
        f = tmp_path / "t.csv"
        assert main(["simulate", "--scenario", "jmls_failure", "--steps", "8",
                     "--seed", "1", "--out-file", str(f)]) == 0
        lines = _read(f).splitlines()
        assert lines[0] == "t,r,x_1,y_1"
        assert len(lines) == 9

    def test_deterministic(self, tmp_path):
        f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
        for f in (f1, f2):
            assert main(["simulate", "--scenario", "cv_positioning", "--steps", "5",
                         "--seed", "3", "--out-file", str(f)]) == 0
        assert _read(f1) == _read(f2)
