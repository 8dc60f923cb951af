import json
import os

import numpy as np
import pytest

from safecmdp.cli import main, parse_k0, parse_seeds
from safecmdp.cmdp import ContractViolation, backward_induction
from safecmdp.envs import build_random
from safecmdp.harness.experiment import (RunConfig, RunResult, aggregate, agent_config, baseline_sweep,
                                         reference, run_experiment, run_seed, windowed_slope_drop)
from safecmdp.harness.report import CSV_HEADER, OutputError, emit_outputs, preflight, read_csv, write_csv

TINY = {"seed": 0, "num_states": 2, "num_actions": 2, "horizon": 2, "budget_frac": 0.6}


def tiny_config(tmp_path=None, **kw):
    base = dict(env="random", env_overrides=dict(TINY), episodes=20, seeds=(0, 1), baseline_frac=0.3,
                out_dir=str(tmp_path) if tmp_path else None)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def tiny():
    model = build_random(**TINY)
    return model, reference(model, 0.3)


class TestRun:
    def test_fixed_baseline_regret_is_linear(self, tiny):
        model, ref = tiny
        run = run_seed(model, ref, agent_config("baseline", ref, tiny_config()), 0)
        gap = ref.baseline_objective - ref.optimum
        assert gap >= 0
        np.testing.assert_allclose(run.opt_gap, gap, atol=1e-12)
        np.testing.assert_allclose(run.cum_opt_regret, gap * np.arange(1, 21), atol=1e-10)
        assert np.all(run.cons_excess == 0)

    def test_cumulative_columns_are_running_sums(self, tiny):
        model, ref = tiny
        run = run_seed(model, ref, agent_config("optcmdp", ref, tiny_config()), 3)
        np.testing.assert_array_equal(run.cum_cons_regret, np.cumsum(run.cons_excess))
        assert np.all(run.cons_excess >= 0)
        recs = run.records()
        assert recs[-1].episode == 20
        assert recs[-1].cum_opt_regret == pytest.approx(float(run.cum_opt_regret[-1]))

    def test_opsrl_regret_is_monotone_when_safe(self, tiny):
        model, ref = tiny
        run = run_seed(model, ref, agent_config("opsrl", ref, tiny_config(bonus_scale=0.1, episodes=60)), 0)
        assert run.first_violation is None
        assert np.all(np.diff(run.cum_opt_regret) >= -1e-9)

    def test_errors_carry_episode(self, tiny):
        model, ref = tiny
        cfg = agent_config("ucrl", ref, tiny_config(ucrl_solver="bogus"))
        with pytest.raises(RuntimeError, match="seed 0 episode 1"):
            run_seed(model, ref, cfg, 0)

    def test_truncation_keeps_log_term(self, tiny):
        model, ref = tiny
        cfg = agent_config("opsrl", ref, tiny_config(episodes=100, bonus_scale=0.2))
        short = run_seed(model, ref, cfg, 0, max_episodes=10)
        full = run_seed(model, ref, cfg, 0)
        assert short.episodes == 10
        np.testing.assert_array_equal(short.value_r, full.value_r[:10])

    def test_config_validation(self):
        for bad in ({"episodes": 0}, {"seeds": ()}, {"delta": 1.0}, {"agents": ("nope",)}):
            with pytest.raises(ContractViolation):
                RunConfig(**bad)

    def test_workers_match_serial(self, tiny):
        model, ref = tiny
        serial = run_experiment(tiny_config(agents=("opsrl", "ucrl")), model, ref)
        parallel = run_experiment(tiny_config(agents=("opsrl", "ucrl"), workers=2), model, ref)
        for agent in serial:
            for a, b in zip(serial[agent], parallel[agent]):
                np.testing.assert_array_equal(a.value_r, b.value_r)


def fake_run(values, seed=0, budget=1.0, optimum=0.0):
    v = np.asarray(values, dtype=float)
    return RunResult("x", seed, v, v, np.zeros(len(v), bool), ["optimal"] * len(v), optimum, 0.0, budget,
                     np.full(len(v), np.nan))


class TestAggregate:
    def test_single_seed(self):
        agg = aggregate([fake_run([0.5, 2.0, 0.2])])
        np.testing.assert_array_equal(agg.opt_mean, agg.opt_min)
        np.testing.assert_array_equal(agg.opt_mean, agg.opt_max)
        np.testing.assert_allclose(agg.cons_mean, [0.0, 1.0, 1.0])

    def test_identical_seeds(self):
        agg = aggregate([fake_run([0.3, 0.4]), fake_run([0.3, 0.4], seed=1)])
        np.testing.assert_array_equal(agg.opt_max - agg.opt_min, 0.0)

    def test_ragged(self):
        with pytest.raises(ContractViolation):
            aggregate([fake_run([0.1]), fake_run([0.1, 0.2])])

    def test_unconstrained_reference(self):
        run = fake_run([0.5, 0.5], optimum=0.4)
        np.testing.assert_allclose(aggregate([run], "unconstrained").opt_mean, [0.5, 1.0])
        np.testing.assert_allclose(aggregate([run]).opt_mean, [0.1, 0.2])


class TestSlope:
    def test_concave_curve_drops(self):
        cum = np.sqrt(np.arange(1, 101))
        assert windowed_slope_drop(cum, 1) is True

    def test_linear_curve_does_not_drop(self):
        assert windowed_slope_drop(np.arange(1.0, 101.0), 10) is False

    def test_undefined_cases(self):
        assert windowed_slope_drop(np.arange(10.0), None) is None
        assert windowed_slope_drop(np.arange(100.0), 90) is None


class TestOutputs:
    def test_csv_shape_and_header(self, tmp_path, tiny):
        model, ref = tiny
        cfg = tiny_config(tmp_path, episodes=3, agents=("opsrl",))
        results = run_experiment(cfg, model, ref)
        paths = emit_outputs(results, cfg, ref)
        text = (tmp_path / "opsrl.csv").read_text()
        lines = text.splitlines()
        assert len(lines) == 4
        assert lines[0] == ",".join(CSV_HEADER)
        assert tmp_path / "run_metadata.json" in paths

    def test_rerun_is_byte_identical(self, tmp_path, tiny):
        model, ref = tiny
        blobs = []
        for sub in ("a", "b"):
            cfg = tiny_config(tmp_path / sub, agents=("opsrl", "optcmdp"), emit_plots=True)
            emit_outputs(run_experiment(cfg, model, ref), cfg, ref)
            blobs.append({p.name: p.read_bytes() for p in (tmp_path / sub).iterdir()
                          if p.suffix in (".csv", ".svg")})
        assert blobs[0].keys() == blobs[1].keys()
        assert "optimality_regret.svg" in blobs[0]
        for name in blobs[0]:
            assert blobs[0][name] == blobs[1][name], name

    def test_metadata_contents(self, tmp_path, tiny):
        model, ref = tiny
        cfg = tiny_config(tmp_path, agents=("opsrl", "ucrl"))
        emit_outputs(run_experiment(cfg, model, ref), cfg, ref)
        meta = json.loads((tmp_path / "run_metadata.json").read_text())
        assert meta["config"]["episodes"] == 20
        assert meta["reference"]["optimal_value"] == pytest.approx(ref.optimum)
        assert [r["seed"] for r in meta["runs"]["opsrl"]] == [0, 1]
        assert "switch_episode" in meta["runs"]["opsrl"][0]
        assert (tmp_path / "ucrl_vs_unconstrained.csv").exists()

    def test_csv_round_trip(self, tmp_path):
        agg = aggregate([fake_run([0.25, 1.5, 0.125])])
        data = read_csv(write_csv(agg, tmp_path / "x.csv"))
        np.testing.assert_allclose(data["opt_regret_mean"], agg.opt_mean)
        np.testing.assert_array_equal(data["episode"], [1, 2, 3])

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
    def test_unwritable_dir_permissions(self, tmp_path):
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(0o500)
        with pytest.raises(OutputError):
            preflight(locked / "out")

    def test_unwritable_dir(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OutputError):
            preflight(blocker / "out")


class TestSweep:
    def test_empty_fractions(self):
        with pytest.raises(ContractViolation):
            baseline_sweep(tiny_config(), [])
        with pytest.raises(ContractViolation):
            baseline_sweep(tiny_config(), [1.0])

    def test_infeasible_fraction_is_skipped(self, tiny):
        model, _ = tiny
        _, V_c = backward_induction(model, model.constraint_cost)
        low = 0.5 * V_c[0, 0] / model.budget
        res = baseline_sweep(tiny_config(seeds=(0,), episodes=5), [low, 0.5], model)
        assert res[0].runs is None and "meets budget" in res[0].warning
        assert res[1].runs is not None and len(res[1].runs) == 1

    def test_switch_episodes_recorded(self, tiny):
        model, _ = tiny
        res = baseline_sweep(tiny_config(seeds=(0, 1), episodes=80, bonus_scale=0.1), [0.3, 0.5], model)
        switches = {r.fraction: [run.switch_episode for run in r.runs] for r in res}
        assert all(k is not None for ks in switches.values() for k in ks)


class TestCli:
    def test_parsers(self):
        assert parse_seeds("3") == (0, 1, 2)
        assert parse_seeds("4,9") == (4, 9)
        assert parse_k0("fixed:12") == 12 and parse_k0("adaptive") == "adaptive"

    def test_run_with_config_and_override(self, tmp_path, capsys):
        ini = tmp_path / "run.ini"
        ini.write_text("[run]\nenv = random\nagent = opsrl,baseline\nepisodes = 50\nseeds = 1\n"
                       "baseline-frac = 0.3\n\n[env]\nseed = 0\nnum_states = 2\nnum_actions = 2\n"
                       "horizon = 2\nbudget_frac = 0.6\n")
        out = tmp_path / "out"
        assert main(["run", "--config", str(ini), "--episodes", "7", "--out", str(out), "--emit-plots",
                     "--dump-lp"]) == 0
        assert len((out / "opsrl.csv").read_text().splitlines()) == 8
        assert (out / "baseline.csv").exists()
        assert (out / "constraint_regret.svg").exists()
        assert (out / "lp" / "plan_optimal.lp").read_text().startswith("min:")
        meta = json.loads((out / "run_metadata.json").read_text())
        assert meta["config"]["episodes"] == 7 and meta["config"]["agents"] == ["opsrl", "baseline"]
        assert "switch episodes" in capsys.readouterr().out

    def test_sweep(self, tmp_path, capsys):
        out = tmp_path / "sweep"
        args = ["sweep", "--env", "random", "--env-opt", "seed=0", "--env-opt", "num_states=2",
                "--env-opt", "num_actions=2", "--env-opt", "horizon=2", "--env-opt", "budget_frac=0.6",
                "--episodes", "5", "--seeds", "1", "--fractions", "0.3,0.5", "--out", str(out), "--emit-plots"]
        assert main(args) == 0
        assert (out / "opsrl_baseline_0.3.csv").exists()
        assert (out / "sweep_optimality_regret.svg").exists()

    def test_dump_model(self, tmp_path):
        path = tmp_path / "m.txt"
        assert main(["dump-model", "--env", "inventory", "--out", str(path)]) == 0
        assert path.read_text().startswith("# inventory S=7 A=7 H=7")

    def test_unknown_config_key(self, tmp_path):
        ini = tmp_path / "bad.ini"
        ini.write_text("[run]\nnonsense = 1\n")
        with pytest.raises(SystemExit):
            main(["run", "--config", str(ini), "--out", str(tmp_path)])
