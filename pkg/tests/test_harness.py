import json
import os

import pytest

from robustq.errors import IoError, ParseError, UnknownKey, ValidationError
from robustq.harness import (
    EvalProtocol,
    NOT_SOLVED,
    RunRecord,
    build_environment,
    emit_results,
    evaluate_hit_time,
    load_config,
    run_experiment,
    validate_config,
)

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def _write(tmp_path, data):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(data))
    return path


def _minimal(**overrides):
    data = {
        "schema_version": 1,
        "master_seed": 5,
        "num_seeds": 2,
        "max_steps": 500,
        "metric_cadence": 250,
        "environment": {
            "kind": "random-env",
            "seed": 1,
            "num_states": 3,
            "num_actions": 2,
            "dirichlet_alpha": 1.0,
            "discount": 0.8,
        },
        "agents": [
            {"id": "w", "variant": "watkins", "alpha0": 0.1, "w_alpha": 100.0}
        ],
    }
    data.update(overrides)
    return data


class TestLoadConfig:
    def test_baird_preset_matches_caption(self):
        config = load_config(os.path.join(CONFIG_DIR, "baird.json"))
        assert config.environment["discount"] == 0.8
        twora = next(a for a in config.agents if a.agent_id == "twora")
        assert twora.alpha0 == 0.01
        assert twora.w_alpha == 1e5
        assert twora.rho0 == 0.5
        assert twora.w_rho == 1e3
        assert twora.num_copies == 10

    def test_all_presets_load(self):
        for name in (
            "baird.json",
            "baird_rho_sweep.json",
            "baird_n_sweep.json",
            "random_env.json",
            "cartpole.json",
            "amse.json",
            "bias.json",
        ):
            load_config(os.path.join(CONFIG_DIR, name))

    def test_missing_discount_named(self, tmp_path):
        data = _minimal()
        del data["environment"]["discount"]
        with pytest.raises(ValidationError) as err:
            load_config(_write(tmp_path, data))
        assert any("discount" in f for f in err.value.fields)

    def test_zero_seeds(self, tmp_path):
        with pytest.raises(ValidationError) as err:
            load_config(_write(tmp_path, _minimal(num_seeds=0)))
        assert any("num_seeds" in f for f in err.value.fields)

    def test_unknown_key_rejected(self, tmp_path):
        data = _minimal()
        data["agents"][0]["learning_rate"] = 0.5
        data["frobnicate"] = True
        with pytest.raises(UnknownKey) as err:
            load_config(_write(tmp_path, data))
        assert "frobnicate" in err.value.keys
        assert any("learning_rate" in k for k in err.value.keys)

    def test_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_config(path)

    def test_lists_every_offending_field(self, tmp_path):
        data = _minimal(num_seeds=0, master_seed=-3)
        del data["environment"]["discount"]
        with pytest.raises(ValidationError) as err:
            load_config(_write(tmp_path, data))
        joined = " ".join(err.value.fields)
        for frag in ("num_seeds", "master_seed", "discount"):
            assert frag in joined

    def test_duplicate_agent_id(self, tmp_path):
        data = _minimal()
        data["agents"].append(dict(data["agents"][0]))
        with pytest.raises(ValidationError):
            load_config(_write(tmp_path, data))

    def test_config_hash_stable(self, tmp_path):
        data = _minimal()
        c1 = load_config(_write(tmp_path, data))
        c2 = validate_config(json.loads(json.dumps(data)))
        assert c1.config_hash == c2.config_hash


class TestRunExperiment:
    def test_record_cardinality(self, tmp_path):
        data = _minimal(num_seeds=3)
        data["agents"].append(
            {"id": "t", "variant": "twora", "num_copies": 2, "alpha0": 0.1,
             "w_alpha": 100.0, "rho0": 0.2, "w_rho": 50.0}
        )
        config = load_config(_write(tmp_path, data))
        records = run_experiment(config)
        assert len(records) == 6
        assert {(r.agent_id, r.seed) for r in records} == {
            (a, s) for a in ("w", "t") for s in range(3)
        }

    def test_identical_configs_identical_csv(self, tmp_path):
        config = load_config(_write(tmp_path, _minimal()))
        r1 = run_experiment(config)
        r2 = run_experiment(config)
        d1, d2 = tmp_path / "out1", tmp_path / "out2"
        emit_results(r1, d1)
        emit_results(r2, d2)
        assert (d1 / "runs.csv").read_bytes() == (d2 / "runs.csv").read_bytes()
        assert (d1 / "summary.csv").read_bytes() == (d2 / "summary.csv").read_bytes()

    def test_parallelism_invariant(self, tmp_path):
        data = _minimal(num_seeds=4)
        config = load_config(_write(tmp_path, data))
        serial = run_experiment(config, parallelism=1)
        parallel = run_experiment(config, parallelism=2)
        assert [(r.agent_id, r.seed, r.rows) for r in serial] == [
            (r.agent_id, r.seed, r.rows) for r in parallel
        ]

    def test_custom_feature_path_runs(self, tmp_path):
        # non-canonical features exercise the sequential driver
        data = _minimal(max_steps=200, metric_cadence=100)
        data["environment"] = {
            "kind": "baird",
            "seed": 2,
            "discount": 0.8,
        }
        config = load_config(_write(tmp_path, data))
        records = run_experiment(config)
        assert all(len(r.rows) == 2 for r in records)


class TestEvaluateHitTime:
    class AlwaysAliveTask:
        """Stub environment that never terminates within the cap."""

        num_actions = 2
        num_cells = 4
        feature_dim = 8
        epsilon = 0.0
        train_step_cap = 50

        def reset(self, rng):
            return 0

        def step(self, state, action):
            return (state + 1) % 4, 1.0, False

        def cell(self, state):
            return state

    class InstantDeathTask(AlwaysAliveTask):
        def step(self, state, action):
            return state, 1.0, True

    def _agent(self, task):
        from robustq.mdp import CanonicalFeatureMap
        from robustq.simulate import AgentSpec

        features = CanonicalFeatureMap(task.num_cells, task.num_actions)
        return AgentSpec("w", "watkins", alpha0=0.1, w_alpha=100.0,
                         decay_index="e").make_state(features, 0.9)

    def test_surviving_agent_hits_at_first_checkpoint(self):
        from robustq.rng import stream

        task = self.AlwaysAliveTask()
        protocol = EvalProtocol(eval_every=50, eval_episodes=10, eval_step_cap=210,
                                solve_threshold=195.0)
        agent = self._agent(task)
        hit = evaluate_hit_time(agent, task, protocol, stream(1, "env"),
                                max_episodes=200, rng_eval=stream(1, "eval"))
        assert hit == 50

    def test_failing_agent_not_solved(self):
        from robustq.rng import stream

        task = self.InstantDeathTask()
        protocol = EvalProtocol(eval_every=50, eval_episodes=5)
        agent = self._agent(task)
        hit = evaluate_hit_time(agent, task, protocol, stream(1, "env"),
                                max_episodes=120, rng_eval=stream(1, "eval"))
        assert hit is NOT_SOLVED

    def test_evaluation_does_not_mutate_agent(self):
        import hashlib

        from robustq.environments import CartPoleTask, Discretizer
        from robustq.rng import stream

        task = CartPoleTask(discretizer=Discretizer(bins=(1, 1, 4, 4)), epsilon=0.1,
                            train_step_cap=100)
        agent = self._agent(task)
        protocol = EvalProtocol(eval_every=5, eval_episodes=3, eval_step_cap=50,
                                solve_threshold=1e9)
        rng_train = stream(2, "env")
        rng_eval = stream(2, "eval")
        features_digest = lambda: hashlib.sha256(agent.thetas.tobytes()).hexdigest()

        # interleave: train 5 episodes, digest, eval block, digest
        from robustq.harness import _greedy_episode_return
        from robustq.mdp import CanonicalFeatureMap

        evaluate_hit_time(agent, task, protocol, rng_train, max_episodes=5,
                          rng_eval=rng_eval)
        before = features_digest()
        feats = CanonicalFeatureMap(task.num_cells, task.num_actions)
        for _ in range(protocol.eval_episodes):
            _greedy_episode_return(agent, task, feats, rng_eval, protocol.eval_step_cap)
        assert features_digest() == before


class TestEmitResults:
    def _records(self):
        return [
            RunRecord("abc", 0, "w", [(100, "mse", 1.5), (200, "mse", 0.75),
                                      (300, "mse", 0.5)], 0.0, "d1"),
            RunRecord("abc", 1, "w", [(100, "mse", 2.5), (200, "mse", 1.25),
                                      (300, "mse", 1.0)], 0.0, "d2"),
        ]

    def test_row_count(self, tmp_path):
        emit_results(self._records()[:1], tmp_path)
        lines = (tmp_path / "runs.csv").read_text().strip().split("\n")
        assert lines[0] == "config_hash,seed,agent,step,metric_name,value"
        assert len(lines) == 4

    def test_summary_mean_matches_hand_average(self, tmp_path):
        emit_results(self._records(), tmp_path)
        rows = (tmp_path / "summary.csv").read_text().strip().split("\n")[1:]
        by_step = {int(r.split(",")[1]): float(r.split(",")[3]) for r in rows}
        assert by_step[100] == pytest.approx(2.0)
        assert by_step[200] == pytest.approx(1.0)

    def test_reemission_identical(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        emit_results(self._records(), d1)
        emit_results(self._records(), d2)
        assert (d1 / "runs.csv").read_bytes() == (d2 / "runs.csv").read_bytes()

    def test_empty_records(self, tmp_path):
        with pytest.raises(IoError):
            emit_results([], tmp_path)

    def test_plot_written(self, tmp_path):
        paths = emit_results(self._records(), tmp_path, plots=True)
        assert any(p.endswith(".svg") for p in paths)
        assert os.path.exists(paths[-1])


def test_build_environment_kinds(tmp_path):
    cfg = validate_config(_minimal())
    mdp, feats = build_environment(cfg)
    assert mdp.num_states == 3 and feats.is_canonical
    cart = validate_config(
        {
            "schema_version": 1,
            "environment": {"kind": "cartpole", "discount": 0.999, "bins": [1, 1, 4, 4]},
            "agents": [{"id": "w", "variant": "watkins", "alpha0": 0.4,
                        "w_alpha": 100.0, "decay_index": "e"}],
            "max_episodes": 10,
        }
    )
    task = build_environment(cart)
    assert task.num_cells == 16
