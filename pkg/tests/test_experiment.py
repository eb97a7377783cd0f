"""Pipeline stage tests: config handling, calibration split, artifacts."""

import dataclasses
import hashlib
import json
import math

import numpy as np
import pytest

from fedtrace.errors import ConfigError, StageDependencyError
from fedtrace.experiment import (CHECKPOINT_FILE, LEDGER_FILE, METRICS_FILE,
                                 NORM_STATS_FILE, PARTITION_FILE, ROUND_RECORDS_FILE,
                                 ExperimentConfig, NoiseBudget, apply_overrides,
                                 calibrate_budget, config_snapshot_line, load_config,
                                 participants_from_manifest, preset_config, read_metrics,
                                 run_pipeline, smoke_preset, stage_account, stage_evaluate,
                                 stage_generate, stage_partition, stage_train,
                                 training_ranking, write_csv)
from fedtrace.partition import DomainRanking
from fedtrace.privacy import PlannedQuery, plan_epsilon
from fedtrace.synth import GeneratorConfig, SplitSpec


def tiny_config(**overrides) -> ExperimentConfig:
    base = dict(
        generator=GeneratorConfig(n_scripts=2500, fp_prevalence=0.02),
        n_participants=20,
        urls_per_participant=8,
        rounds=3,
        epsilon=5.0,
        local_iterations=8,
        seed=7,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ----------------------------------------------------------------- config

class TestConfig:
    def test_round_trip_defaults(self):
        cfg = ExperimentConfig()
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_round_trip_infinite_epsilon(self):
        cfg = ExperimentConfig(epsilon=math.inf)
        encoded = cfg.to_dict()
        assert encoded["epsilon"] == "inf"
        assert ExperimentConfig.from_dict(encoded).epsilon == math.inf
        assert ExperimentConfig.from_dict({"epsilon": "Infinity"}).epsilon == math.inf

    def test_partial_dict_takes_defaults(self):
        cfg = ExperimentConfig.from_dict({"rounds": 5})
        assert cfg.rounds == 5
        assert cfg.n_participants == ExperimentConfig().n_participants

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({"optimizer_kind": "sgd"})
        assert err.value.field == "optimizer_kind"

    def test_unknown_generator_field_rejected(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({"generator": {"n_scripts": 100, "nope": 1}})
        assert err.value.field == "generator.nope"

    @pytest.mark.parametrize("field,value", [
        ("epsilon", -1.0),
        ("epsilon", 0.0),
        ("delta", 0.0),
        ("delta", 1.0),
        ("norm_fraction", 0.0),
        ("norm_fraction", 1.0),
        ("norm_mode", "raw"),
        ("q", 0.0),
        ("q", 1.5),
        ("norm_q", -0.1),
        ("rounds", 0),
        ("n_participants", 0),
        ("urls_per_participant", 0),
        ("zipf_exponent", 0.0),
        ("limited_knowledge_fraction", 1.5),
        ("clip_norm", 0.0),
        ("local_epochs", 0),
        ("local_iterations", 0),
        ("eval_every", -1),
    ])
    def test_validation(self, field, value):
        with pytest.raises(ConfigError):
            ExperimentConfig(**{field: value})

    def test_non_integer_int_field_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"rounds": 2.5})

    def test_bool_field_requires_bool(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"normalize": "yes"})

    def test_resolved_q_targets_hundred_sampled(self):
        assert ExperimentConfig(n_participants=10_000).resolved_q == pytest.approx(0.01)
        assert ExperimentConfig(n_participants=50).resolved_q == 1.0
        assert ExperimentConfig(q=0.25).resolved_q == 0.25

    def test_resolved_norm_q_follows_q(self):
        cfg = ExperimentConfig(n_participants=1000)
        assert cfg.resolved_norm_q == cfg.resolved_q
        assert ExperimentConfig(norm_q=0.5).resolved_norm_q == 0.5

    def test_master_seed_overrides_generator_seed(self):
        cfg = ExperimentConfig(generator=GeneratorConfig(n_scripts=100, seed=3), seed=9)
        assert cfg.resolved_generator.seed == 9
        assert cfg.generator.seed == 3  # stored config unchanged

    def test_optimizer_budget(self):
        assert ExperimentConfig(local_iterations=7).optimizer.max_iterations == 7


class TestOverridesAndFiles:
    def test_dotted_overrides(self):
        cfg = apply_overrides(ExperimentConfig(), [
            "generator.n_scripts=5000",
            "feature_set=HighEntropy",   # bare string falls back to str
            "epsilon=inf",
            "q=0.5",
        ])
        assert cfg.generator.n_scripts == 5000
        assert cfg.feature_set == "HighEntropy"
        assert cfg.epsilon == math.inf
        assert cfg.q == 0.5

    def test_override_requires_assignment(self):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["rounds"])

    def test_override_through_scalar_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["rounds.inner=1"])

    def test_override_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), ["nope=1"])

    def test_load_config(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"rounds": 4, "generator": {"n_scripts": 123}}))
        cfg = load_config(path)
        assert cfg.rounds == 4
        assert cfg.generator.n_scripts == 123

    def test_load_config_bad_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_load_config_non_object(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_presets(self):
        smoke = preset_config("smoke")
        assert smoke.generator.n_scripts == 20_000
        assert smoke.n_participants == 100
        trend = preset_config("paper-trend")
        assert trend.generator.n_scripts == 100_000
        assert trend.n_participants == 1000
        with pytest.raises(ConfigError):
            preset_config("warp")

    def test_write_csv_and_read_metrics(self, tmp_path):
        path = tmp_path / "table.csv"
        cfg = smoke_preset()
        write_csv(path, ("a", "b", "c"), [(1, 0.5, None), ("x", math.inf, 2)],
                  snapshot=config_snapshot_line(cfg))
        snapshot, rows = read_metrics(path)
        assert snapshot == cfg.to_dict()
        assert rows == [{"a": "1", "b": "0.5", "c": ""},
                        {"a": "x", "b": "inf", "c": "2"}]


# ------------------------------------------------------------ calibration

class TestCalibrateBudget:
    def test_infinite_epsilon_means_no_noise(self):
        assert calibrate_budget(tiny_config(epsilon=math.inf), 149) == NoiseBudget(0.0, 0.0)

    def test_norm_off_spends_everything_on_training(self):
        cfg = tiny_config(normalize=False, epsilon=2.0, rounds=5)
        budget = calibrate_budget(cfg, 149)
        assert budget.z_norm == 0.0
        replay = plan_epsilon([PlannedQuery(cfg.resolved_q, cfg.rounds)],
                              budget.z_train, cfg.delta)
        assert 0.99 * cfg.epsilon <= replay <= cfg.epsilon

    def test_two_stage_split(self):
        cfg = tiny_config(epsilon=2.0, rounds=5, norm_fraction=0.1)
        budget = calibrate_budget(cfg, 149)
        norm_alone = plan_epsilon([PlannedQuery(cfg.resolved_norm_q, 2 * 149)],
                                  budget.z_norm, cfg.delta)
        assert norm_alone <= 0.1 * cfg.epsilon
        total = plan_epsilon(
            [PlannedQuery(cfg.resolved_norm_q, 2 * 149, z=budget.z_norm),
             PlannedQuery(cfg.resolved_q, cfg.rounds)],
            budget.z_train, cfg.delta)
        assert 0.99 * cfg.epsilon <= total <= cfg.epsilon

    def test_larger_norm_share_lowers_norm_noise(self):
        lean = calibrate_budget(tiny_config(epsilon=2.0, norm_fraction=0.05), 149)
        rich = calibrate_budget(tiny_config(epsilon=2.0, norm_fraction=0.4), 149)
        assert rich.z_norm < lean.z_norm
        assert rich.z_train > lean.z_train


# ------------------------------------------------------------- the stages

@pytest.fixture(scope="module")
def run_cfg() -> ExperimentConfig:
    return tiny_config(eval_every=2)


@pytest.fixture(scope="module")
def run_dir(run_cfg, tmp_path_factory):
    path = tmp_path_factory.mktemp("staged_run")
    stage_generate(run_cfg, path)
    stage_partition(run_cfg, path)
    stage_train(run_cfg, path, max_workers=2)
    stage_evaluate(path)
    stage_account(path)
    return path


@pytest.fixture(scope="module")
def memory_result(run_cfg):
    return run_pipeline(run_cfg)


class TestStages:
    def test_in_memory_matches_staged(self, run_cfg, run_dir, memory_result):
        checkpoint = json.loads((run_dir / CHECKPOINT_FILE).read_text())
        assert np.array_equal(np.asarray(checkpoint["weights"]),
                              memory_result.outcome.model.weights)
        assert checkpoint["bias"] == memory_result.outcome.model.bias
        _, rows = read_metrics(run_dir / METRICS_FILE)
        by_split = {r["split"]: r for r in rows}
        for rec in memory_result.metrics:
            assert float(by_split[rec["split"]]["auprc"]) == rec["auprc"]

    def test_split_rows_partition_the_corpus(self, memory_result):
        prepared = memory_result.prepared
        train, test = prepared.train_rows, prepared.test_rows
        assert np.intersect1d(train, test).size == 0
        assert train.size + test.size == prepared.corpus.n_scripts

    def test_checkpoint_contents(self, run_cfg, run_dir):
        checkpoint = json.loads((run_dir / CHECKPOINT_FILE).read_text())
        assert checkpoint["feature_set"] == run_cfg.feature_set
        assert checkpoint["config"] == run_cfg.to_dict()
        assert len(checkpoint["weights"]) == 149
        assert checkpoint["z_train"] > 0 and checkpoint["z_norm"] > 0

    def test_round_records_eval_cadence(self, run_cfg, run_dir):
        snapshot, rows = read_metrics(run_dir / ROUND_RECORDS_FILE)
        assert snapshot == run_cfg.to_dict()
        assert len(rows) == run_cfg.rounds
        for row in rows:
            r = int(row["round"])
            scored = r % run_cfg.eval_every == 0 or r == run_cfg.rounds
            assert (row["auprc"] != "") == scored

    def test_ledger_entries(self, run_cfg, run_dir):
        stored = json.loads((run_dir / LEDGER_FILE).read_text())
        assert stored["delta"] == run_cfg.delta
        by_mechanism = {}
        for mechanism, q, z, count in stored["entries"]:
            by_mechanism.setdefault(mechanism, 0)
            by_mechanism[mechanism] += count
        assert by_mechanism == {"norm-mean": 149, "norm-var": 149,
                                "fedavg-round": run_cfg.rounds}

    def test_partition_manifest_counts_match_rebuilt_views(self, run_cfg, run_dir,
                                                           memory_result):
        manifest = json.loads((run_dir / PARTITION_FILE).read_text())
        rebuilt = participants_from_manifest(manifest, memory_result.prepared.corpus)
        assert len(rebuilt) == run_cfg.n_participants
        for entry, part, direct in zip(manifest["participants"], rebuilt,
                                       memory_result.participants):
            assert entry["n_scripts"] == part.n_scripts
            assert np.array_equal(part.rows, direct.rows)

    def test_privacy_report(self, run_cfg, run_dir):
        report = json.loads((run_dir / "privacy_report.json").read_text())
        assert 0.99 * run_cfg.epsilon <= report["epsilon"] <= run_cfg.epsilon
        phases = {p["mechanism"]: p for p in report["phases"]}
        assert set(phases) == {"norm-mean", "norm-var", "fedavg-round"}
        assert all(p["rdp"] is not None for p in phases.values())
        total = np.zeros(len(report["orders"]))
        for p in phases.values():
            total += np.asarray(p["rdp"])
        assert np.allclose(total, report["total_rdp"], rtol=1e-12, atol=1e-15)

    def test_rerun_is_byte_identical(self, run_cfg, run_dir):
        digest = {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                  for p in run_dir.iterdir()}
        stage_generate(run_cfg, run_dir)
        stage_partition(run_cfg, run_dir)
        stage_train(run_cfg, run_dir, max_workers=1)
        stage_evaluate(run_dir)
        stage_account(run_dir)
        after = {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
                 for p in run_dir.iterdir()}
        assert digest == after

    def test_metrics_identity_comes_from_checkpoint(self, run_cfg, run_dir):
        snapshot, rows = read_metrics(run_dir / METRICS_FILE)
        assert snapshot == run_cfg.to_dict()
        assert {r["split"] for r in rows} == {"train", "test"}
        for row in rows:
            assert row["feature_set"] == run_cfg.feature_set
            assert int(row["participants"]) == run_cfg.n_participants
            assert int(row["n_positive"]) > 0


class TestStageGuards:
    def test_stages_demand_their_inputs(self, tmp_path):
        cfg = tiny_config()
        with pytest.raises(StageDependencyError):
            stage_partition(cfg, tmp_path / "empty")
        with pytest.raises(StageDependencyError):
            stage_train(cfg, tmp_path / "empty")
        with pytest.raises(StageDependencyError):
            stage_evaluate(tmp_path / "empty")
        with pytest.raises(StageDependencyError):
            stage_account(tmp_path / "empty")

    def test_train_requires_partition(self, tmp_path):
        cfg = tiny_config()
        stage_generate(cfg, tmp_path)
        with pytest.raises(StageDependencyError):
            stage_train(cfg, tmp_path)

    def test_partition_rejects_foreign_traces(self, tmp_path):
        stage_generate(tiny_config(seed=7), tmp_path)
        with pytest.raises(StageDependencyError):
            stage_partition(tiny_config(seed=8), tmp_path)

    def test_train_rejects_foreign_partition(self, tmp_path):
        cfg = tiny_config()
        stage_generate(cfg, tmp_path)
        stage_partition(cfg, tmp_path)
        with pytest.raises(StageDependencyError):
            stage_train(dataclasses.replace(cfg, n_participants=21), tmp_path)

    def test_evaluate_rejects_foreign_catalog(self, tmp_path):
        cfg = tiny_config()
        stage_generate(cfg, tmp_path)
        stage_partition(cfg, tmp_path)
        stage_train(cfg, tmp_path)
        checkpoint = json.loads((tmp_path / CHECKPOINT_FILE).read_text())
        checkpoint["catalog_hash"] = "0" * 32
        (tmp_path / CHECKPOINT_FILE).write_text(json.dumps(checkpoint))
        with pytest.raises(StageDependencyError):
            stage_evaluate(tmp_path)

    def test_too_few_training_domains(self, tmp_path):
        cfg = tiny_config(
            generator=GeneratorConfig(n_scripts=60, fp_prevalence=0.05, n_domains=10),
            urls_per_participant=50)
        stage_generate(cfg, tmp_path)
        with pytest.raises(ConfigError) as err:
            stage_partition(cfg, tmp_path)
        assert err.value.field == "urls_per_participant"


class TestNormalizationToggle:
    def test_norm_off_run(self, tmp_path):
        cfg = tiny_config(normalize=False, epsilon=2.0)
        stage_generate(cfg, tmp_path)
        stage_partition(cfg, tmp_path)
        outcome = stage_train(cfg, tmp_path)
        assert outcome.norm_stats is None
        assert not (tmp_path / NORM_STATS_FILE).exists()
        stored = json.loads((tmp_path / LEDGER_FILE).read_text())
        assert [e[0] for e in stored["entries"]] == ["fedavg-round"] * cfg.rounds
        rows = stage_evaluate(tmp_path)
        assert {r["split"] for r in rows} == {"train", "test"}

    def test_norm_off_cleans_stale_stats(self, tmp_path):
        cfg_on = tiny_config()
        stage_generate(cfg_on, tmp_path)
        stage_partition(cfg_on, tmp_path)
        stage_train(cfg_on, tmp_path)
        assert (tmp_path / NORM_STATS_FILE).exists()
        stage_train(dataclasses.replace(cfg_on, normalize=False), tmp_path)
        assert not (tmp_path / NORM_STATS_FILE).exists()

    def test_no_noise_run_reports_infinite_epsilon(self, tmp_path):
        cfg = tiny_config(epsilon=math.inf)
        stage_generate(cfg, tmp_path)
        stage_partition(cfg, tmp_path)
        outcome = stage_train(cfg, tmp_path)
        assert outcome.budget == NoiseBudget(0.0, 0.0)
        report = stage_account(tmp_path)
        assert report["epsilon"] == "inf"
        assert report["total_rdp"] is None


class TestTrainingRanking:
    def test_restricts_and_preserves_order(self):
        ranking = DomainRanking(("a.com", "b.com", "c.com", "d.com"))
        split = SplitSpec(("d.com", "b.com"), ("a.com", "c.com"))
        reduced = training_ranking(ranking, split)
        assert reduced.domains == ("b.com", "d.com")
