"""Experiment pipeline: generate -> partition -> train -> evaluate -> account.

Each stage is a pure function of (config, run directory): it reads the
artifacts earlier stages wrote, writes its own, and re-running it with
the same config produces byte-identical files. Missing upstream
artifacts raise StageDependencyError; bad configuration raises
ConfigError naming the offending field path.

One shared privacy ledger covers both private phases of a run. With
normalization enabled and a finite epsilon target, a configurable
fraction of the target (default 10%) is reserved for the 2F
normalization statistic queries: their noise multiplier is calibrated
first against that slice alone, and the training multiplier is then
calibrated against the full target with the normalization phase
composed at its fixed multiplier. epsilon = inf is the no-noise
sentinel; both multipliers are zero and the accountant reports inf.

Artifacts, all inside one run directory:

    traces.jsonl            one JSON object per script trace
    catalog.json            feature catalog used throughout the run
    placements.json         domain -> script ids in load order
    ranking.txt             rank<TAB>domain popularity ranking
    split.json              train/test domain lists
    generate_manifest.json  corpus counts plus the config snapshot
    partition.json          per-participant domain draws + knowledge map
    normstats.json          private normalization statistics (if enabled)
    checkpoint.json         final model weights plus provenance hashes
    round_records.csv       per-round sampled / update norm / theta norm
    ledger.json             every (mechanism, q, z, count) charged
    metrics.csv             train/test AUPRC rows, config in the header
    privacy_report.json     per-phase RDP and the final epsilon at delta

The identity columns that evaluate writes come from the checkpoint's
stored config, so metrics always describe the model they score.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvalidInput, InvalidMask, StageDependencyError
from .features import catalog_hash, default_catalog, load_catalog, save_catalog
from .fedavg import TrainingRunConfig, RoundRecord, train
from .fednorm import (DEFAULT_CLIP_MU, DEFAULT_CLIP_VAR, NORMALIZE_MODES, VARIANCE_FLOOR,
                      ColumnMoments, NormStats, dp_fed_norm, load_norm_stats,
                      normalize_matrix, participant_moments, save_norm_stats)
from .heuristics import label
from .metrics import average_precision
from .model import LogisticModel, OptimizerConfig
from .partition import (DEFAULT_URLS_PER_PARTICIPANT, DEFAULT_ZIPF_EXPONENT, DomainRanking,
                        LimitedKnowledgeSpec, ParticipantDataset, ScriptCorpus, apply_spec,
                        assign_scripts, build_partition, load_ranking,
                        make_limited_knowledge, save_ranking, zipf_sample_domains)
from .privacy import PlannedQuery, PrivacyLedger, calibrate_noise
from .seeding import DOMAIN_SAMPLING, NORM_QUERY, derive_rng
from .synth import GeneratorConfig, SplitSpec, generate_corpus, generate_stream
from .traces import LabeledScript, parse_trace_file, trace_to_json_line

TARGET_SAMPLED_PER_ROUND = 100
DEFAULT_DELTA = 1e-5
DEFAULT_NORM_FRACTION = 0.1

TRACES_FILE = "traces.jsonl"
CATALOG_FILE = "catalog.json"
PLACEMENTS_FILE = "placements.json"
RANKING_FILE = "ranking.txt"
SPLIT_FILE = "split.json"
GENERATE_MANIFEST_FILE = "generate_manifest.json"
PARTITION_FILE = "partition.json"
NORM_STATS_FILE = "normstats.json"
CHECKPOINT_FILE = "checkpoint.json"
ROUND_RECORDS_FILE = "round_records.csv"
LEDGER_FILE = "ledger.json"
METRICS_FILE = "metrics.csv"
PRIVACY_REPORT_FILE = "privacy_report.json"

METRICS_HEADER = ("feature_set", "participants", "epsilon", "seed", "split",
                  "n_scripts", "n_positive", "auprc")
ROUND_RECORDS_HEADER = ("round", "sampled", "update_norm", "theta_norm", "auprc")
CONFIG_COMMENT_PREFIX = "# config="

STAGES = ("generate", "partition", "train", "evaluate", "account")


def _encode_epsilon(value: float):
    return "inf" if math.isinf(value) else float(value)


def _decode_epsilon(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError("epsilon", f"not a number: {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError("epsilon", f"not a number: {value!r}") from None


# --------------------------------------------------------------- config

_INT_FIELDS = frozenset({"n_participants", "urls_per_participant", "rounds",
                         "local_epochs", "local_iterations", "eval_every", "seed"})
_FLOAT_FIELDS = frozenset({"zipf_exponent", "limited_knowledge_fraction", "delta",
                           "norm_fraction", "clip_mu", "clip_var", "variance_floor",
                           "clip_norm"})
_OPTIONAL_FLOAT_FIELDS = frozenset({"q", "norm_q"})
_BOOL_FIELDS = frozenset({"normalize"})
_STR_FIELDS = frozenset({"feature_set", "norm_mode"})


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """Everything one run depends on; `seed` moves every random stream.

    The embedded generator config's own seed is overridden by the
    top-level seed at resolution time, so corpus, partition and training
    randomness all follow the one knob. q and norm_q default to the rate
    that samples about 100 participants per round.
    """

    generator: GeneratorConfig = field(
        default_factory=lambda: GeneratorConfig(n_scripts=20_000))
    n_participants: int = 100
    urls_per_participant: int = DEFAULT_URLS_PER_PARTICIPANT
    zipf_exponent: float = DEFAULT_ZIPF_EXPONENT
    limited_knowledge_fraction: float = 0.0
    feature_set: str = "ExtHighEntropy"
    epsilon: float = math.inf
    delta: float = DEFAULT_DELTA
    norm_fraction: float = DEFAULT_NORM_FRACTION
    normalize: bool = True
    norm_mode: str = "std"
    norm_q: float | None = None
    clip_mu: float = DEFAULT_CLIP_MU
    clip_var: float = DEFAULT_CLIP_VAR
    variance_floor: float = VARIANCE_FLOOR
    rounds: int = 30
    q: float | None = None
    clip_norm: float = 1.0
    local_epochs: int = 1
    local_iterations: int = 25
    eval_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_participants < 1:
            raise ConfigError("n_participants", f"must be >= 1: {self.n_participants}")
        if self.urls_per_participant < 1:
            raise ConfigError("urls_per_participant",
                              f"must be >= 1: {self.urls_per_participant}")
        if self.zipf_exponent <= 0:
            raise ConfigError("zipf_exponent", f"must be positive: {self.zipf_exponent}")
        if not 0.0 <= self.limited_knowledge_fraction <= 1.0:
            raise ConfigError("limited_knowledge_fraction",
                              f"must be in [0, 1]: {self.limited_knowledge_fraction}")
        if not self.feature_set:
            raise ConfigError("feature_set", "must be non-empty")
        if self.epsilon <= 0:
            raise ConfigError("epsilon", f"must be positive: {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta", f"must be in (0, 1): {self.delta}")
        if not 0.0 < self.norm_fraction < 1.0:
            raise ConfigError("norm_fraction", f"must be in (0, 1): {self.norm_fraction}")
        if self.norm_mode not in NORMALIZE_MODES:
            raise ConfigError("norm_mode",
                              f"must be one of {NORMALIZE_MODES}: {self.norm_mode!r}")
        for name, value in (("q", self.q), ("norm_q", self.norm_q)):
            if value is not None and not 0.0 < value <= 1.0:
                raise ConfigError(name, f"must be in (0, 1]: {value}")
        if self.clip_mu <= 0 or self.clip_var <= 0:
            raise ConfigError("clip_mu", "clip bounds must be positive")
        if self.variance_floor <= 0:
            raise ConfigError("variance_floor",
                              f"must be positive: {self.variance_floor}")
        if self.rounds < 1:
            raise ConfigError("rounds", f"must be >= 1: {self.rounds}")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm", f"must be positive: {self.clip_norm}")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs", f"must be >= 1: {self.local_epochs}")
        if self.local_iterations < 1:
            raise ConfigError("local_iterations", f"must be >= 1: {self.local_iterations}")
        if self.eval_every < 0:
            raise ConfigError("eval_every", f"must be >= 0: {self.eval_every}")

    @property
    def resolved_q(self) -> float:
        if self.q is not None:
            return self.q
        return min(1.0, TARGET_SAMPLED_PER_ROUND / self.n_participants)

    @property
    def resolved_norm_q(self) -> float:
        return self.norm_q if self.norm_q is not None else self.resolved_q

    @property
    def resolved_generator(self) -> GeneratorConfig:
        return dataclasses.replace(self.generator, seed=self.seed)

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(max_iterations=self.local_iterations)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "generator":
                value = value.to_dict()
            elif f.name == "epsilon":
                value = _encode_epsilon(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ExperimentConfig":
        data = dict(obj)
        kwargs = {}
        gen = data.pop("generator", None)
        if gen is not None:
            if not isinstance(gen, Mapping):
                raise ConfigError("generator", "must be an object")
            known = {f.name for f in dataclasses.fields(GeneratorConfig)}
            for key in gen:
                if key not in known:
                    raise ConfigError(f"generator.{key}", "unknown field")
            try:
                kwargs["generator"] = GeneratorConfig.from_dict(gen)
            except InvalidInput as exc:
                raise ConfigError("generator", str(exc)) from exc
        if "epsilon" in data:
            kwargs["epsilon"] = _decode_epsilon(data.pop("epsilon"))
        for name in list(data):
            value = data.pop(name)
            try:
                if name in _INT_FIELDS:
                    if isinstance(value, float) and not value.is_integer():
                        raise ValueError(f"not an integer: {value}")
                    kwargs[name] = int(value)
                elif name in _FLOAT_FIELDS:
                    kwargs[name] = float(value)
                elif name in _OPTIONAL_FLOAT_FIELDS:
                    kwargs[name] = None if value is None else float(value)
                elif name in _BOOL_FIELDS:
                    if not isinstance(value, bool):
                        raise ValueError(f"expected true/false: {value!r}")
                    kwargs[name] = value
                elif name in _STR_FIELDS:
                    if not isinstance(value, str):
                        raise ValueError(f"expected a string: {value!r}")
                    kwargs[name] = value
                else:
                    raise ConfigError(name, "unknown field")
            except (TypeError, ValueError) as exc:
                raise ConfigError(name, f"bad value: {exc}") from exc
        return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Read a JSON config file; unspecified fields take their defaults."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(str(path), "config root must be a JSON object")
    return ExperimentConfig.from_dict(obj)


def save_config(config: ExperimentConfig, path) -> None:
    _write_json(config.to_dict(), path)


def apply_overrides(config: ExperimentConfig, assignments: Sequence[str]) -> ExperimentConfig:
    """Apply dotted-path overrides like generator.n_scripts=5000.

    Values parse as JSON literals where possible and fall back to raw
    strings, so feature_set=HighEntropy and epsilon=inf both work.
    """
    data = config.to_dict()
    for item in assignments:
        path, sep, raw = item.partition("=")
        path = path.strip()
        if not sep or not path:
            raise ConfigError(item, "override must look like field.path=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = data
        for key in keys[:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                raise ConfigError(path, f"{key!r} is not a config section")
            node = nxt
        node[keys[-1]] = value
    return ExperimentConfig.from_dict(data)


def smoke_preset() -> ExperimentConfig:
    """Small corpus, full participation, minutes on a laptop."""
    return ExperimentConfig(
        generator=GeneratorConfig(n_scripts=20_000),
        n_participants=100,
        rounds=10,
        q=1.0,
        epsilon=5.0,
        feature_set="ExtHighEntropy",
        local_iterations=10,
    )


def paper_trend_preset() -> ExperimentConfig:
    """Reference trend operating point: large corpus, subsampled rounds."""
    return ExperimentConfig(
        generator=GeneratorConfig(n_scripts=100_000),
        n_participants=1000,
        rounds=30,
        q=0.1,
        epsilon=5.0,
        feature_set="ExtHighEntropy",
        local_iterations=25,
    )


PRESETS = {"smoke": smoke_preset, "paper-trend": paper_trend_preset}


def preset_config(name: str) -> ExperimentConfig:
    try:
        build = PRESETS[name]
    except KeyError:
        raise ConfigError("preset",
                          f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return build()


# ------------------------------------------------------------ artifacts

def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def config_snapshot_line(config: ExperimentConfig) -> str:
    return CONFIG_COMMENT_PREFIX + json.dumps(
        config.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence],
               snapshot: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if snapshot is not None:
            fh.write(snapshot + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def read_metrics(path) -> tuple[dict | None, list[dict]]:
    """Read a metrics-style CSV back as (config snapshot, row dicts).

    Cell values come back as strings; the snapshot is the parsed JSON
    from the leading config comment, or None when absent.
    """
    config = None
    header = None
    rows: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if config is None and line.startswith(CONFIG_COMMENT_PREFIX):
                    config = json.loads(line[len(CONFIG_COMMENT_PREFIX):])
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(dict(zip(header, line.split(","))))
    return config, rows


def _require(run_dir: Path, stage: str, names: Sequence[str]) -> None:
    missing = [n for n in names if not (run_dir / n).exists()]
    if missing:
        raise StageDependencyError(
            f"stage {stage!r} needs {', '.join(missing)} in {run_dir}; "
            f"run the earlier stages first")


# ----------------------------------------------------- in-memory pieces

def training_ranking(ranking: DomainRanking, split: SplitSpec) -> DomainRanking:
    """Popularity ranking restricted to training domains, order kept."""
    train = set(split.train_domains)
    return DomainRanking(tuple(d for d in ranking if d in train))


def _rows_for(corpus: ScriptCorpus, domains: Sequence[str]) -> np.ndarray:
    chunks = [corpus.rows_for_domain(d) for d in domains]
    rows = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.intp)
    return np.unique(rows)


@dataclass(eq=False)
class PreparedData:
    """Corpus plus the split bookkeeping every later stage leans on."""

    corpus: ScriptCorpus
    ranking: DomainRanking
    split: SplitSpec
    manifest: dict

    @cached_property
    def train_ranking(self) -> DomainRanking:
        return training_ranking(self.ranking, self.split)

    @cached_property
    def train_rows(self) -> np.ndarray:
        return _rows_for(self.corpus, self.split.train_domains)

    @cached_property
    def test_rows(self) -> np.ndarray:
        return _rows_for(self.corpus, self.split.test_domains)


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Generate the corpus straight into the feature matrix."""
    corpus, ranking, split, manifest = generate_corpus(config.resolved_generator,
                                                       default_catalog())
    return PreparedData(corpus, ranking, split, manifest)


def build_participants(prepared: PreparedData,
                       config: ExperimentConfig) -> list[ParticipantDataset]:
    """Partition the training domains and apply the knowledge limits."""
    if config.urls_per_participant > len(prepared.train_ranking):
        raise ConfigError("urls_per_participant",
                          f"only {len(prepared.train_ranking)} training domains available")
    partition = build_partition(prepared.corpus, prepared.train_ranking,
                                config.n_participants, config.urls_per_participant,
                                config.zipf_exponent, config.seed)
    spec = make_limited_knowledge(range(config.n_participants),
                                  config.limited_knowledge_fraction, config.seed)
    return apply_spec(partition.participants, spec)


class _MatrixParticipant:
    """Row view into one shared feature matrix, materialized on access."""

    __slots__ = ("participant_id", "rows", "_x", "_y")

    def __init__(self, participant_id: int, rows: np.ndarray,
                 x: np.ndarray, y: np.ndarray):
        self.participant_id = participant_id
        self.rows = rows
        self._x = x
        self._y = y

    @property
    def features(self) -> np.ndarray:
        return self._x[self.rows]

    @property
    def labels(self) -> np.ndarray:
        return self._y[self.rows]


def resolve_mask(catalog, name: str) -> np.ndarray:
    try:
        return catalog.mask(name)
    except InvalidMask as exc:
        raise ConfigError("feature_set", str(exc)) from exc


@dataclass(frozen=True, slots=True)
class NoiseBudget:
    z_norm: float
    z_train: float


def calibrate_budget(config: ExperimentConfig, n_features: int) -> NoiseBudget:
    """Split the epsilon target between normalization and training.

    Normalization is calibrated first against norm_fraction of the
    target using its 2F queries alone; training is then calibrated
    against the full target with the normalization phase fixed. With
    normalization off the whole budget goes to training. epsilon = inf
    means no noise anywhere.
    """
    if math.isinf(config.epsilon):
        return NoiseBudget(0.0, 0.0)
    rounds_query = PlannedQuery(config.resolved_q, config.rounds)
    if not config.normalize:
        z_train = calibrate_noise(config.epsilon, config.delta, [rounds_query])
        return NoiseBudget(0.0, z_train)
    norm_query_count = 2 * n_features
    z_norm = calibrate_noise(config.norm_fraction * config.epsilon, config.delta,
                             [PlannedQuery(config.resolved_norm_q, norm_query_count)])
    z_train = calibrate_noise(config.epsilon, config.delta,
                              [PlannedQuery(config.resolved_norm_q, norm_query_count,
                                            z=z_norm),
                               rounds_query])
    return NoiseBudget(z_norm, z_train)


@dataclass(eq=False)
class TrainOutcome:
    """Model, per-round records and the privacy state of one training run."""

    model: LogisticModel
    records: list[RoundRecord]
    ledger: PrivacyLedger
    budget: NoiseBudget
    norm_stats: NormStats | None
    mask: np.ndarray
    matrix: np.ndarray  # normalized masked features for every corpus row


def train_in_memory(prepared: PreparedData, participants: Sequence[ParticipantDataset],
                    config: ExperimentConfig, *, moments: ColumnMoments | None = None,
                    max_workers: int | None = None) -> TrainOutcome:
    """Calibrate, normalize and run the round loop on prepared data.

    moments may carry precomputed per-participant column moments (they
    depend only on the partition and the feature set, not on the noise
    level), which sweeps reuse across epsilon settings.
    """
    corpus = prepared.corpus
    mask = resolve_mask(corpus.catalog, config.feature_set)
    budget = calibrate_budget(config, len(mask))
    ledger = PrivacyLedger()
    x_masked = corpus.X[:, mask]
    y = corpus.labels
    raw_parts = [_MatrixParticipant(p.participant_id, p.rows, x_masked, y)
                 for p in participants]
    norm_stats = None
    matrix = x_masked
    if config.normalize:
        if moments is None:
            moments = participant_moments(raw_parts)
        norm_stats = dp_fed_norm(raw_parts, config.resolved_norm_q, budget.z_norm,
                                 config.clip_mu, config.clip_var,
                                 rng=derive_rng(config.seed, NORM_QUERY),
                                 ledger=ledger, moments=moments,
                                 variance_floor=config.variance_floor)
        matrix = normalize_matrix(x_masked, norm_stats, config.norm_mode,
                                  variance_floor=config.variance_floor)
    train_parts = [_MatrixParticipant(p.participant_id, p.rows, matrix, y)
                   for p in raw_parts]
    run_cfg = TrainingRunConfig(rounds=config.rounds, n_participants=config.n_participants,
                                q=config.resolved_q, z=budget.z_train,
                                clip_norm=config.clip_norm, local_epochs=config.local_epochs,
                                optimizer=config.optimizer, feature_set=config.feature_set,
                                seed=config.seed, eval_every=config.eval_every)
    evaluator = None
    if config.eval_every:
        x_test = matrix[prepared.test_rows]
        y_test = y[prepared.test_rows]

        def evaluator(theta: np.ndarray) -> float:
            scores = LogisticModel.from_theta(theta).decision_scores(x_test)
            return average_precision(scores, y_test)

    model, records = train(train_parts, len(mask), run_cfg, ledger=ledger,
                           evaluator=evaluator, max_workers=max_workers)
    return TrainOutcome(model, records, ledger, budget, norm_stats, mask, matrix)


def evaluate_in_memory(prepared: PreparedData, config: ExperimentConfig,
                       outcome: TrainOutcome) -> list[dict]:
    """Score the held-out and training splits with the final model."""
    y = prepared.corpus.labels
    out = []
    for split_name, rows in (("train", prepared.train_rows), ("test", prepared.test_rows)):
        scores = outcome.model.decision_scores(outcome.matrix[rows])
        out.append({
            "feature_set": config.feature_set,
            "participants": config.n_participants,
            "epsilon": config.epsilon,
            "seed": config.seed,
            "split": split_name,
            "n_scripts": int(rows.size),
            "n_positive": int(y[rows].sum()),
            "auprc": average_precision(scores, y[rows]),
        })
    return out


@dataclass(eq=False)
class PipelineResult:
    prepared: PreparedData
    participants: list[ParticipantDataset]
    outcome: TrainOutcome
    metrics: list[dict]

    @property
    def test_auprc(self) -> float:
        return next(r["auprc"] for r in self.metrics if r["split"] == "test")


def run_pipeline(config: ExperimentConfig, *, max_workers: int | None = None) -> PipelineResult:
    """Full in-memory run: corpus, partition, training, evaluation."""
    prepared = prepare_data(config)
    participants = build_participants(prepared, config)
    outcome = train_in_memory(prepared, participants, config, max_workers=max_workers)
    metrics = evaluate_in_memory(prepared, config, outcome)
    return PipelineResult(prepared, participants, outcome, metrics)


# --------------------------------------------------------- file stages

def stage_generate(config: ExperimentConfig, run_dir) -> dict:
    """Write the corpus artifacts, streaming traces straight to disk."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    catalog = default_catalog()
    stream, placements, ranking, split, manifest = generate_stream(
        config.resolved_generator, catalog)
    with open(run_dir / TRACES_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for script in stream:
            fh.write(trace_to_json_line(script.trace))
            fh.write("\n")
    save_catalog(catalog, run_dir / CATALOG_FILE)
    _write_json(placements, run_dir / PLACEMENTS_FILE)
    save_ranking(ranking, run_dir / RANKING_FILE)
    _write_json(split.to_dict(), run_dir / SPLIT_FILE)
    manifest = {**manifest, "experiment_config": config.to_dict()}
    _write_json(manifest, run_dir / GENERATE_MANIFEST_FILE)
    return manifest


def _check_generated_config(config: ExperimentConfig, run_dir: Path, stage: str) -> None:
    stored = _read_json(run_dir / GENERATE_MANIFEST_FILE).get("experiment_config", {})
    current = config.to_dict()
    for key in ("generator", "seed"):
        if stored.get(key) != current[key]:
            raise StageDependencyError(
                f"stage {stage!r}: traces in {run_dir} came from a different "
                f"{key} setting; re-run the generate stage")


def stage_partition(config: ExperimentConfig, run_dir) -> dict:
    """Draw every participant's domains and fix the knowledge limits."""
    run_dir = Path(run_dir)
    _require(run_dir, "partition",
             (RANKING_FILE, SPLIT_FILE, PLACEMENTS_FILE, GENERATE_MANIFEST_FILE))
    _check_generated_config(config, run_dir, "partition")
    ranking = load_ranking(run_dir / RANKING_FILE)
    split = SplitSpec.from_dict(_read_json(run_dir / SPLIT_FILE))
    placements = _read_json(run_dir / PLACEMENTS_FILE)
    train_ranking = training_ranking(ranking, split)
    if config.urls_per_participant > len(train_ranking):
        raise ConfigError("urls_per_participant",
                          f"only {len(train_ranking)} training domains available")
    participants = []
    for pid in range(config.n_participants):
        rng = derive_rng(config.seed, DOMAIN_SAMPLING, pid)
        domains = zipf_sample_domains(train_ranking, config.urls_per_participant,
                                      config.zipf_exponent, rng)
        held: set[str] = set()
        for d in domains:
            held.update(placements[d])
        participants.append({"participant_id": pid, "urls": list(domains),
                             "n_scripts": len(held)})
    spec = make_limited_knowledge(range(config.n_participants),
                                  config.limited_knowledge_fraction, config.seed)
    manifest = {
        "master_seed": config.seed,
        "n_participants": config.n_participants,
        "urls_per_participant": config.urls_per_participant,
        "zipf_exponent": config.zipf_exponent,
        "limited_knowledge": {"fraction": spec.fraction,
                              "assignments": [[pid, t] for pid, t in spec.assignments]},
        "participants": participants,
        "config": config.to_dict(),
    }
    _write_json(manifest, run_dir / PARTITION_FILE)
    return manifest


_PARTITION_FIELDS = ("generator", "n_participants", "urls_per_participant",
                     "zipf_exponent", "limited_knowledge_fraction", "seed")


def _check_partition_config(config: ExperimentConfig, manifest: dict) -> None:
    stored = manifest.get("config", {})
    current = config.to_dict()
    for key in _PARTITION_FIELDS:
        if stored.get(key) != current[key]:
            raise StageDependencyError(
                f"partition.json was built with {key}={stored.get(key)!r} but the "
                f"config says {current[key]!r}; re-run the partition stage")


def load_corpus(run_dir, dtype=np.float32) -> tuple[ScriptCorpus, SplitSpec]:
    """Rebuild the labeled corpus from traces, catalog and placements."""
    run_dir = Path(run_dir)
    catalog = load_catalog(run_dir / CATALOG_FILE)
    placements = _read_json(run_dir / PLACEMENTS_FILE)
    split = SplitSpec.from_dict(_read_json(run_dir / SPLIT_FILE))
    scripts = []
    for trace in parse_trace_file(run_dir / TRACES_FILE):
        found = label(trace)
        scripts.append(LabeledScript(trace, found.is_fingerprinting(), found.types()))
    corpus = ScriptCorpus.from_scripts(scripts, catalog, placements, dtype=dtype)
    return corpus, split


def participants_from_manifest(manifest: dict,
                               corpus: ScriptCorpus) -> list[ParticipantDataset]:
    """Rebuild row views from the stored domain draws and knowledge map."""
    parts = [assign_scripts(entry["urls"], corpus,
                            participant_id=int(entry["participant_id"]))
             for entry in manifest["participants"]]
    lk = manifest.get("limited_knowledge") or {"fraction": 0.0, "assignments": []}
    spec = LimitedKnowledgeSpec(float(lk["fraction"]),
                                tuple((int(pid), str(t)) for pid, t in lk["assignments"]))
    return apply_spec(parts, spec)


def stage_train(config: ExperimentConfig, run_dir,
                max_workers: int | None = None) -> TrainOutcome:
    """Calibrate, normalize and train from the stored corpus artifacts."""
    run_dir = Path(run_dir)
    _require(run_dir, "train", (CATALOG_FILE, TRACES_FILE, PLACEMENTS_FILE, SPLIT_FILE,
                                RANKING_FILE, GENERATE_MANIFEST_FILE, PARTITION_FILE))
    _check_generated_config(config, run_dir, "train")
    manifest = _read_json(run_dir / PARTITION_FILE)
    _check_partition_config(config, manifest)
    corpus, split = load_corpus(run_dir)
    ranking = load_ranking(run_dir / RANKING_FILE)
    prepared = PreparedData(corpus, ranking, split,
                            _read_json(run_dir / GENERATE_MANIFEST_FILE))
    participants = participants_from_manifest(manifest, corpus)
    outcome = train_in_memory(prepared, participants, config, max_workers=max_workers)
    if outcome.norm_stats is not None:
        save_norm_stats(outcome.norm_stats, run_dir / NORM_STATS_FILE)
    else:
        (run_dir / NORM_STATS_FILE).unlink(missing_ok=True)
    checkpoint = {
        "weights": [float(w) for w in outcome.model.weights],
        "bias": float(outcome.model.bias),
        "feature_set": config.feature_set,
        "catalog_hash": catalog_hash(corpus.catalog),
        "normalize": config.normalize,
        "norm_mode": config.norm_mode,
        "z_norm": outcome.budget.z_norm,
        "z_train": outcome.budget.z_train,
        "config": config.to_dict(),
    }
    _write_json(checkpoint, run_dir / CHECKPOINT_FILE)
    write_csv(run_dir / ROUND_RECORDS_FILE, ROUND_RECORDS_HEADER,
               [(r.round_index, r.sampled, r.update_norm, r.theta_norm, r.auprc)
                for r in outcome.records],
               snapshot=config_snapshot_line(config))
    _write_json({"delta": config.delta,
                 "entries": [[e.mechanism, e.q, e.z, e.count]
                             for e in outcome.ledger.entries]},
                run_dir / LEDGER_FILE)
    return outcome


def stage_evaluate(run_dir) -> list[dict]:
    """Score both splits with the stored checkpoint and write metrics.csv."""
    run_dir = Path(run_dir)
    _require(run_dir, "evaluate",
             (CATALOG_FILE, TRACES_FILE, PLACEMENTS_FILE, SPLIT_FILE, CHECKPOINT_FILE))
    checkpoint = _read_json(run_dir / CHECKPOINT_FILE)
    config = ExperimentConfig.from_dict(checkpoint["config"])
    corpus, split = load_corpus(run_dir)
    if checkpoint["catalog_hash"] != catalog_hash(corpus.catalog):
        raise StageDependencyError(
            "checkpoint was trained against a different catalog; re-run training")
    mask = resolve_mask(corpus.catalog, str(checkpoint["feature_set"]))
    weights = np.asarray(checkpoint["weights"], dtype=float)
    if weights.shape != (mask.size,):
        raise StageDependencyError(
            f"checkpoint holds {weights.size} weights but the feature set has "
            f"{mask.size} slots; re-run training")
    model = LogisticModel(weights, float(checkpoint["bias"]))
    x = corpus.X[:, mask]
    if checkpoint["normalize"]:
        _require(run_dir, "evaluate", (NORM_STATS_FILE,))
        stats = load_norm_stats(run_dir / NORM_STATS_FILE)
        x = normalize_matrix(x, stats, str(checkpoint["norm_mode"]),
                             variance_floor=config.variance_floor)
    y = corpus.labels
    rows_out = []
    for split_name, domains in (("train", split.train_domains),
                                ("test", split.test_domains)):
        rows = _rows_for(corpus, domains)
        scores = model.decision_scores(x[rows])
        rows_out.append({
            "feature_set": str(checkpoint["feature_set"]),
            "participants": config.n_participants,
            "epsilon": config.epsilon,
            "seed": config.seed,
            "split": split_name,
            "n_scripts": int(rows.size),
            "n_positive": int(y[rows].sum()),
            "auprc": average_precision(scores, y[rows]),
        })
    write_csv(run_dir / METRICS_FILE, METRICS_HEADER,
               [tuple(r[k] for k in METRICS_HEADER) for r in rows_out],
               snapshot=config_snapshot_line(config))
    return rows_out


def stage_account(run_dir) -> dict:
    """Replay the ledger and report per-phase and total privacy cost."""
    run_dir = Path(run_dir)
    _require(run_dir, "account", (LEDGER_FILE,))
    stored = _read_json(run_dir / LEDGER_FILE)
    delta = float(stored["delta"])
    entries = stored.get("entries", [])
    total = PrivacyLedger()
    phases: dict[str, PrivacyLedger] = {}
    for mechanism, q, z, count in entries:
        total.record(str(mechanism), float(q), float(z), int(count))
        phases.setdefault(str(mechanism), PrivacyLedger()).record(
            str(mechanism), float(q), float(z), int(count))
    orders = np.asarray(total.orders, dtype=float)

    def rdp_list(vec: np.ndarray):
        return None if np.isinf(vec).any() else [float(v) for v in vec]

    if not entries:
        epsilon, best_order = math.inf, None
    else:
        rdp = total.total_rdp
        if np.isinf(rdp).all():
            epsilon, best_order = math.inf, None
        else:
            eps_at = rdp + math.log(1.0 / delta) / (orders - 1.0)
            best = int(np.argmin(eps_at))
            epsilon, best_order = float(eps_at[best]), float(orders[best])
    report = {
        "delta": delta,
        "epsilon": _encode_epsilon(epsilon),
        "best_order": best_order,
        "n_queries": sum(int(e[3]) for e in entries),
        "orders": [float(a) for a in orders],
        "total_rdp": rdp_list(total.total_rdp) if entries else None,
        "phases": [
            {"mechanism": name,
             "n_queries": sum(e.count for e in lg.entries),
             "q": lg.entries[0].q,
             "z": lg.entries[0].z,
             "epsilon_alone": _encode_epsilon(lg.epsilon(delta)),
             "rdp": rdp_list(lg.total_rdp)}
            for name, lg in sorted(phases.items())
        ],
    }
    _write_json(report, run_dir / PRIVACY_REPORT_FILE)
    return report


def run_stages(config: ExperimentConfig, run_dir, stages: Sequence[str] = STAGES,
               max_workers: int | None = None) -> dict:
    """Run the named stages in pipeline order; returns the last result."""
    order = {name: i for i, name in enumerate(STAGES)}
    for name in stages:
        if name not in order:
            raise ConfigError("stage", f"unknown stage {name!r}; choose from {STAGES}")
    result: dict = {}
    for name in sorted(stages, key=order.__getitem__):
        if name == "generate":
            result = stage_generate(config, run_dir)
        elif name == "partition":
            result = stage_partition(config, run_dir)
        elif name == "train":
            stage_train(config, run_dir, max_workers=max_workers)
            result = _read_json(Path(run_dir) / CHECKPOINT_FILE)
        elif name == "evaluate":
            result = {"metrics": stage_evaluate(run_dir)}
        elif name == "account":
            result = stage_account(run_dir)
    return result
