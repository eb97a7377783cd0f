"""Domain-ranked corpus partitioning across simulated participants.

Each participant visits D domains, drawn without replacement with
probability proportional to rank^(-exponent) (renormalized after every
draw), and holds every script loaded on those domains, deduplicated by
script id. The draw uses the exponential-race formulation: domain i
gets key Exp(1)/w_i and the D smallest keys win, in key order. That is
distributionally identical to sequential renormalized sampling and
needs one pass over the weights.

Feature rows live in one shared corpus matrix; a participant dataset
is a view described by row indices, so ten thousand participants cost
index arrays rather than matrix copies.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import features
from .errors import InsufficientData, InvalidInput, ParseError
from .features import FeatureCatalog, FeatureVector
from .seeding import DOMAIN_SAMPLING, LIMITED_KNOWLEDGE, derive_rng
from .traces import FP_TYPES, LabeledScript, types_to_bitmask

DEFAULT_URLS_PER_PARTICIPANT = 50
DEFAULT_ZIPF_EXPONENT = 1.0
N_TYPE_COMBINATIONS = (1 << len(FP_TYPES)) - 1  # non-empty subsets of the four types
KL_SMOOTHING = 1e-3


@dataclass(frozen=True, slots=True)
class DomainRanking:
    """Domains ordered by popularity; position i holds rank i+1."""

    domains: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.domains)) != len(self.domains):
            raise InvalidInput("ranking contains duplicate domains")

    def __len__(self) -> int:
        return len(self.domains)

    def __iter__(self):
        return iter(self.domains)

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, len(self.domains) + 1)

    def pairs(self) -> list[tuple[str, int]]:
        return [(d, i + 1) for i, d in enumerate(self.domains)]

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, int]]) -> "DomainRanking":
        for i, (_, rank) in enumerate(pairs):
            if rank != i + 1:
                raise InvalidInput(
                    f"ranks must be contiguous from 1: position {i} has rank {rank}")
        return cls(tuple(domain for domain, _ in pairs))

    def weights(self, exponent: float) -> np.ndarray:
        if exponent <= 0:
            raise InvalidInput(f"zipf exponent must be positive: {exponent}")
        return self.ranks.astype(float) ** -exponent


def load_ranking(path) -> DomainRanking:
    """Read a two-column rank<TAB>domain file."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'rank<TAB>domain'", line=lineno, path=path)
            rank_text, domain = parts
            try:
                rank = int(rank_text)
            except ValueError:
                raise ParseError(f"bad rank {rank_text!r}", line=lineno, path=path) from None
            pairs.append((domain, rank))
    try:
        return DomainRanking.from_pairs(pairs)
    except InvalidInput as exc:
        raise ParseError(str(exc), path=path) from exc


def save_ranking(ranking: DomainRanking, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for domain, rank in ranking.pairs():
            fh.write(f"{rank}\t{domain}\n")


def zipf_sample_domains(ranking: DomainRanking, d: int, exponent: float = DEFAULT_ZIPF_EXPONENT,
                        rng: np.random.Generator | None = None) -> list[str]:
    """Draw d domains without replacement, P(draw) proportional to rank^-exponent."""
    if rng is None:
        raise InvalidInput("zipf_sample_domains requires an explicit rng")
    if d < 1:
        raise InvalidInput(f"need at least one draw: {d}")
    if d > len(ranking):
        raise InvalidInput(f"cannot draw {d} domains from {len(ranking)}")
    weights = ranking.weights(exponent)
    keys = rng.exponential(size=len(weights)) / weights
    if d == len(ranking):
        winners = np.argsort(keys, kind="stable")
    else:
        part = np.argpartition(keys, d - 1)[:d]
        winners = part[np.argsort(keys[part], kind="stable")]
    return [ranking.domains[i] for i in winners]


@dataclass(eq=False)
class ScriptCorpus:
    """Shared feature matrix plus the domain -> row-index placement map."""

    catalog: FeatureCatalog
    script_ids: tuple[str, ...]
    X: np.ndarray            # (n_scripts, slot_count)
    labels: np.ndarray       # bool
    fp_bitmasks: np.ndarray  # uint8 over FP_TYPES bits
    domain_rows: dict[str, np.ndarray]

    def __post_init__(self):
        n = len(self.script_ids)
        if self.X.shape != (n, self.catalog.slot_count):
            raise InvalidInput("feature matrix shape does not match scripts and catalog")
        if self.labels.shape != (n,) or self.fp_bitmasks.shape != (n,):
            raise InvalidInput("label arrays must have one entry per script")

    @property
    def n_scripts(self) -> int:
        return len(self.script_ids)

    @property
    def domains(self) -> tuple[str, ...]:
        return tuple(self.domain_rows)

    @cached_property
    def _row_of_script(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.script_ids)}

    def rows_for_domain(self, domain: str) -> np.ndarray:
        try:
            return self.domain_rows[domain]
        except KeyError:
            raise InvalidInput(f"unknown domain: {domain!r}") from None

    @classmethod
    def from_scripts(cls, scripts: Sequence[LabeledScript], catalog: FeatureCatalog,
                     placements: Mapping[str, Sequence[str]] | None = None,
                     dtype=np.float32) -> "ScriptCorpus":
        """Extract features for every distinct script id (first trace wins).

        placements maps domain -> script ids in load order; when omitted it
        is derived from each trace's source domain. Scripts listed under a
        domain must exist in the corpus.
        """
        order: dict[str, LabeledScript] = {}
        for item in scripts:
            order.setdefault(item.trace.script_id, item)
        ids = tuple(order)
        x = np.zeros((len(ids), catalog.slot_count), dtype=dtype)
        labels = np.zeros(len(ids), dtype=bool)
        masks = np.zeros(len(ids), dtype=np.uint8)
        for i, sid in enumerate(ids):
            item = order[sid]
            features.fill_feature_row(item.trace, catalog, x[i])
            labels[i] = item.label
            masks[i] = types_to_bitmask(item.fp_types)
        row_of = {sid: i for i, sid in enumerate(ids)}
        domain_rows: dict[str, list[int]] = {}
        if placements is None:
            for item in scripts:
                domain_rows.setdefault(item.trace.source_domain, []).append(
                    row_of[item.trace.script_id])
        else:
            for domain, sids in placements.items():
                rows = domain_rows.setdefault(domain, [])
                for sid in sids:
                    row = row_of.get(sid)
                    if row is None:
                        raise InvalidInput(f"domain {domain!r} lists unknown script {sid!r}")
                    rows.append(row)
        packed = {d: np.asarray(rows, dtype=np.intp) for d, rows in domain_rows.items()}
        return cls(catalog, ids, x, labels, masks, packed)


@dataclass(eq=False)
class ParticipantDataset:
    """One participant's visited urls and the scripts those urls load."""

    participant_id: int
    urls: tuple[str, ...]
    rows: np.ndarray  # indices into the corpus, deduplicated, first-seen order
    corpus: ScriptCorpus

    @property
    def n_scripts(self) -> int:
        return int(self.rows.size)

    @property
    def features(self) -> np.ndarray:
        return self.corpus.X[self.rows]

    @property
    def labels(self) -> np.ndarray:
        return self.corpus.labels[self.rows]

    @property
    def fp_bitmasks(self) -> np.ndarray:
        return self.corpus.fp_bitmasks[self.rows]

    @property
    def script_ids(self) -> tuple[str, ...]:
        return tuple(self.corpus.script_ids[i] for i in self.rows)

    @property
    def scripts(self) -> list[FeatureVector]:
        from .traces import bitmask_to_types
        return [
            FeatureVector(np.asarray(self.corpus.X[i], dtype=float),
                          bool(self.corpus.labels[i]),
                          frozenset(bitmask_to_types(int(self.corpus.fp_bitmasks[i]))))
            for i in self.rows
        ]


def _dedup_keep_first(rows: np.ndarray) -> np.ndarray:
    if rows.size == 0:
        return rows
    _, first = np.unique(rows, return_index=True)
    return rows[np.sort(first)]


def assign_scripts(domains: Sequence[str], corpus: ScriptCorpus,
                   participant_id: int = 0) -> ParticipantDataset:
    """Union of the domains' script lists, deduplicated by script id."""
    chunks = [corpus.rows_for_domain(d) for d in domains]
    rows = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.intp)
    return ParticipantDataset(participant_id, tuple(domains), _dedup_keep_first(rows), corpus)


@dataclass(eq=False)
class Partition:
    corpus: ScriptCorpus
    ranking: DomainRanking
    participants: list[ParticipantDataset]
    urls_per_participant: int
    zipf_exponent: float
    master_seed: int

    @property
    def n_participants(self) -> int:
        return len(self.participants)


def build_partition(corpus: ScriptCorpus, ranking: DomainRanking, n_participants: int,
                    urls_per_participant: int = DEFAULT_URLS_PER_PARTICIPANT,
                    zipf_exponent: float = DEFAULT_ZIPF_EXPONENT,
                    master_seed: int = 0) -> Partition:
    """Sample every participant's domains from its own seeded stream.

    Stream k derives from (master_seed, domain-sampling tag, k), so the
    result does not depend on construction order.
    """
    if n_participants < 1:
        raise InvalidInput(f"need at least one participant: {n_participants}")
    missing = [d for d in ranking if d not in corpus.domain_rows]
    if missing:
        raise InvalidInput(f"ranking has {len(missing)} domains absent from the corpus, "
                           f"first: {missing[0]!r}")
    participants = []
    for pid in range(n_participants):
        rng = derive_rng(master_seed, DOMAIN_SAMPLING, pid)
        domains = zipf_sample_domains(ranking, urls_per_participant, zipf_exponent, rng)
        participants.append(assign_scripts(domains, corpus, participant_id=pid))
    return Partition(corpus, ranking, participants, urls_per_participant,
                     zipf_exponent, master_seed)


def partition_manifest(partition: Partition) -> dict:
    """JSON-ready description from which the partition can be rebuilt."""
    return {
        "master_seed": partition.master_seed,
        "n_participants": partition.n_participants,
        "urls_per_participant": partition.urls_per_participant,
        "zipf_exponent": partition.zipf_exponent,
        "catalog_hash": features.catalog_hash(partition.corpus.catalog),
        "corpus_scripts": partition.corpus.n_scripts,
        "participants": [
            {"participant_id": p.participant_id, "urls": list(p.urls),
             "n_scripts": p.n_scripts}
            for p in partition.participants
        ],
    }


@dataclass(frozen=True, slots=True)
class LimitedKnowledgeSpec:
    """Which participants see only one fingerprinting type, and which type."""

    fraction: float
    assignments: tuple[tuple[int, str], ...]  # (participant_id, allowed type)

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise InvalidInput(f"fraction must be in [0, 1]: {self.fraction}")
        for pid, allowed in self.assignments:
            if allowed not in FP_TYPES:
                raise InvalidInput(f"unknown fingerprinting type {allowed!r} "
                                   f"for participant {pid}")

    def as_dict(self) -> dict[int, str]:
        return dict(self.assignments)


def make_limited_knowledge(participant_ids: Sequence[int], fraction: float,
                           master_seed: int = 0) -> LimitedKnowledgeSpec:
    """Pick round(fraction * W) participants and give each one allowed type."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInput(f"fraction must be in [0, 1]: {fraction}")
    ids = sorted(int(p) for p in participant_ids)
    rng = derive_rng(master_seed, LIMITED_KNOWLEDGE)
    n_affected = round(fraction * len(ids))
    chosen = rng.permutation(len(ids))[:n_affected]
    chosen.sort()
    kinds = rng.integers(0, len(FP_TYPES), size=n_affected)
    assignments = tuple((ids[i], FP_TYPES[k]) for i, k in zip(chosen, kinds))
    return LimitedKnowledgeSpec(fraction, assignments)


def apply_limited_knowledge(dataset: ParticipantDataset, allowed_type: str) -> ParticipantDataset:
    """Drop fingerprinting scripts not of allowed_type; keep benign scripts."""
    if allowed_type not in FP_TYPES:
        raise InvalidInput(f"unknown fingerprinting type: {allowed_type!r}")
    bit = types_to_bitmask((allowed_type,))
    masks = dataset.fp_bitmasks
    keep = (masks == 0) | ((masks & bit) != 0)
    return ParticipantDataset(dataset.participant_id, dataset.urls,
                              dataset.rows[keep], dataset.corpus)


def apply_spec(participants: Sequence[ParticipantDataset],
               spec: LimitedKnowledgeSpec) -> list[ParticipantDataset]:
    by_id = spec.as_dict()
    out = []
    for p in participants:
        allowed = by_id.get(p.participant_id)
        out.append(p if allowed is None else apply_limited_knowledge(p, allowed))
    return out


def _combination_counts(dataset: ParticipantDataset) -> np.ndarray:
    masks = dataset.fp_bitmasks
    fp = masks[masks != 0]
    return np.bincount(fp, minlength=N_TYPE_COMBINATIONS + 1)[1:].astype(float)


def non_iidness_score(participants: Sequence[ParticipantDataset], sample_size: int = 1000,
                      rng: np.random.Generator | None = None,
                      smoothing: float = KL_SMOOTHING) -> float:
    """Mean pairwise symmetrized KL over fingerprinting-type-combination mixes.

    Participants with no fingerprinting scripts carry no distribution and
    are excluded before sampling. Each remaining participant's counts over
    the 15 non-empty type combinations get additive smoothing, and the
    score averages (KL(P||Q) + KL(Q||P)) / 2 over unordered pairs.
    """
    if sample_size < 2:
        raise InvalidInput(f"sample_size must be at least 2: {sample_size}")
    eligible = [(p.participant_id, _combination_counts(p)) for p in participants]
    eligible = [(pid, c) for pid, c in eligible if c.sum() > 0]
    if len(eligible) < 2:
        raise InsufficientData(
            f"need at least 2 participants with fingerprinting scripts, "
            f"have {len(eligible)}")
    eligible.sort(key=lambda item: item[0])
    if len(eligible) > sample_size:
        if rng is None:
            raise InvalidInput("sampling participants requires an rng")
        idx = rng.choice(len(eligible), size=sample_size, replace=False)
        eligible = [eligible[i] for i in np.sort(idx)]
    counts = np.stack([c for _, c in eligible])
    p = (counts + smoothing) / (counts.sum(axis=1, keepdims=True)
                                + smoothing * N_TYPE_COMBINATIONS)
    logp = np.log(p)
    self_score = (p * logp).sum(axis=1)
    cross = p @ logp.T  # cross[i, j] = sum_c P_i[c] log P_j[c]
    k = len(eligible)
    # sum over ordered pairs of KL(P_i || P_j) = (k-1) * sum_i self_i - sum_{i != j} cross_ij
    ordered = (k - 1) * self_score.sum() - (cross.sum() - np.trace(cross))
    return float(ordered / (k * (k - 1)))
