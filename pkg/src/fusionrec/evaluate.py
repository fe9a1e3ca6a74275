"""Evaluation protocols: pooled ranking, cold/warm cohorts, zero-shot transfer.

Each test user is scored against a candidate pool (the held-out target plus
sampled negatives drawn outside the user's own sequence). Items without a
collaborative embedding are routed through the semantic path: their text
embedding is encoded into the shared latent space and decoded back into the
collaborative space, yielding a pseudo-embedding every downstream dot
product can consume. The pipeline counts which route each lookup took so
protocol assertions (zero-shot must be 100% semantic) stay checkable.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import cf as cf_mod
from .align import AlignmentNetwork, decode, encode
from .cf import CfModel
from .data import ColdWarmPartition, SplitDataset
from .errors import DataError
from .metrics import bleu, hit_rate_at_k, ndcg_at_k, rouge, tokenize

__all__ = [
    "PROTOCOLS",
    "MetricReport",
    "RecommendationPipeline",
    "CohortComparison",
    "evaluate_split",
    "cold_warm_report",
    "zero_shot_eval",
    "report_to_json",
    "render_metric_table",
]

logger = logging.getLogger(__name__)

PROTOCOLS = ("standard", "cold", "warm", "zero_shot")

COLLABORATIVE_PATH = "collaborative_path"
SEMANTIC_PATH = "semantic_path"


@dataclass
class MetricReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    n_users: int
    protocol: str
    seed: int
    config_digest: str
    bleu4: float | None = None
    rouge1: float | None = None
    rougeL: float | None = None
    skipped: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.n_users <= 0:
            raise DataError(f"{self.protocol} report has no evaluated users")
        for name, values in (("hr", self.hr), ("ndcg", self.ndcg)):
            for k, v in values.items():
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{name}@{k} = {v} outside [0, 1]")
        for name in ("bleu4", "rouge1", "rougeL"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} = {v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "n_users": self.n_users,
            "skipped": self.skipped,
            "hr": {str(k): self.hr[k] for k in sorted(self.hr)},
            "ndcg": {str(k): self.ndcg[k] for k in sorted(self.ndcg)},
            "bleu4": self.bleu4,
            "rouge1": self.rouge1,
            "rougeL": self.rougeL,
        }


def report_to_json(report: MetricReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


@dataclass
class RecommendationPipeline:
    """Trained CF backbone plus the semantic fallback for unseen items."""

    cf_model: CfModel
    alignment: AlignmentNetwork | None = None
    semantic_map: dict[str, np.ndarray] | None = None
    routing: Counter = field(default_factory=Counter)

    def reset_routing(self) -> None:
        self.routing = Counter()

    def item_vector(self, item: str) -> np.ndarray:
        """Collaborative embedding, or its semantic reconstruction for cold items."""
        direct = cf_mod.item_embedding(self.cf_model, item)
        if direct is not None:
            self.routing[COLLABORATIVE_PATH] += 1
            return direct
        if self.alignment is not None and self.semantic_map is not None:
            semantic = self.semantic_map.get(item)
            if semantic is not None:
                self.routing[SEMANTIC_PATH] += 1
                latent = encode(self.alignment, "semantic", semantic)
                return decode(self.alignment, "collaborative", latent)
        raise DataError(
            f"item {item!r} has neither a collaborative embedding nor a semantic one"
        )

    def user_vector(self, history: list[str]) -> np.ndarray:
        if not history:
            raise ValueError("history must be non-empty")
        recent = list(history)[-self.cf_model.config.max_history :]
        vectors = np.stack([self.item_vector(item) for item in recent])
        return cf_mod.user_representation_from_vectors(self.cf_model, vectors)

    def rank_pool(self, history: list[str], pool: list[str]) -> list[str]:
        """Pool ids by score descending, ties broken by id ascending."""
        rep = self.user_vector(history)
        scores = {item: float(rep @ self.item_vector(item)) for item in pool}
        return sorted(pool, key=lambda item: (-scores[item], item))


def _sample_pool(
    target: str,
    excluded: set[str],
    universe: list[str],
    pool_size: int,
    rng: np.random.Generator,
) -> list[str]:
    eligible = [item for item in universe if item not in excluded]
    wanted = pool_size - 1
    if len(eligible) < wanted:
        logger.info(
            "pool shortfall for target %s: %d eligible < %d wanted; using all",
            target,
            len(eligible),
            wanted,
        )
        negatives = eligible
    else:
        chosen = rng.choice(len(eligible), size=wanted, replace=False)
        negatives = [eligible[i] for i in chosen]
    return [target] + negatives


def evaluate_split(
    pipeline: RecommendationPipeline,
    split: SplitDataset,
    ks: list[int],
    candidate_pool_size: int = 100,
    seed: int = 0,
    protocol: str = "standard",
    config_digest: str = "",
    users: list[str] | None = None,
    references: dict[tuple[str, str], str] | None = None,
    explainer=None,
) -> MetricReport:
    """Pooled leave-one-out ranking over the split's test targets.

    Negatives are drawn per user from the item universe minus the user's own
    sequence; a short pool falls back to all eligible items (logged). Users
    without a test target are skipped and counted. When an explanation
    generator and reference texts are both supplied, BLEU-4 / ROUGE are
    averaged over the covered (user, target) pairs.
    """
    if not ks:
        raise ValueError("ks must be non-empty")
    if candidate_pool_size < max(ks):
        raise ValueError(
            f"candidate pool {candidate_pool_size} is smaller than max k {max(ks)}"
        )
    rng = np.random.default_rng(seed)
    universe = sorted(split.item_universe())
    eval_users = sorted(split.train) if users is None else sorted(users)

    rankings: dict[str, list[str]] = {}
    targets: dict[str, str] = {}
    skipped = 0
    bleu_rows: list[float] = []
    rouge1_rows: list[float] = []
    rougel_rows: list[float] = []
    for user in eval_users:
        target = split.test.get(user)
        if target is None:
            skipped += 1
            logger.info("user %s has no test item; skipped", user)
            continue
        history = split.train[user] + [split.validation[user]]
        excluded = set(split.full_sequence(user))
        pool = _sample_pool(target, excluded, universe, candidate_pool_size, rng)
        rankings[user] = pipeline.rank_pool(history, pool)
        targets[user] = target
        if references is not None and explainer is not None:
            reference = references.get((user, target))
            if reference is not None:
                generated = tokenize(explainer(user, target))
                ref_tokens = tokenize(reference)
                bleu_rows.append(bleu(generated, ref_tokens))
                rouge1_rows.append(rouge(generated, ref_tokens, "rouge1"))
                rougel_rows.append(rouge(generated, ref_tokens, "rougeL"))
    if skipped:
        logger.info("%d users skipped (no test item)", skipped)
    if not rankings:
        raise DataError(f"{protocol} evaluation covered no users")

    return MetricReport(
        hr={k: hit_rate_at_k(rankings, targets, k) for k in ks},
        ndcg={k: ndcg_at_k(rankings, targets, k) for k in ks},
        n_users=len(targets),
        protocol=protocol,
        seed=seed,
        config_digest=config_digest,
        bleu4=float(np.mean(bleu_rows)) if bleu_rows else None,
        rouge1=float(np.mean(rouge1_rows)) if rouge1_rows else None,
        rougeL=float(np.mean(rougel_rows)) if rougel_rows else None,
        skipped=skipped,
    )


@dataclass
class CohortComparison:
    warm: MetricReport
    cold: MetricReport
    gap: dict[str, dict[int, float | None]]


def cold_warm_report(
    pipeline: RecommendationPipeline,
    split: SplitDataset,
    partition: ColdWarmPartition,
    ks: list[int],
    candidate_pool_size: int = 100,
    seed: int = 0,
    config_digest: str = "",
) -> CohortComparison:
    """Separate reports for test users with warm vs. cold targets, plus the
    signed relative gap (warm - cold) / warm per metric and cutoff."""
    cohorts = {"warm": [], "cold": []}
    for user in sorted(split.test):
        target = split.test[user]
        if target in partition.cold:
            cohorts["cold"].append(user)
        elif target in partition.warm:
            cohorts["warm"].append(user)
    reports = {}
    for name, cohort_users in cohorts.items():
        if not cohort_users:
            raise DataError(f"{name} cohort is empty")
        reports[name] = evaluate_split(
            pipeline,
            split,
            ks,
            candidate_pool_size,
            seed=seed,
            protocol=name,
            config_digest=config_digest,
            users=cohort_users,
        )

    def relative_gap(warm_value: float, cold_value: float) -> float | None:
        if warm_value == 0.0:
            return None
        return (warm_value - cold_value) / warm_value

    gap = {
        "hr": {k: relative_gap(reports["warm"].hr[k], reports["cold"].hr[k]) for k in ks},
        "ndcg": {
            k: relative_gap(reports["warm"].ndcg[k], reports["cold"].ndcg[k]) for k in ks
        },
    }
    return CohortComparison(warm=reports["warm"], cold=reports["cold"], gap=gap)


def zero_shot_eval(
    pipeline: RecommendationPipeline,
    target_split: SplitDataset,
    target_semantic_map: dict[str, np.ndarray],
    ks: list[int],
    candidate_pool_size: int = 100,
    seed: int = 0,
    config_digest: str = "",
) -> MetricReport:
    """Frozen source pipeline evaluated on a disjoint-vocabulary domain.

    Every target-domain item must be absent from the source collaborative
    vocabulary and present in the target semantic map, so each lookup takes
    the semantic path (asserted after the run).
    """
    if pipeline.alignment is None:
        raise ValueError("zero-shot transfer needs a trained alignment network")
    universe = sorted(target_split.item_universe())
    for item in universe:
        if item in pipeline.cf_model.item_index:
            raise DataError(
                f"target-domain item {item!r} is inside the source collaborative vocabulary"
            )
        if item not in target_semantic_map:
            raise DataError(f"target-domain item {item!r} lacks a semantic embedding")
    transfer = RecommendationPipeline(
        cf_model=pipeline.cf_model,
        alignment=pipeline.alignment,
        semantic_map=target_semantic_map,
    )
    report = evaluate_split(
        transfer,
        target_split,
        ks,
        candidate_pool_size,
        seed=seed,
        protocol="zero_shot",
        config_digest=config_digest,
    )
    if transfer.routing[COLLABORATIVE_PATH] != 0:
        raise DataError("zero-shot evaluation touched the collaborative path")
    return report


def render_metric_table(reports: list[MetricReport]) -> str:
    """Fixed-width summary, one row per report."""
    ks = sorted({k for report in reports for k in report.hr})
    header = ["protocol", "users"]
    header += [f"hr@{k}" for k in ks] + [f"ndcg@{k}" for k in ks]
    header += ["bleu4", "rouge1", "rougeL"]
    lines = ["  ".join(f"{h:>10}" for h in header)]
    for report in reports:
        cells = [f"{report.protocol:>10}", f"{report.n_users:>10d}"]
        for k in ks:
            cells.append(f"{report.hr.get(k, float('nan')):>10.4f}")
        for k in ks:
            cells.append(f"{report.ndcg.get(k, float('nan')):>10.4f}")
        for name in ("bleu4", "rouge1", "rougeL"):
            value = getattr(report, name)
            cells.append(f"{value:>10.4f}" if value is not None else f"{'-':>10}")
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
