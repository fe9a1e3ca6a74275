"""Reasoning-trace construction, generation adapters, scoring, and filtering.

An instruction instance is structured text with four parts: a fixed task
instruction, the chronological interaction history (re-interactions
annotated), the target item text, and a verbalized prior. A pluggable
adapter turns instances into reasoning texts (CoTs): the fixture adapter is
fully deterministic (stored corpus, or a template expansion when no corpus
is configured), the remote adapter posts prompts to an endpoint.

Each CoT is scored on four dimensions in [0, 1] (coherence, completeness,
relevance, consistency), combined as a weighted sum, and filtered against a
threshold.
"""

from __future__ import annotations

import json
import re
import string
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DependencyError
from .lexicon import POLARITY
from .semantic import fallback_embed, similarity_mapped

__all__ = [
    "MAX_COT_TOKENS",
    "TASK_INSTRUCTION",
    "InstructionInstance",
    "CotRecord",
    "FixtureAdapter",
    "RemoteAdapter",
    "build_instruction_instance",
    "generate_cot",
    "truncate_tokens",
    "score_coherence",
    "score_semantic_dimension",
    "composite_score",
    "score_cot",
    "filter_cots",
    "threshold_sweep",
    "render_sweep_report",
    "load_cot_fixture",
    "dump_cot_fixture",
]

MAX_COT_TOKENS = 180

TASK_INSTRUCTION = (
    "Decide whether the user will interact with the target item next. "
    "Reason step by step: describe the user's preference profile from the "
    "history, assess the target item, and check consistency with the prior."
)

LABEL_SENTENCES = {
    1: "the user will interact with the target item",
    0: "the user will not interact with the target item",
}

# Cue words that mark the sentence in which a CoT commits to a candidate.
_NAMING_CUES = ("matches", "match", "most likely", "aligns", "fits", "best", "points to")

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


@dataclass
class InstructionInstance:
    user: str
    task: str
    history_lines: list[str]
    target_line: str
    prior_line: str
    label: int
    history_items: tuple[str, ...]
    target_item: str
    candidates: list[tuple[str, str, float]] | None = None  # (id, title, prior)

    def history_text(self) -> str:
        return "\n".join(self.history_lines)

    def text(self) -> str:
        return (
            f"{self.task}\n\nUser history:\n{self.history_text()}\n\n"
            f"Target item:\n{self.target_line}\n\nCF prior: {self.prior_line}"
        )


@dataclass
class CotRecord:
    instance: InstructionInstance
    cot: str
    dims: tuple[float, float, float, float]  # coherence, completeness, relevance, consistency
    score: float
    retained: bool = False


def build_instruction_instance(
    user: str,
    history: list[str],
    target: str,
    prior_text: str,
    catalog: dict[str, tuple[str, str]],
    k_prompt: int = 10,
    label: int = 1,
    candidates=None,
) -> InstructionInstance:
    """Assemble the four prompt parts; history oldest-first, re-watches marked."""
    if not history:
        raise ValueError("history must be non-empty")
    if target not in catalog:
        raise DataError(f"target item {target!r} has no catalog text")

    def item_line(item: str) -> str:
        if item not in catalog:
            raise DataError(f"history item {item!r} has no catalog text")
        title, description = catalog[item]
        return f"{title} - {description}" if description else title

    start = max(0, len(history) - k_prompt)
    lines = []
    for offset, item in enumerate(history[start:]):
        pos = start + offset
        rewatch = " (re-watch)" if item in history[:pos] else ""
        lines.append(f"{offset + 1}. {item_line(item)}{rewatch}")
    return InstructionInstance(
        user=user,
        task=TASK_INSTRUCTION,
        history_lines=lines,
        target_line=item_line(target),
        prior_line=prior_text,
        label=int(label),
        history_items=tuple(history),
        target_item=target,
        candidates=list(candidates) if candidates else None,
    )


def truncate_tokens(text: str, limit: int = MAX_COT_TOKENS) -> str:
    tokens = text.split()
    if len(tokens) <= limit:
        return text
    return " ".join(tokens[:limit])


def _template_expansion(instance: InstructionInstance) -> str:
    """Deterministic three-step reasoning text rendered from the instance."""
    titles = [line.split(". ", 1)[-1].split(" - ")[0] for line in instance.history_lines[-3:]]
    target_title = instance.target_line.split(" - ")[0]
    profile = (
        f"The recent history covers {', '.join(titles)}. "
        "These interactions point to a settled preference profile."
    )
    if instance.label == 1:
        assessment = (
            f"The target item {target_title} matches the preference profile; "
            f"the prior states {instance.prior_line}."
        )
        verdict = "Therefore the user will interact with the target item."
    else:
        assessment = (
            f"The target item {target_title} sits outside the preference profile; "
            f"the prior states {instance.prior_line}."
        )
        verdict = "Therefore the user will not interact with the target item."
    return f"{profile} {assessment} {verdict}"


class FixtureAdapter:
    """Deterministic generation: stored corpus keyed by (user, item), or a
    template expansion of the instance when no corpus is configured."""

    mode = "fixture"

    def __init__(self, corpus: dict[tuple[str, str], str] | None = None):
        self.corpus = corpus
        self.call_count = 0
        self.calls: list[tuple[str, str]] = []

    def generate(self, user: str, item: str, prompt: str, instance=None) -> str:
        self.call_count += 1
        self.calls.append((user, item))
        if self.corpus is not None:
            try:
                return self.corpus[(user, item)]
            except KeyError:
                raise DataError(f"no fixture entry for user {user!r}, item {item!r}") from None
        if instance is not None:
            return _template_expansion(instance)
        return f"The target item fits the user's recent history. likelihood unknown for {item}."


def _default_transport(endpoint: str, prompt: str) -> str:
    payload = json.dumps({"prompt": prompt}).encode("utf-8")
    req = urllib.request.Request(
        endpoint, data=payload, headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req, timeout=30) as resp:
        return json.loads(resp.read().decode("utf-8"))["text"]


class RemoteAdapter:
    """Sends the rendered prompt to an endpoint; bounded sequential retries."""

    mode = "remote"

    def __init__(self, endpoint: str, transport=None, max_retries: int = 3):
        self.endpoint = endpoint
        self.transport = transport or (lambda prompt: _default_transport(endpoint, prompt))
        self.max_retries = max_retries
        self.call_count = 0
        self.calls: list[tuple[str, str]] = []

    def generate(self, user: str, item: str, prompt: str, instance=None) -> str:
        self.call_count += 1
        self.calls.append((user, item))
        last_error = None
        for _ in range(self.max_retries):
            try:
                return self.transport(prompt)
            except Exception as exc:  # noqa: BLE001 - transport failures are opaque
                last_error = exc
        raise DependencyError(
            f"remote generation failed after {self.max_retries} attempts: {last_error}"
        )


def generate_cot(adapter, instance: InstructionInstance, prompt_template: str | None = None) -> str:
    """Obtain a reasoning text for the instance, capped at 180 whitespace tokens."""
    prompt = prompt_template.format(x=instance.text()) if prompt_template else instance.text()
    raw = adapter.generate(instance.user, instance.target_item, prompt, instance)
    return truncate_tokens(raw)


def _split_sentences(text: str) -> list[str]:
    parts = [s.strip() for s in _SENTENCE_RE.split(text.strip())]
    return [s for s in parts if s]


def _sentence_polarity(sentence: str) -> float:
    signs = []
    for token in sentence.lower().split():
        word = token.strip(string.punctuation)
        if word in POLARITY:
            signs.append(POLARITY[word])
    if not signs:
        return 0.0
    return float(np.mean(signs))


def score_coherence(cot: str) -> float:
    """1 - 0.5*V - 0.5*R clamped to [0, 1].

    V is the population variance of per-sentence lexicon polarity; R is the
    fraction of duplicate 3-grams among all (sliding-window) 3-grams of the
    token stream, 0 when there are fewer than three tokens. Empty text
    scores 0 by convention.
    """
    sentences = _split_sentences(cot)
    if not sentences:
        return 0.0
    polarities = [_sentence_polarity(s) for s in sentences]
    variance = float(np.var(polarities))
    tokens = cot.lower().split()
    grams = [tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)]
    repetition = (len(grams) - len(set(grams))) / len(grams) if grams else 0.0
    return min(1.0, max(0.0, 1.0 - 0.5 * variance - 0.5 * repetition))


def _named_candidate(cot: str, candidates) -> str | None:
    """Id of the candidate the CoT commits to, per cue-sentence scan."""
    if not candidates:
        return None
    for sentence in _split_sentences(cot):
        low = sentence.lower()
        if not any(cue in low for cue in _NAMING_CUES):
            continue
        best_pos, best_id = None, None
        for cand_id, title, _prior in candidates:
            for needle in (cand_id, title):
                if not needle:
                    continue
                m = re.search(rf"(?<!\w){re.escape(needle.lower())}(?!\w)", low)
                if m and (best_pos is None or m.start() < best_pos):
                    best_pos, best_id = m.start(), cand_id
        if best_id is not None:
            return best_id
    return None


def score_semantic_dimension(
    dim: str, cot: str, instance: InstructionInstance, embedder=fallback_embed
) -> float:
    """Completeness, relevance, or consistency of a CoT in [0, 1]."""
    if not cot.strip():
        return 0.0
    if dim == "completeness":
        reference = " ".join(
            [instance.history_text(), instance.target_line, instance.prior_line]
        )
        return similarity_mapped(embedder(cot), embedder(reference))
    if dim == "relevance":
        return similarity_mapped(embedder(cot), embedder(instance.text()))
    if dim == "consistency":
        last = _split_sentences(cot)[-1]
        canonical = LABEL_SENTENCES[instance.label]
        semantic_half = similarity_mapped(embedder(last), embedder(canonical))
        named = _named_candidate(cot, instance.candidates)
        if named is None:
            agreement = 0.5
        else:
            cf_top = max(instance.candidates, key=lambda c: c[2])[0]
            agreement = 1.0 if named == cf_top else 0.0
        return 0.5 * semantic_half + 0.5 * agreement
    raise ValueError(f"unknown dimension {dim!r}")


def composite_score(dims, weights=(0.25, 0.25, 0.25, 0.25)) -> float:
    """Weighted sum of the four dimension scores; weights must sum to 1."""
    dims = [float(d) for d in dims]
    weights = [float(w) for w in weights]
    if len(dims) != 4 or len(weights) != 4:
        raise ConfigError("expected exactly four dimensions and four weights")
    if any(not 0.0 <= v <= 1.0 for v in dims + weights):
        raise ConfigError("dimensions and weights must lie in [0, 1]")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigError(f"weights must sum to 1, got {sum(weights)!r}")
    return float(np.dot(dims, weights))


def score_cot(
    instance: InstructionInstance,
    cot: str,
    embedder=fallback_embed,
    weights=(0.25, 0.25, 0.25, 0.25),
) -> CotRecord:
    dims = (
        score_coherence(cot),
        score_semantic_dimension("completeness", cot, instance, embedder),
        score_semantic_dimension("relevance", cot, instance, embedder),
        score_semantic_dimension("consistency", cot, instance, embedder),
    )
    return CotRecord(instance=instance, cot=cot, dims=dims, score=composite_score(dims, weights))


def filter_cots(records: list[CotRecord], threshold: float = 0.6):
    """Retain records with score >= threshold; returns (retained, coverage)."""
    if not records:
        raise DataError("coverage is undefined for an empty record list")
    retained = []
    for record in records:
        record.retained = record.score >= threshold
        if record.retained:
            retained.append(record)
    return retained, len(retained) / len(records)


def threshold_sweep(records: list[CotRecord], thresholds, downstream_eval=None) -> list[dict]:
    """Coverage (and optional downstream metrics) at each ascending threshold."""
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    rows = []
    for threshold in thresholds:
        retained, coverage = filter_cots(records, threshold)
        row = {"threshold": threshold, "coverage": coverage}
        if downstream_eval is not None:
            row.update(downstream_eval(retained))
        rows.append(row)
    return rows


def render_sweep_report(rows: list[dict]) -> str:
    """Fixed-width text table: threshold, coverage, optional extra columns."""
    extras = sorted({k for row in rows for k in row} - {"threshold", "coverage"})
    header = ["threshold", "coverage"] + extras
    lines = ["  ".join(f"{h:>10}" for h in header)]
    for row in rows:
        cells = [f"{row['threshold']:>10.4f}", f"{row['coverage']:>10.4f}"]
        for key in extras:
            value = row.get(key)
            cells.append(f"{value:>10.4f}" if value is not None else f"{'-':>10}")
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n"}.get(nxt, "\\" + nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def load_cot_fixture(path) -> dict[tuple[str, str], str]:
    """Read `user_id<TAB>item_id<TAB>label<TAB>cot_text` records."""
    corpus: dict[tuple[str, str], str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 3)
            if len(parts) != 4:
                raise DataError(f"cot fixture line {lineno}: expected 4 tab-separated fields")
            user, item, label, text = parts
            if label not in ("0", "1"):
                raise DataError(f"cot fixture line {lineno}: label must be 0 or 1")
            corpus[(user, item)] = _unescape(text)
    return corpus


def dump_cot_fixture(path, entries) -> None:
    """Write (user, item, label, text) tuples in the fixture format."""
    with open(path, "w", encoding="utf-8") as fh:
        for user, item, label, text in entries:
            fh.write(f"{user}\t{item}\t{int(label)}\t{_escape(text)}\n")
