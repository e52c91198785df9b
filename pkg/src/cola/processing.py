"""Compositional shaping of calibration datasets.

Covers the second curation stage: chunking token streams to a fixed target
length, dropping short samples, wrapping text into a question/reasoning/
answer template, and difficulty-stratified subsampling. Every transform is
pure and deterministic under a fixed seed.
"""

from __future__ import annotations

import re
from bisect import bisect_right
from dataclasses import dataclass

from .data_model import Dataset, Sample
from .errors import InsufficientDataError, ValidationError
from .seeding import make_rng
from .tokenizer import DEFAULT_VOCAB_SIZE, encode

DELIMITER_TOKEN = 0

# Tier boundaries are half-open with 1.0 folded into the hard tier.
TIER_NAMES = ("easy", "medium", "hard")

_CHUNK_BRANCH = 1
_MIX_BRANCH = 2

_SENTENCE_SPLIT = re.compile(r"(?<=[.?!]) ")


@dataclass(frozen=True)
class ProcessingConfig:
    target_length: int = 2048
    min_length: int = 256
    format_policy: str = "passthrough"
    difficulty_mix: tuple[float, float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.target_length < 1:
            raise ValidationError(f"target_length must be positive, got {self.target_length}")
        if self.min_length < 0:
            raise ValidationError(f"min_length must be non-negative, got {self.min_length}")
        if self.min_length > self.target_length:
            raise ValidationError(
                f"min_length {self.min_length} exceeds target_length {self.target_length}"
            )
        if self.format_policy not in ("passthrough", "wrap_qa"):
            raise ValidationError(f"unknown format_policy {self.format_policy!r}")
        if self.difficulty_mix is not None:
            mix = tuple(float(x) for x in self.difficulty_mix)
            object.__setattr__(self, "difficulty_mix", mix)
            if len(mix) != 3 or any(x < 0 for x in mix):
                raise ValidationError(f"difficulty_mix must be 3 non-negative reals, got {mix}")
            if abs(sum(mix) - 1.0) > 1e-9:
                raise ValidationError(f"difficulty_mix sums to {sum(mix)}, expected 1")


def difficulty_tier(difficulty: float) -> int:
    """0 = easy [0, 1/3), 1 = medium [1/3, 2/3), 2 = hard [2/3, 1]."""
    if difficulty < 1.0 / 3.0:
        return 0
    if difficulty < 2.0 / 3.0:
        return 1
    return 2


def chunk_to_length(d: Dataset, cfg: ProcessingConfig) -> Dataset:
    """Cut the concatenated token stream into fixed-length windows.

    All sample token streams are joined with a delimiter token, then
    floor(total / target_length) non-overlapping windows of exactly
    target_length tokens are placed at seeded-random offsets (the leftover
    slack is distributed randomly between windows). Each chunk keeps the
    metadata of the sample covering its start position and is named
    "<src_id>#<k>" by window index.
    """
    if len(d) == 0:
        raise ValueError(f"dataset {d.name!r} is empty")
    missing = [s.id for s in d.samples if s.tokens is None]
    if missing:
        raise ValidationError(f"samples without tokens cannot be chunked: {missing[:5]}")

    stream: list[int] = []
    span_starts: list[int] = []
    for i, s in enumerate(d.samples):
        span_starts.append(len(stream))
        stream.extend(s.tokens)
        if i != len(d.samples) - 1:
            stream.append(DELIMITER_TOKEN)

    total = len(stream)
    length = cfg.target_length
    if total < length:
        raise InsufficientDataError(
            f"dataset {d.name!r}: {total} tokens < target_length {length}"
        )
    n_chunks = total // length
    slack = total - n_chunks * length

    rng = make_rng(cfg.seed, _CHUNK_BRANCH)
    gaps = rng.multinomial(slack, [1.0 / (n_chunks + 1)] * (n_chunks + 1))

    chunks: list[Sample] = []
    offset = 0
    for k in range(n_chunks):
        offset += int(gaps[k])
        src = d.samples[bisect_right(span_starts, offset) - 1]
        chunks.append(
            Sample(
                id=f"{src.id}#{k}",
                text="",
                tokens=tuple(stream[offset : offset + length]),
                domain=src.domain,
                language=src.language,
                difficulty=src.difficulty,
                format=src.format,
            )
        )
        offset += length
    return Dataset(name=f"{d.name}-chunks", samples=tuple(chunks))


def filter_min_length(d: Dataset, cfg: ProcessingConfig) -> Dataset:
    """Keep samples with at least min_length tokens, order preserved."""
    kept = tuple(s for s in d.samples if s.token_count >= cfg.min_length)
    return Dataset(name=d.name, samples=kept)


def split_sentences(text: str) -> list[str]:
    """Split on '. ', '? ', '! ' boundaries, keeping the terminators."""
    stripped = text.strip()
    if not stripped:
        return []
    return _SENTENCE_SPLIT.split(stripped)


def wrap_format(s: Sample, policy: str, vocab_size: int = DEFAULT_VOCAB_SIZE) -> Sample:
    """Apply the format policy to one sample.

    ``passthrough`` returns the sample unchanged. ``wrap_qa`` rewrites the
    text into a question / reasoning / answer template (first sentence,
    middle text, last sentence), marks the sample ``qa_erc`` and re-derives
    tokens with the fallback tokenizer. Samples already in ``qa_erc`` format
    pass through untouched, so wrapping is idempotent.
    """
    if policy == "passthrough":
        return s
    if policy != "wrap_qa":
        raise ValidationError(f"unknown format policy {policy!r}")
    if s.format == "qa_erc":
        return s
    if not s.text:
        raise ValidationError(f"sample {s.id!r}: cannot wrap empty text")
    sentences = split_sentences(s.text)
    question = sentences[0]
    answer = sentences[-1]
    reasoning = " ".join(sentences[1:-1])
    text = f"Question: {question}\nReasoning: {reasoning}\nAnswer: {answer}"
    tokens = tuple(encode(text, vocab_size))
    return Sample(
        id=s.id,
        text=text,
        tokens=tokens if tokens else None,
        domain=s.domain,
        language=s.language,
        difficulty=s.difficulty,
        format="qa_erc",
    )


def _largest_remainder(quotas: list[float], total: int) -> list[int]:
    base = [int(q) for q in quotas]
    remainders = [q - b for q, b in zip(quotas, base)]
    shortfall = total - sum(base)
    # Distribute leftover units to the largest remainders, ties by position.
    order = sorted(range(len(quotas)), key=lambda i: (-remainders[i], i))
    for i in order[:shortfall]:
        base[i] += 1
    return base


def stratified_mix(d: Dataset, cfg: ProcessingConfig, count: int) -> Dataset:
    """Draw `count` samples matching the configured difficulty mix.

    Tier targets use largest-remainder rounding of count * mix. A tier with
    too few samples contributes everything it has and the deficit is
    backfilled from tiers with spare capacity, proportionally to their mix
    weights (by capacity when those weights are all zero). Sampling within
    a tier is seeded and without replacement; output preserves dataset
    order.
    """
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    if cfg.difficulty_mix is None:
        raise ValidationError("stratified_mix requires difficulty_mix in the config")
    missing = [s.id for s in d.samples if s.difficulty is None]
    if missing:
        raise ValidationError(f"samples without difficulty cannot be stratified: {missing[:5]}")
    if count > len(d):
        raise InsufficientDataError(f"requested {count} samples but dataset has {len(d)}")

    tiers: list[list[int]] = [[], [], []]
    for i, s in enumerate(d.samples):
        tiers[difficulty_tier(s.difficulty)].append(i)

    take = _largest_remainder([count * m for m in cfg.difficulty_mix], count)
    take = [min(t, len(tier)) for t, tier in zip(take, tiers)]
    deficit = count - sum(take)
    while deficit > 0:
        spare = [i for i in range(3) if len(tiers[i]) > take[i]]
        weights = [cfg.difficulty_mix[i] for i in spare]
        if sum(weights) <= 0:
            weights = [float(len(tiers[i]) - take[i]) for i in spare]
        scale = deficit / sum(weights)
        extra = _largest_remainder([w * scale for w in weights], deficit)
        for i, e in zip(spare, extra):
            grant = min(e, len(tiers[i]) - take[i])
            take[i] += grant
            deficit -= grant

    rng = make_rng(cfg.seed, _MIX_BRANCH)
    chosen: list[int] = []
    for tier, t in zip(tiers, take):
        if t > 0:
            picks = rng.choice(len(tier), size=t, replace=False)
            chosen.extend(tier[int(i)] for i in picks)
    chosen.sort()
    return Dataset(name=d.name, samples=tuple(d.samples[i] for i in chosen))
