"""False-negative estimation over excluded sets: seeded sampling, manual-label
capture, rate extrapolation, and Wilson confidence intervals."""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

from .records import Label, parse_label

MIN_SAMPLE = 30

# two-sided 95%: Phi^-1(0.975)
Z95 = 1.959963984540054


class SamplingError(ValueError):
    pass


class MinimumSampleError(SamplingError):
    def __init__(self, n):
        super().__init__(f"sample size {n} is below the minimum of {MIN_SAMPLE}")


class InsufficientPopulationError(SamplingError):
    def __init__(self, n, population):
        super().__init__(f"cannot draw {n} from an excluded set of {population}")


class IncompleteLabelsError(ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"unlabeled sampled ids: {', '.join(self.missing)}")


def round_half_up(value: float) -> int:
    # banker's rounding would turn 6.5 into 6; reviewers expect 7
    return int(Decimal(repr(value)).quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple:
    """Wilson score interval for a binomial proportion.

    Stays inside [0, 1] by construction and does not collapse to a point at
    p-hat = 0, which is exactly the regime FN audits live in.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must be within [0, trials]")
    phat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (phat + z2 / (2.0 * trials)) / denom
    margin = z * math.sqrt(phat * (1.0 - phat) / trials + z2 / (4.0 * trials * trials)) / denom
    low = (center - margin)
    high = (center + margin)
    if successes == 0:
        low = 0.0
    if successes == trials:
        high = 1.0
    return max(0.0, low), min(1.0, high)


@dataclass
class FnSample:
    """One seeded draw from a stage's excluded set, awaiting manual labels."""

    stage: str  # "screening" | "relevance"
    record_ids: tuple
    seed: int
    drawn_at: str = ""
    labels: dict = field(default_factory=dict)  # record id -> Label

    def __post_init__(self):
        if len(set(self.record_ids)) != len(self.record_ids):
            raise ValueError("sampled ids must be distinct")
        if len(self.record_ids) < MIN_SAMPLE:
            raise MinimumSampleError(len(self.record_ids))

    def unlabeled(self) -> list:
        return [rid for rid in self.record_ids if rid not in self.labels]

    def fn_count(self) -> int:
        # a manual Include on an excluded record is a confirmed false negative
        return sum(1 for rid in self.record_ids if self.labels.get(rid) == Label.INCLUDE)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "record_ids": list(self.record_ids),
            "seed": self.seed,
            "drawn_at": self.drawn_at,
            "labels": {rid: label.value for rid, label in sorted(self.labels.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FnSample":
        return cls(
            stage=data["stage"],
            record_ids=tuple(data["record_ids"]),
            seed=data["seed"],
            drawn_at=data.get("drawn_at", ""),
            labels={rid: parse_label(v) for rid, v in data.get("labels", {}).items()},
        )


@dataclass(frozen=True)
class FnEstimate:
    per_stage: tuple  # ((stage, sampled n, fn count), ...)
    pooled_rate: float
    population: int
    extrapolated: int
    interval: tuple  # Wilson 95% on the pooled rate
    count_interval: tuple  # the same interval scaled to the population

    def to_dict(self) -> dict:
        return {
            "per_stage": [
                {"stage": s, "sampled": n, "fn": k} for s, n, k in self.per_stage
            ],
            "pooled_rate": self.pooled_rate,
            "population": self.population,
            "extrapolated": self.extrapolated,
            "interval": list(self.interval),
            "count_interval": list(self.count_interval),
        }


def sample_excluded(stage: str, n: int, seed: int, excluded_ids) -> FnSample:
    """Uniform draw without replacement, reproducible from the seed alone."""
    if n < MIN_SAMPLE:
        raise MinimumSampleError(n)
    population = sorted(set(excluded_ids))
    if n > len(population):
        raise InsufficientPopulationError(n, len(population))
    ids = random.Random(seed).sample(population, n)
    return FnSample(stage=stage, record_ids=tuple(ids), seed=seed)


def extrapolate(samples: list, population: int) -> FnEstimate:
    if not samples:
        raise ValueError("at least one sample required")
    missing = [rid for sample in samples for rid in sample.unlabeled()]
    if missing:
        raise IncompleteLabelsError(missing)
    total_n = sum(len(s.record_ids) for s in samples)
    if population < total_n:
        raise ValueError("population smaller than the total sampled count")
    total_fn = sum(s.fn_count() for s in samples)
    rate = total_fn / total_n
    low, high = wilson_interval(total_fn, total_n)
    return FnEstimate(
        per_stage=tuple((s.stage, len(s.record_ids), s.fn_count()) for s in samples),
        pooled_rate=rate,
        population=population,
        extrapolated=round_half_up(rate * population),
        interval=(low, high),
        count_interval=(low * population, high * population),
    )


SHEET_COLUMNS = ["id", "title", "abstract", "label"]


def export_sample_sheet(sample: FnSample, records_by_id: dict) -> str:
    """CSV the reviewer fills offline: one row per sampled record, blank label
    column."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SHEET_COLUMNS)
    for rid in sample.record_ids:
        record = records_by_id.get(rid)
        if record is None:
            raise KeyError(f"sampled id not in record store: {rid}")
        writer.writerow([rid, record.title, record.abstract, ""])
    return buf.getvalue()


def import_sample_labels(text: str) -> dict:
    """Read back a filled sheet; blank labels are simply not yet decided."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != SHEET_COLUMNS:
        raise ValueError(f"expected sheet header {SHEET_COLUMNS}, got {header}")
    labels = {}
    for row in reader:
        if not row:
            continue
        rid, label_text = row[0], row[3].strip()
        if label_text:
            labels[rid] = parse_label(label_text)
    return labels
