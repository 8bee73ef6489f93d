"""Multi-column ensembles: output averaging, top-k error and latency reports."""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data_io import Dataset
from .imageprep import normalize_for_net
from .nn import forward_column


@dataclass(frozen=True)
class EnsembleSpec:
    member_ids: tuple

    def __post_init__(self):
        ids = tuple(self.member_ids)
        object.__setattr__(self, "member_ids", ids)
        if not ids:
            raise ValueError("an ensemble needs at least one member")
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate ensemble members in {ids}")

    @classmethod
    def all_of(cls, columns) -> "EnsembleSpec":
        keys = columns.keys() if isinstance(columns, Mapping) else range(len(columns))
        return cls(tuple(keys))


@dataclass
class EvalReport:
    n_samples: int
    topk_counts: dict  # k -> number of samples whose label is outside the top k
    mean_latency: float = 0.0  # ms per character, whole ensemble
    member_latencies: list = field(default_factory=list)  # ms per character
    members: list = field(default_factory=list)

    @property
    def topk_errors(self) -> dict:
        return {k: c / self.n_samples for k, c in self.topk_counts.items()}

    @property
    def top1_error(self) -> float:
        return self.topk_errors[1]

    def to_text(self, timing: bool = True) -> str:
        lines = [f"n_samples={self.n_samples}"]
        for k in sorted(self.topk_counts):
            c = self.topk_counts[k]
            lines.append(f"top{k}_errors={c}/{self.n_samples}")
            lines.append(f"top{k}_error_pct={100.0 * c / self.n_samples:.6g}")
        lines += [f"member[{i}]={name}" for i, name in enumerate(self.members)]
        if timing:
            lines.append(f"mean_latency_ms={self.mean_latency:.6g}")
            for name, ms in zip(self.members, self.member_latencies):
                lines.append(f"member_latency_ms[{name}]={ms:.6g}")
        return "\n".join(lines) + "\n"

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "n_samples": self.n_samples,
            "topk_counts": {str(k): v for k, v in sorted(self.topk_counts.items())},
            "topk_errors": {str(k): v for k, v in sorted(self.topk_errors.items())},
            "members": [str(m) for m in self.members],
        }
        if timing:
            out["mean_latency_ms"] = self.mean_latency
            out["member_latencies_ms"] = list(self.member_latencies)
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True) + "\n"


def average_scores(members) -> np.ndarray:
    members = [np.asarray(m, dtype=np.float64) for m in members]
    if not members:
        raise ValueError("cannot average an empty member list")
    n = members[0].shape
    if any(m.shape != n for m in members):
        raise ValueError("score vectors differ in length")
    total = np.zeros(n)
    for m in members:
        total += m
    return total / len(members)


def predict_topk(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores; ties go to the lower class index."""
    scores = np.asarray(scores)
    if not 1 <= k <= scores.shape[0]:
        raise ValueError(f"k={k} outside 1..{scores.shape[0]}")
    return np.argsort(-scores, kind="stable")[:k]


def _label_rank(scores, label: int) -> int:
    """Zero-based position of ``label`` under the ``predict_topk`` ordering."""
    s = scores[label]
    return int(np.count_nonzero(scores > s) + np.count_nonzero(scores[:label] == s))


def _resolve(columns, spec: EnsembleSpec):
    members = [columns[i] for i in spec.member_ids]
    counts = {c.class_count for c in members}
    if len(counts) != 1:
        raise ValueError(f"ensemble members disagree on class count: {sorted(counts)}")
    return members


def evaluate(columns, spec: EnsembleSpec, dataset: Dataset, ks=(1, 10),
             threads: int = 1) -> EvalReport:
    """Average member scores per sample and count top-k misses.

    ``columns`` is a sequence or mapping indexed by ``spec.member_ids``;
    ``dataset`` holds preprocessed canvas-sized images.
    """
    members = _resolve(columns, spec)
    n_classes = members[0].class_count
    if len(dataset) == 0:
        raise ValueError("empty evaluation set")
    if dataset.class_count != n_classes:
        raise ValueError(f"dataset has {dataset.class_count} classes, "
                         f"columns have {n_classes}")
    ks = sorted(set(int(k) for k in ks) | {1})
    if ks[-1] > n_classes:
        raise ValueError(f"k={ks[-1]} exceeds class count {n_classes}")
    dtype = members[0].dtype

    def run(chunk):
        ranks = []
        member_t = np.zeros(len(members))
        total_t = 0.0
        for s in chunk:
            t0 = time.perf_counter()
            x = normalize_for_net(s.image, dtype)
            outs = []
            for j, col in enumerate(members):
                t1 = time.perf_counter()
                outs.append(forward_column(col, x))
                member_t[j] += time.perf_counter() - t1
            avg = average_scores(outs)
            total_t += time.perf_counter() - t0
            ranks.append(_label_rank(avg, s.label))
        return ranks, member_t, total_t

    samples = dataset.samples
    if threads <= 1:
        parts = [run(samples)]
    else:
        bounds = np.linspace(0, len(samples), threads + 1).astype(int)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, [samples[a:b] for a, b in zip(bounds[:-1], bounds[1:])]))
    ranks = np.concatenate([np.asarray(p[0], dtype=np.int64) for p in parts])
    member_t = sum(p[1] for p in parts)
    total_t = sum(p[2] for p in parts)
    n = len(samples)
    counts = {k: int(np.count_nonzero(ranks >= k)) for k in ks}
    return EvalReport(n, counts, 1e3 * total_t / n, list(1e3 * member_t / n),
                      list(spec.member_ids))


@dataclass
class LatencyCheck:
    ensemble_ms: float
    member_ms: list

    @property
    def member_sum_ms(self) -> float:
        return float(sum(self.member_ms))

    @property
    def ratio(self) -> float:
        return self.ensemble_ms / self.member_sum_ms

    def ok(self, tolerance: float = 0.10) -> bool:
        return abs(self.ratio - 1.0) <= tolerance


def latency_breakdown(report: EvalReport) -> LatencyCheck:
    return LatencyCheck(report.mean_latency, list(report.member_latencies))


def benchmark(columns, spec: EnsembleSpec, dataset: Dataset, warmup: int = 5,
              repeats: int = 1) -> LatencyCheck:
    """Time each member alone, then the whole ensemble, over ``dataset``.

    Returns per-character milliseconds; members are timed in separate passes,
    so the additivity ratio is a measurement rather than a tautology.
    """
    members = _resolve(columns, spec)
    dtype = members[0].dtype
    xs = [normalize_for_net(s.image, dtype) for s in dataset.samples]
    if not xs:
        raise ValueError("empty benchmark set")
    for col in members:
        for x in xs[:warmup]:
            forward_column(col, x)

    fns = [lambda x, c=col: forward_column(c, x) for col in members]
    fns.append(lambda x: average_scores([forward_column(c, x) for c in members]))
    # per-sample minimum over repeats filters scheduler hiccups; members and
    # ensemble run back to back on each sample so drift in machine load hits
    # all of them alike
    best = np.full((len(fns), len(xs)), np.inf)
    for _ in range(max(1, repeats)):
        for j, x in enumerate(xs):
            for i, fn in enumerate(fns):
                t0 = time.perf_counter()
                fn(x)
                best[i, j] = min(best[i, j], time.perf_counter() - t0)
    ms = 1e3 * best.mean(axis=1)
    return LatencyCheck(float(ms[-1]), [float(v) for v in ms[:-1]])
