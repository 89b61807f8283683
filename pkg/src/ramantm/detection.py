"""Count-based efficiency estimators and synthetic detection noise.

Efficiencies come from integrated counts of three measurements: the input
with the memory off (reference), the transmitted leakage with the write
control on, and the retrieved signal. Background counts are subtracted
first; negative results are clamped to zero and flagged, and the raw values
are kept alongside the clamped ones.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class DetectionError(ValueError):
    pass


@dataclass
class CountRecord:
    """Integrated counts (or rates) for one efficiency measurement."""

    n_ref: float
    n_leak: float
    n_ret: float
    n_background: float = 0.0
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("n_ref", "n_leak", "n_ret", "n_background"):
            if getattr(self, name) < 0:
                raise DetectionError(f"{name} must be non-negative")

    def subtracted(self) -> dict:
        """Background-subtracted counts, raw and clamped at zero."""
        out = {}
        for name in ("n_ref", "n_leak", "n_ret"):
            raw = getattr(self, name) - self.n_background
            out[name] = {"raw": raw, "value": max(raw, 0.0), "clamped": raw < 0}
        return out


@dataclass
class Efficiencies:
    eta_stor: float
    eta_tot: float
    raw_eta_stor: float
    raw_eta_tot: float
    flags: dict

    def __iter__(self):
        # allows ``eta_stor, eta_tot = efficiencies_from_counts(rec)``
        return iter((self.eta_stor, self.eta_tot))

    def to_dict(self) -> dict:
        return asdict(self)


def efficiencies_from_counts(rec: CountRecord) -> Efficiencies:
    """eta_stor = (N_ref - N_leak) / N_ref and eta_tot = N_ret / N_ref.

    Both are clamped to [0, 1]; ``flags`` records every clamp.
    """
    sub = rec.subtracted()
    n_ref = sub["n_ref"]["value"]
    if n_ref <= 0:
        raise DetectionError("zero reference counts after background subtraction")
    flags = {f"{k}_clamped": v["clamped"] for k, v in sub.items()}
    raw_stor = (n_ref - sub["n_leak"]["value"]) / n_ref
    raw_tot = sub["n_ret"]["value"] / n_ref
    stor = min(max(raw_stor, 0.0), 1.0)
    tot = min(max(raw_tot, 0.0), 1.0)
    flags["eta_stor_clamped"] = stor != raw_stor
    flags["eta_tot_clamped"] = tot != raw_tot
    return Efficiencies(stor, tot, raw_stor, raw_tot, flags)


def poissonize(
    true_eta: float,
    n_photons: float,
    seed: int | np.random.Generator | None = 0,
    eta_tot: float = 0.0,
    background: float = 0.0,
) -> CountRecord:
    """Poisson counts with means (n, n(1 - eta), n eta_tot, background).

    The background mean is added to each channel before drawing, so that
    ``efficiencies_from_counts`` with the same ``n_background`` is unbiased.
    """
    if not n_photons > 0:
        raise DetectionError("n_photons must be positive")
    if not 0 <= true_eta <= 1 or not 0 <= eta_tot <= 1:
        raise DetectionError("efficiencies must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    means = np.array([n_photons, n_photons * (1.0 - true_eta), n_photons * eta_tot]) + background
    ref, leak, ret = rng.poisson(means)
    return CountRecord(float(ref), float(leak), float(ret), float(background))


def count_noise(eta: np.ndarray, counts: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized storage-efficiency estimates from Poisson reference/leak counts.

    Returns the noisy efficiencies and their propagated one-sigma errors.
    """
    if not counts > 0:
        raise DetectionError("counts must be positive")
    eta = np.clip(np.asarray(eta, dtype=float), 0.0, 1.0)
    ref = np.maximum(rng.poisson(counts, eta.shape), 1)
    leak = rng.poisson(counts * (1.0 - eta))
    est = (ref - leak) / ref
    # var[(R - L)/R] ~ (var L + (1-eta)^2 var R) / n^2 with Poisson variances
    sigma = np.sqrt(counts * (1.0 - eta) + (1.0 - eta) ** 2 * counts) / counts
    return est, np.maximum(sigma, 1.0 / counts)


@dataclass
class SubsetStatistics:
    eta_stor_mean: float
    eta_stor_std: float
    eta_tot_mean: float
    eta_tot_std: float
    n_subsets: int
    subset_size: int
    per_subset: np.ndarray

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "per_subset"}
        d["per_subset"] = self.per_subset.tolist()
        return json.dumps(d, indent=2)


@dataclass
class CountStream:
    """Per-input-photon detection events.

    ``stored`` and ``retrieved`` are boolean arrays, one entry per detected
    reference photon: whether it was absorbed by the memory and whether it
    was later detected in the retrieval window.
    """

    stored: np.ndarray
    retrieved: np.ndarray

    def __len__(self) -> int:
        return len(self.stored)

    @classmethod
    def simulate(cls, eta_stor: float, eta_tot: float, n: int, seed=0) -> "CountStream":
        if not 0 <= eta_tot <= eta_stor <= 1:
            raise DetectionError("need 0 <= eta_tot <= eta_stor <= 1")
        rng = np.random.default_rng(seed)
        u = rng.random(n)
        return cls(u < eta_stor, u < eta_tot)

    @classmethod
    def deterministic(cls, eta_stor: float, eta_tot: float, n: int) -> "CountStream":
        """Evenly interleaved events with exact rates in every block."""
        k = np.arange(n)
        stored = np.floor((k + 1) * eta_stor) > np.floor(k * eta_stor)
        retrieved = np.floor((k + 1) * eta_tot) > np.floor(k * eta_tot)
        return cls(stored, retrieved)


def subset_statistics(
    stream: CountStream,
    n_subsets: int = 50,
    subset_size: int = 100_000,
    seed: int | None = 0,
) -> SubsetStatistics:
    """Mean and sample std of per-subset efficiencies.

    The stream is split into ``n_subsets`` disjoint blocks of ``subset_size``
    reference photons. With a seed the events are shuffled first, so the
    result does not depend on the ordering of the stream.
    """
    need = n_subsets * subset_size
    if n_subsets < 2 or subset_size < 1:
        raise DetectionError("need at least two non-empty subsets")
    if len(stream) < need:
        raise DetectionError(f"stream has {len(stream)} counts, {need} required")
    idx = np.arange(need)
    if seed is not None:
        idx = np.random.default_rng(seed).permutation(len(stream))[:need]
    st = stream.stored[idx].reshape(n_subsets, subset_size)
    rt = stream.retrieved[idx].reshape(n_subsets, subset_size)
    per = np.column_stack([st.mean(axis=1), rt.mean(axis=1)])
    mean = per.mean(axis=0)
    std = per.std(axis=0, ddof=1)
    return SubsetStatistics(
        float(mean[0]), float(std[0]), float(mean[1]), float(std[1]), n_subsets, subset_size, per
    )


def binomial_std(eta: float, n: int) -> float:
    return math.sqrt(eta * (1.0 - eta) / n)


def read_count_table(path: str | Path) -> list[CountRecord]:
    """CSV with columns n_ref, n_leak, n_ret and optionally n_background."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        CountRecord(
            float(r["n_ref"]),
            float(r["n_leak"]),
            float(r["n_ret"]),
            float(r.get("n_background") or 0.0),
        )
        for r in rows
    ]
