"""Saliency-style comparison metrics (MIT saliency benchmark conventions)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KLD_EPS = 1e-12


def _distribution(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError(f"{name} has negative values")
    total = x.sum()
    if total <= 0:
        raise ValueError(f"{name} is all zero")
    return x / total


def kld(pred, gt) -> float:
    """KL(G || P) with both maps normalized to unit mass; zero-G cells contribute 0."""
    P = _distribution(pred, "pred")
    G = _distribution(gt, "gt")
    if P.shape != G.shape:
        raise ValueError(f"shape mismatch {P.shape} vs {G.shape}")
    m = G > 0
    return float(np.sum(G[m] * np.log(G[m] / (P[m] + KLD_EPS) + KLD_EPS)))


def sim(pred, gt) -> float:
    """Histogram intersection of the two unit-mass maps."""
    P = _distribution(pred, "pred")
    G = _distribution(gt, "gt")
    if P.shape != G.shape:
        raise ValueError(f"shape mismatch {P.shape} vs {G.shape}")
    return float(np.minimum(P, G).sum())


def nss(pred, fixations) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    fix = np.asarray(fixations).astype(bool)
    if pred.shape != fix.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {fix.shape}")
    if not fix.any():
        raise ValueError("no fixation cells")
    std = pred.std()
    if std == 0:
        return 0.0
    return float(((pred - pred.mean()) / std)[fix].mean())


def fixations_from_dense(gt, threshold: float = 0.5) -> np.ndarray:
    """Mark cells with ``gt >= threshold * max(gt)``; the argmax is always marked."""
    gt = np.asarray(gt, dtype=np.float64)
    peak = gt.max()
    if peak <= 0:
        raise ValueError("gt is all zero")
    fix = (gt >= threshold * peak).astype(np.float64)
    fix[np.unravel_index(np.argmax(gt), gt.shape)] = 1.0
    return fix


def score(pred, gt, threshold: float = 0.5) -> dict[str, float]:
    return {"kld": kld(pred, gt), "sim": sim(pred, gt),
            "nss": nss(pred, fixations_from_dense(gt, threshold))}


def uniform_baseline(gt, threshold: float = 0.5) -> dict[str, float]:
    return score(np.ones_like(np.asarray(gt, dtype=np.float64)), gt, threshold)


@dataclass
class MetricReport:
    """Per-(record, affordance) rows plus unweighted macro averages."""

    rows: list[dict] = field(default_factory=list)
    skipped: int = 0

    def add(self, record: str, affordance: str, values: dict[str, float]) -> None:
        self.rows.append({"record": record, "affordance": affordance, **values})

    def _mean(self, key: str) -> float:
        if not self.rows:
            return float("nan")
        return float(np.mean([r[key] for r in self.rows]))

    @property
    def kld(self) -> float:
        return self._mean("kld")

    @property
    def sim(self) -> float:
        return self._mean("sim")

    @property
    def nss(self) -> float:
        return self._mean("nss")

    def per_record(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for rid in dict.fromkeys(r["record"] for r in self.rows):
            rs = [r for r in self.rows if r["record"] == rid]
            out[rid] = {k: float(np.mean([r[k] for r in rs])) for k in ("kld", "sim", "nss")}
        return out

    def to_dict(self) -> dict:
        return {"macro": {"kld": self.kld, "sim": self.sim, "nss": self.nss},
                "n_rows": len(self.rows), "skipped": self.skipped, "rows": self.rows}

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def to_tsv(self, path) -> None:
        lines = ["record\taffordance\tkld\tsim\tnss"]
        lines += [f"{r['record']}\t{r['affordance']}\t{r['kld']:.6f}\t{r['sim']:.6f}\t{r['nss']:.6f}"
                  for r in self.rows]
        lines.append(f"MACRO\t-\t{self.kld:.6f}\t{self.sim:.6f}\t{self.nss:.6f}")
        Path(path).write_text("\n".join(lines) + "\n")
