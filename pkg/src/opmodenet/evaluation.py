"""Metrics and three-way comparison reports (model vs baseline vs truth)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .opmode import CANONICAL_BINS, N_BINS

MAPE_EPSILON = 1e-9


@dataclass(frozen=True)
class Metrics:
    rmse: float
    r2: float | None  # None when truth has zero variance
    mape_pct: float | None  # None when every truth value is ~0
    n: int
    mape_excluded: int


def metrics(pred, truth) -> Metrics:
    """RMSE, R-squared, and MAPE over paired samples.

    MAPE is computed only where |truth| exceeds a small epsilon; the excluded
    count is reported. Zero-variance truth makes R-squared undefined and it
    is reported as None rather than NaN.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValidationError(f"metrics need equal-length 1-D inputs, got {pred.shape} vs {truth.shape}")
    if len(pred) < 2:
        raise ValidationError("metrics need at least 2 samples")
    resid = pred - truth
    rmse = float(np.sqrt(np.mean(resid**2)))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    usable = np.abs(truth) > MAPE_EPSILON
    mape = (
        float(np.mean(np.abs(resid[usable]) / np.abs(truth[usable])) * 100.0)
        if usable.any()
        else None
    )
    return Metrics(rmse=rmse, r2=r2, mape_pct=mape, n=len(pred), mape_excluded=int((~usable).sum()))


def _check_alignment(keys_a, keys_b, what: str) -> None:
    a, b = set(keys_a), set(keys_b)
    if a != b:
        diff = sorted(a.symmetric_difference(b))
        raise ValidationError(f"misaligned link sets for {what}: {diff}")


def per_bin_report(
    model: dict[str, np.ndarray],
    baseline: dict[str, np.ndarray],
    truth: dict[str, np.ndarray],
) -> dict:
    """Per-bin RMSE/R-squared for model-vs-truth and baseline-vs-truth, plus
    scatter-ready rows, over an aligned link set."""
    _check_alignment(model, truth, "model vs truth")
    _check_alignment(baseline, truth, "baseline vs truth")
    links = sorted(truth)
    t = np.array([truth[l] for l in links])
    m = np.array([model[l] for l in links])
    b = np.array([baseline[l] for l in links])
    if t.shape[1] != N_BINS:
        raise ValidationError(f"distributions must have {N_BINS} components")

    bins = []
    for j, bin_id in enumerate(CANONICAL_BINS):
        mm = metrics(m[:, j], t[:, j])
        bm = metrics(b[:, j], t[:, j])
        improvement = None
        if bm.rmse > 0:
            improvement = (bm.rmse - mm.rmse) / bm.rmse
        bins.append(
            {
                "bin_id": bin_id,
                "model_rmse": mm.rmse,
                "model_r2": mm.r2,
                "baseline_rmse": bm.rmse,
                "baseline_r2": bm.r2,
                "rmse_improvement": improvement,
                "n": mm.n,
            }
        )
    scatter = [
        {
            "link_id": link,
            "bin_id": bin_id,
            "truth": float(t[i, j]),
            "model": float(m[i, j]),
            "baseline": float(b[i, j]),
        }
        for i, link in enumerate(links)
        for j, bin_id in enumerate(CANONICAL_BINS)
    ]
    return {"bins": bins, "scatter": scatter, "n_links": len(links)}


def per_pollutant_report(
    model: dict[str, dict[str, float]],
    baseline: dict[str, dict[str, float]],
    truth: dict[str, dict[str, float]],
) -> dict:
    """Per-pollutant RMSE/R-squared/MAPE for both arms over aligned links.

    Inputs map link id to {pollutant: grams/hr}.
    """
    _check_alignment(model, truth, "model vs truth")
    _check_alignment(baseline, truth, "baseline vs truth")
    links = sorted(truth)
    pollutants = sorted(truth[links[0]])
    out = []
    for p in pollutants:
        t = np.array([truth[l][p] for l in links])
        mm = metrics(np.array([model[l][p] for l in links]), t)
        bm = metrics(np.array([baseline[l][p] for l in links]), t)
        rmse_improvement = (bm.rmse - mm.rmse) / bm.rmse if bm.rmse > 0 else None
        mape_improvement = None
        if mm.mape_pct is not None and bm.mape_pct and bm.mape_pct > 0:
            mape_improvement = (bm.mape_pct - mm.mape_pct) / bm.mape_pct
        out.append(
            {
                "pollutant": p,
                "model_rmse": mm.rmse,
                "model_r2": mm.r2,
                "model_mape_pct": mm.mape_pct,
                "baseline_rmse": bm.rmse,
                "baseline_r2": bm.r2,
                "baseline_mape_pct": bm.mape_pct,
                "rmse_improvement": rmse_improvement,
                "mape_improvement": mape_improvement,
                "n": mm.n,
                "mape_excluded": mm.mape_excluded,
            }
        )
    return {"pollutants": out, "n_links": len(links)}
