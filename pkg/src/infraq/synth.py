"""Synthetic city tables for demos and planted-truth checks."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .ingest import TractRecord

PLANTED_ROAD = 30.0
PLANTED_RAIL = 10.0


def _hazard_columns(rng, label):
    """Heat and PM2.5 days drawn from well-separated class-conditional bands."""
    heat = np.where(label == 1, rng.normal(30, 3, len(label)), rng.normal(8, 3, len(label)))
    pm25 = np.where(label == 1, rng.normal(12, 1.5, len(label)), rng.normal(4, 1.5, len(label)))
    return np.clip(heat, 0, None).round(0), np.clip(pm25, 0, None).round(2)


def _records(city, cols, heat, pm25, income):
    out = []
    for i in range(len(heat)):
        out.append(
            TractRecord(
                geoid=f"{city[:3].upper()}{i:05d}",
                city=city,
                road_pct=float(cols["road_pct"][i]),
                rail_pct=float(cols["rail_pct"][i]),
                house_age_pct=float(cols["house_age_pct"][i]),
                park_pct=float(cols["park_pct"][i]),
                walkability=float(cols["walkability"][i]),
                poi_density=float(cols["poi_density"][i]),
                heat_days=float(heat[i]),
                pm25_days=float(pm25[i]),
                median_income=None if np.isnan(income[i]) else float(income[i]),
            )
        )
    return out


def _features(rng, n):
    return {
        "road_pct": rng.uniform(0, 60, n).round(3),
        "rail_pct": rng.uniform(0, 20, n).round(3),
        "house_age_pct": rng.uniform(0, 100, n).round(3),
        "park_pct": rng.uniform(0, 30, n).round(3),
        "walkability": rng.uniform(1, 20, n).round(3),
        "poi_density": rng.lognormal(3, 1, n).round(3),
    }


def _income(rng, n, score, missing=0.02):
    income = np.exp(rng.normal(11.0 + 0.4 * score, 0.3, n)).round(0)
    income[rng.random(n) < missing] = np.nan
    return income


def planted_city(
    n: int = 800,
    seed: int = 0,
    city: str = "planted",
    a: float = 0.25,
    b: float = 0.75,
    c: float = 0.05,
) -> list[TractRecord]:
    """Hazard class ~ Bernoulli(sigmoid(a(road - 30) + b(rail - 10) - c park)).

    Road and rail are uniform on ranges centred on their planted thresholds,
    so with near-balanced classes their attribution curves cross zero close
    to 30 and 10. Park only lowers hazard. Heat and PM2.5 are drawn from
    class-conditional bands so that two-cluster labeling recovers the class.
    """
    rng = np.random.default_rng(seed)
    cols = _features(rng, n)
    logit = (a * (cols["road_pct"] - PLANTED_ROAD) + b * (cols["rail_pct"] - PLANTED_RAIL)
             - c * cols["park_pct"])
    label = (rng.random(n) < expit(logit)).astype(np.int64)
    heat, pm25 = _hazard_columns(rng, label)
    income = _income(rng, n, -np.tanh(logit / 4))
    return _records(city, cols, heat, pm25, income)


def separable_city(
    n: int = 600, seed: int = 0, city: str = "separable", margin: float = 0.1
) -> list[TractRecord]:
    """Hazard class is a deterministic function of road and park.

    The class is ``road / 60 - park / 30 > 0``. Tracts closer than ``margin``
    to that boundary are redrawn, so the two classes are separated by a gap.
    """
    rng = np.random.default_rng(seed)
    cols = _features(rng, n)
    score = cols["road_pct"] / 60 - cols["park_pct"] / 30
    close = np.abs(score) < margin
    while close.any():
        k = int(close.sum())
        cols["road_pct"][close] = rng.uniform(0, 60, k).round(3)
        cols["park_pct"][close] = rng.uniform(0, 30, k).round(3)
        score = cols["road_pct"] / 60 - cols["park_pct"] / 30
        close = np.abs(score) < margin
    label = (score > 0).astype(np.int64)
    heat, pm25 = _hazard_columns(rng, label)
    income = _income(rng, n, 1 - 2 * label)
    return _records(city, cols, heat, pm25, income)


def overshoot_city(n: int = 600, seed: int = 0, city: str = "overshoot") -> list[TractRecord]:
    """Road and rail rise together with a latent intensity and overshoot their thresholds.

    The hazard rule is the planted one (thresholds 30 and 10), but road spans
    0-100 and rail 0-40, so the tracts with the most infrastructure sit far
    above the levels that minimise hazard.
    """
    rng = np.random.default_rng(seed)
    cols = _features(rng, n)
    u = rng.uniform(0, 1, n)
    cols["road_pct"] = np.clip(100 * u + rng.normal(0, 5, n), 0, 100).round(3)
    cols["rail_pct"] = np.clip(40 * u + rng.normal(0, 2, n), 0, 40).round(3)
    logit = 0.25 * (cols["road_pct"] - PLANTED_ROAD) + 0.75 * (cols["rail_pct"] - PLANTED_RAIL)
    label = (rng.random(n) < expit(logit)).astype(np.int64)
    heat, pm25 = _hazard_columns(rng, label)
    income = _income(rng, n, -u)
    return _records(city, cols, heat, pm25, income)
