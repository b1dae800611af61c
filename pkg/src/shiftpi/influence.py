"""Influence functions for the supported estimands.

Every site-level estimate here is the sample mean of a per-row influence value:
the inverse-probability-weighted contrast for an average treatment effect, or
the outcome itself for a mean (paired designs pass a difference outcome).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data_model import SiteDataset
from .errors import ConfigError, DataError, MissingTreatment

logger = logging.getLogger(__name__)

ATE = "ATE"
MEAN = "Mean"


@dataclass(frozen=True)
class InfluenceSpec:
    kind: str = MEAN
    pi: Optional[float] = None

    def __post_init__(self):
        kind = {"ate": ATE, "mean": MEAN}.get(str(self.kind).lower())
        if kind is None:
            raise ConfigError(f"unknown estimand {self.kind!r}; expected ATE or Mean")
        object.__setattr__(self, "kind", kind)
        if kind == ATE and self.pi is not None and not 0.0 < float(self.pi) < 1.0:
            raise ConfigError(f"ATE needs 0 < pi < 1, got {self.pi}")


def influence_value(spec: InfluenceSpec, t, y) -> float:
    if spec.kind == MEAN:
        return float(y)
    if t is None:
        raise MissingTreatment("ATE influence value needs a treatment indicator")
    if spec.pi is None:
        raise ConfigError("ATE influence value needs pi")
    pi = float(spec.pi)
    return (t / pi) * y - ((1 - t) / (1 - pi)) * y


def resolve_spec(spec: InfluenceSpec, data: SiteDataset) -> InfluenceSpec:
    """Fill a missing pi from the dataset, or from the observed treated fraction."""
    if spec.kind != ATE or spec.pi is not None:
        return spec
    if data.pi is not None:
        return InfluenceSpec(ATE, data.pi)
    if data.T is None:
        raise MissingTreatment(f"site {data.site_id!r}: ATE requested but no treatment column")
    frac = float(np.mean(data.T))
    logger.warning("hypothesis %s: pi not configured, using observed treated fraction %.4f",
                   data.hypothesis_id, frac)
    return InfluenceSpec(ATE, frac)


def influence_vector(spec: InfluenceSpec, data: SiteDataset) -> np.ndarray:
    Y = data.Y
    if spec.kind == MEAN:
        return np.array(Y, dtype=float)
    spec = resolve_spec(spec, data)
    if data.T is None:
        raise MissingTreatment(f"site {data.site_id!r}: ATE requested but no treatment column")
    T = data.T.astype(float)
    if T.min() == T.max():
        raise DataError(f"site {data.site_id!r}: one treatment arm is empty")
    pi = float(spec.pi)
    return (T / pi) * Y - ((1.0 - T) / (1.0 - pi)) * Y


def site_estimate(spec: InfluenceSpec, data: SiteDataset):
    """Return (theta_hat, phi) with theta_hat the mean of the influence values."""
    phi = influence_vector(spec, data)
    return float(np.mean(phi)), phi
