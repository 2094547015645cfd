"""Aggregation-weight adjustment from gradient-tracking consistency.

Each benign client keeps a row of weights over its neighbourhood (itself
included). A detector rescores every active neighbour from the gap between
tracking variables, and a latch permanently drops neighbours whose weight
falls to ``threshold_factor / degree``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, ProtocolError

DETECTORS = ("consistency", "similarity", "none")


@dataclass(frozen=True)
class DetectionConfig:
    kind: str = "consistency"
    threshold_factor: float = 0.1
    latch: bool = True

    def __post_init__(self):
        if self.kind not in DETECTORS:
            raise ConfigurationError(
                f"unknown detector {self.kind!r}; expected one of {DETECTORS}", "detection.kind"
            )
        if not 0.0 < self.threshold_factor < 1.0:
            raise ConfigurationError("threshold_factor must lie in (0, 1)", "detection.threshold_factor")


@dataclass(frozen=True)
class WeightRow:
    owner: int
    ids: tuple[int, ...]
    weights: np.ndarray
    excluded: frozenset = frozenset()

    @classmethod
    def uniform(cls, owner: int, ids) -> "WeightRow":
        ids = tuple(sorted(ids))
        if owner not in ids:
            raise ConfigurationError("a neighbourhood must contain its owner", "topology")
        return cls(owner, ids, np.full(len(ids), 1.0 / len(ids)))

    @cached_property
    def active_mask(self) -> np.ndarray:
        mask = np.array([j not in self.excluded for j in self.ids])
        mask.setflags(write=False)
        return mask

    @cached_property
    def active_ids(self) -> tuple[int, ...]:
        return tuple(j for j in self.ids if j not in self.excluded)

    @cached_property
    def active_index(self) -> np.ndarray:
        idx = np.array(self.active_ids, dtype=np.intp)
        idx.setflags(write=False)
        return idx

    @cached_property
    def others_mask(self) -> np.ndarray:
        """Active entries other than the owner: the ones a latch may drop."""
        mask = self.active_mask & (np.asarray(self.ids) != self.owner)
        mask.setflags(write=False)
        return mask

    def reweighted(self, weights: np.ndarray) -> "WeightRow":
        """Same neighbourhood and exclusions, new weights; reuses the cached masks."""
        row = WeightRow(self.owner, self.ids, weights, self.excluded)
        for name in ("active_mask", "active_ids", "active_index", "others_mask"):
            if name in self.__dict__:
                row.__dict__[name] = self.__dict__[name]
        return row

    def as_dict(self) -> dict[int, float]:
        return {j: float(w) for j, w in zip(self.ids, self.weights)}

    def weight(self, j: int) -> float:
        return float(self.weights[self.ids.index(j)])


def cut(degree: int, threshold_factor: float = 0.1) -> float:
    return threshold_factor / degree


def _stack_active(own_gamma, neighbor_gammas: Mapping[int, np.ndarray], row: WeightRow):
    mask = row.active_mask
    active = row.active_ids
    if not active:
        raise ProtocolError(f"client {row.owner} has no active neighbours")
    missing = [j for j in active if j not in neighbor_gammas]
    if missing:
        raise ProtocolError(f"client {row.owner} is missing tracking variables from {missing}")
    return mask, np.stack([neighbor_gammas[j] for j in active]), np.asarray(own_gamma)


def _reweight(row: WeightRow, mask: np.ndarray, s: np.ndarray) -> WeightRow:
    s_norm = s / s.sum()
    if mask.all():
        raw = row.weights + s_norm
        raw /= raw.sum()
        return row.reweighted(raw)
    raw = row.weights[mask] + s_norm
    weights = np.zeros_like(row.weights)
    weights[mask] = raw / raw.sum()
    return row.reweighted(weights)


def _row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def consistency_scores(own_gamma, gammas: np.ndarray) -> np.ndarray:
    dist = _row_norms(gammas - own_gamma)
    return np.exp(np.negative(dist, out=dist), out=dist)


def similarity_scores(own_gamma, gammas: np.ndarray) -> np.ndarray:
    own_norm = np.linalg.norm(own_gamma)
    norms = _row_norms(gammas)
    cos = np.zeros(len(gammas))
    both = (norms > 0) & (own_norm > 0)
    cos[both] = (gammas[both] @ own_gamma) / (norms[both] * own_norm)
    cos[(norms == 0) & (own_norm == 0)] = 1.0
    return (1.0 + np.clip(cos, -1.0, 1.0)) / 2.0


def consistency_adjust(own_gamma, neighbor_gammas: Mapping[int, np.ndarray], row: WeightRow) -> WeightRow:
    """One pass of exponential-distance rescoring followed by two normalisations."""
    mask, gammas, own = _stack_active(own_gamma, neighbor_gammas, row)
    return _reweight(row, mask, consistency_scores(own, gammas))


def similarity_adjust(own_gamma, neighbor_gammas: Mapping[int, np.ndarray], row: WeightRow) -> WeightRow:
    """Same update, scored by (1 + cosine) / 2 instead of exp(-distance)."""
    mask, gammas, own = _stack_active(own_gamma, neighbor_gammas, row)
    return _reweight(row, mask, similarity_scores(own, gammas))


_SCORERS = {"consistency": consistency_scores, "similarity": similarity_scores}


def adjust(config: DetectionConfig, own_gamma, neighbor_gammas, row: WeightRow) -> WeightRow:
    if config.kind == "none":
        return row
    mask, gammas, own = _stack_active(own_gamma, neighbor_gammas, row)
    return _reweight(row, mask, _SCORERS[config.kind](own, gammas))


def adjust_stacked(config: DetectionConfig, own_gamma: np.ndarray, active_gammas: np.ndarray,
                   row: WeightRow) -> WeightRow:
    """``adjust`` for callers that already hold the active gammas in row order."""
    if config.kind == "none":
        return row
    return _reweight(row, row.active_mask, _SCORERS[config.kind](own_gamma, active_gammas))


def apply_latch(row: WeightRow, degree: int, threshold_factor: float = 0.1, latch: bool = True,
                renormalize: bool = True) -> tuple[WeightRow, frozenset]:
    """Zero every active non-self neighbour at or below the cut and renormalise.

    With ``latch`` the zeroed neighbours join the permanent exclusion set;
    otherwise they are zeroed for this round only. ``renormalize=False``
    exists solely as a fault-injection hook for the self-check.
    """
    c = cut(degree, threshold_factor)
    mask = row.active_mask
    low = row.others_mask & (row.weights <= c)
    if not low.any():
        return row, frozenset()
    dropped = frozenset(j for j, hit in zip(row.ids, low) if hit)
    weights = row.weights.copy()
    weights[low] = 0.0
    survivors = mask & ~low
    if not survivors.any():
        raise ProtocolError(f"client {row.owner} would exclude its whole neighbourhood")
    if renormalize:
        weights[survivors] /= weights[survivors].sum()
    excluded = row.excluded | dropped if latch else row.excluded
    return WeightRow(row.owner, row.ids, weights, excluded), dropped
