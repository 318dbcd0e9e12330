"""Fusion of N member models' probability outputs.

Two rules: summation (mean of member probabilities) and concatenation
(a learned linear map from the stacked 4N vector back to 4 classes).
Member outputs fused here are post-softmax probabilities, which keeps
summation scale-free across members.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import STANCES, Stance
from .errors import ConfigError, DataFormatError
from .mlp import softmax

SUMMATION = "summation"
CONCATENATION = "concatenation"
RULES = (SUMMATION, CONCATENATION)

#: Canonical member roles of the best-performing three-model ensemble,
#: in fixed order: plain bag-of-words model, manual refutation keywords,
#: customized-class MI keywords.
HEADLINE_MEMBERS = ("baseline", "manual_keywords", "micc_keywords")


@dataclass(frozen=True)
class EnsembleMember:
    """Reference to one trained model and the feature pipeline it expects."""

    model: str
    pipeline: str


@dataclass(frozen=True)
class LinearCombiner:
    """Linear map 4N -> 4 applied to concatenated member probabilities."""

    weights: np.ndarray  # (4, 4N)
    bias: np.ndarray  # (4,)
    fit_warnings: tuple[str, ...] = ()

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[1]

    def logits(self, concatenated: np.ndarray) -> np.ndarray:
        return concatenated @ self.weights.T + self.bias


@dataclass(frozen=True)
class EnsembleSpec:
    """Ordered members plus the fusion rule (and combiner when learned)."""

    name: str
    members: tuple[EnsembleMember, ...]
    rule: str = SUMMATION
    combiner: LinearCombiner | None = None

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        if self.rule not in RULES:
            raise ValueError(f"unknown fusion rule {self.rule!r}")
        if self.rule == CONCATENATION:
            if self.combiner is None:
                raise ValueError("concatenation rule requires a fitted combiner")
            if self.combiner.n_inputs != 4 * len(self.members):
                raise ValueError(
                    f"combiner expects {self.combiner.n_inputs} inputs, "
                    f"{len(self.members)} members produce {4 * len(self.members)}"
                )


@dataclass(frozen=True)
class FusedOutput:
    member_probs: tuple[np.ndarray, ...]
    fused: np.ndarray
    decided: Stance


def _decide(prob: np.ndarray) -> Stance:
    # np.argmax returns the first maximum: lowest canonical index on ties.
    return STANCES[int(np.argmax(prob))]


def fuse_summation(member_probs: Sequence[np.ndarray]) -> FusedOutput:
    """Mean of member probability vectors; argmax with canonical tie-break."""
    if not len(member_probs):
        raise ValueError("no member probabilities to fuse")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in member_probs])
    if stacked.shape[1:] != (4,):
        raise ValueError("each member probability vector must have 4 entries")
    fused = stacked.mean(axis=0)
    return FusedOutput(tuple(stacked), fused, _decide(fused))


def fuse_concatenation(
    member_probs: Sequence[np.ndarray], combiner: LinearCombiner
) -> FusedOutput:
    """Softmax of the combiner applied to the stacked member vector."""
    if not len(member_probs):
        raise ValueError("no member probabilities to fuse")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in member_probs])
    flat = stacked.reshape(-1)
    if len(flat) != combiner.n_inputs:
        raise ValueError(
            f"combiner expects {combiner.n_inputs} inputs, got {len(flat)}"
        )
    fused = softmax(combiner.logits(flat))
    return FusedOutput(tuple(stacked), fused, _decide(fused))


def fit_concat_combiner(
    member_probs: np.ndarray,
    labels: Sequence[Stance | int],
    seed: int,
    learning_rate: float = 0.5,
    epochs: int = 500,
) -> LinearCombiner:
    """Multinomial-logistic map fitted by seeded full-batch gradient descent.

    member_probs has shape (n_examples, n_members, 4) or (n_examples, 4N).
    A class absent from the fit data yields a degenerate-fit warning on the
    returned combiner; the fit itself proceeds.
    """
    x = np.asarray(member_probs, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] % 4 != 0:
        raise ValueError("member probabilities must stack to an (n, 4N) matrix")
    y = np.array([lbl.index if isinstance(lbl, Stance) else int(lbl) for lbl in labels])
    if len(y) != x.shape[0]:
        raise ValueError(f"{x.shape[0]} examples but {len(y)} labels")

    warnings = tuple(
        f"class {s.value!r} absent from combiner fit data"
        for s in STANCES
        if s.index not in set(y.tolist())
    )

    n, dim = x.shape
    onehot = np.zeros((n, 4))
    onehot[np.arange(n), y] = 1.0
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-0.01, 0.01, size=(4, dim))
    bias = np.zeros(4)
    for _ in range(epochs):
        probs = softmax(x @ weights.T + bias)
        g = (probs - onehot) / n
        weights -= learning_rate * (g.T @ x)
        bias -= learning_rate * g.sum(axis=0)
    return LinearCombiner(weights=weights, bias=bias, fit_warnings=warnings)


def headline_ensemble(
    model_pipelines: Mapping[str, str],
    rule: str = SUMMATION,
    combiner: LinearCombiner | None = None,
    name: str = "headline",
) -> EnsembleSpec:
    """The three-model configuration that produced the best test score.

    model_pipelines maps each required role in HEADLINE_MEMBERS to the id of
    the feature pipeline its model was trained on.
    """
    missing = [role for role in HEADLINE_MEMBERS if role not in model_pipelines]
    if missing:
        raise ConfigError(f"headline ensemble missing member model(s): {missing}")
    if rule == CONCATENATION and combiner is None:
        raise ConfigError("concatenation rule requires a fitted combiner")
    members = tuple(EnsembleMember(role, model_pipelines[role]) for role in HEADLINE_MEMBERS)
    return EnsembleSpec(name=name, members=members, rule=rule, combiner=combiner)


def save_combiner(combiner: LinearCombiner, path: str | Path) -> None:
    payload = {
        "format": "stancekit-combiner",
        "version": 1,
        "weights": combiner.weights.tolist(),
        "bias": combiner.bias.tolist(),
        "warnings": list(combiner.fit_warnings),
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def load_combiner(path: str | Path) -> LinearCombiner:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not a combiner file ({exc})") from None
    if payload.get("format") != "stancekit-combiner" or payload.get("version") != 1:
        raise DataFormatError(f"{path}: unsupported combiner file")
    return LinearCombiner(
        weights=np.array(payload["weights"], dtype=np.float64),
        bias=np.array(payload["bias"], dtype=np.float64),
        fit_warnings=tuple(payload.get("warnings", ())),
    )
