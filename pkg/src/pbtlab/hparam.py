"""Bounded continuous hyperparameters, mutation moves, and fractional counts.

A search space is a tuple of :class:`HyperparamSpec`. Hyperparameter vectors
are plain ``{name: value}`` dicts keyed exactly by the space's spec names.
All randomness is drawn from an injected ``numpy.random.Generator``, so the
functions here are safe to call from any number of workers as long as each
worker owns its own generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HyperparamVector = dict[str, float]


@dataclass(frozen=True)
class HyperparamSpec:
    """One bounded hyperparameter with its allowed mutation magnitudes.

    ``fractional_count`` marks parameters that are real-valued counts,
    realized at use time through :func:`sample_count`.
    """

    name: str
    init: float
    min: float
    max: float
    deltas: tuple[float, ...]
    fractional_count: bool = False

    def __post_init__(self):
        if not self.name:
            raise ValueError("hyperparameter name must be non-empty")
        if not self.min < self.max:
            raise ValueError(f"{self.name}: min must be < max")
        if not self.min <= self.init <= self.max:
            raise ValueError(f"{self.name}: init {self.init} outside [{self.min}, {self.max}]")
        if len(self.deltas) == 0:
            raise ValueError(f"{self.name}: needs at least one mutation delta")
        span = self.max - self.min
        for d in self.deltas:
            if not 0.0 < d < span:
                raise ValueError(f"{self.name}: delta {d} outside (0, {span})")


SearchSpace = tuple[HyperparamSpec, ...]


def clamp(spec: HyperparamSpec, v: float) -> float:
    """Clip ``v`` into the spec's closed range."""
    return min(max(v, spec.min), spec.max)


def mutate_param(spec: HyperparamSpec, v: float, rng: np.random.Generator) -> float:
    """One mutation move: add or subtract a uniformly chosen delta, then clamp.

    Sign and magnitude are drawn independently and uniformly.
    """
    d = spec.deltas[int(rng.integers(len(spec.deltas)))]
    s = 1.0 if rng.random() < 0.5 else -1.0
    return clamp(spec, v + s * d)


def mutate(
    space: SearchSpace,
    h: HyperparamVector,
    rng: np.random.Generator,
    probability: float = 1.0,
) -> HyperparamVector:
    """Return a new vector with every parameter independently mutated.

    ``probability`` < 1 leaves each parameter untouched with the complementary
    probability. The input vector is never modified.
    """
    out: HyperparamVector = {}
    for spec in space:
        v = h[spec.name]
        if probability < 1.0 and rng.random() >= probability:
            out[spec.name] = v
        else:
            out[spec.name] = mutate_param(spec, v, rng)
    return out


def sample_count(x: float, rng: np.random.Generator) -> int:
    """Realize a fractional count: floor(x) or floor(x)+1.

    With x = N + p, returns N with probability 1-p and N+1 with probability p,
    so the expectation is exactly x.
    """
    if x < 0:
        raise ValueError(f"fractional count must be >= 0, got {x}")
    n = math.floor(x)
    p = x - n
    if p > 0.0 and rng.random() < p:
        return n + 1
    return n


def init_vector(space: SearchSpace) -> HyperparamVector:
    """Vector holding every spec's initial value."""
    return {spec.name: float(spec.init) for spec in space}


def validate_vector(space: SearchSpace, h: HyperparamVector) -> None:
    """Raise ValueError unless ``h`` has exactly the space's keys, all in range."""
    names = {spec.name for spec in space}
    if set(h) != names:
        raise ValueError(f"vector keys {sorted(h)} do not match search space {sorted(names)}")
    for spec in space:
        v = h[spec.name]
        if not spec.min <= v <= spec.max:
            raise ValueError(f"{spec.name}={v} outside [{spec.min}, {spec.max}]")


# Production search space: SpecAugment block first, then encoder and decoder
# regularization. Decoder rows get a dec_ prefix to keep names unique.
TABLE2: SearchSpace = (
    HyperparamSpec("fmask_f", 7.0, 7.0, 120.0, (2.5, 5.0)),
    HyperparamSpec("fmask_n", 1.0, 1.0, 8.0, (0.5,), fractional_count=True),
    HyperparamSpec("tmask_t", 20.0, 20.0, 150.0, (2.0, 5.0)),
    HyperparamSpec("tmask_p", 0.2, 0.2, 1.0, (0.05, 0.1)),
    HyperparamSpec("tmask_n", 1.0, 1.0, 8.0, (0.5, 1.0), fractional_count=True),
    HyperparamSpec("dropout", 0.2, 0.01, 0.8, (0.01,)),
    HyperparamSpec("tr_dropout", 0.2, 0.01, 0.8, (0.01,)),
    HyperparamSpec("tr_layerdrop", 0.2, 0.01, 0.8, (0.01,)),
    HyperparamSpec("dec_tr_dropout", 0.3, 0.01, 0.8, (0.01,)),
    HyperparamSpec("dec_tr_layerdrop", 0.2, 0.01, 0.8, (0.01,)),
)

SPACE_PROFILES: dict[str, SearchSpace] = {"table2": TABLE2}


def spec_to_dict(spec: HyperparamSpec) -> dict:
    d = {
        "name": spec.name,
        "init": spec.init,
        "min": spec.min,
        "max": spec.max,
        "deltas": list(spec.deltas),
    }
    if spec.fractional_count:
        d["fractional_count"] = True
    return d


def spec_from_dict(d: dict) -> HyperparamSpec:
    allowed = {"name", "init", "min", "max", "deltas", "fractional_count"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown hyperparameter spec keys: {sorted(unknown)}")
    return HyperparamSpec(
        name=str(d["name"]),
        init=float(d["init"]),
        min=float(d["min"]),
        max=float(d["max"]),
        deltas=tuple(float(x) for x in d["deltas"]),
        fractional_count=bool(d.get("fractional_count", False)),
    )
