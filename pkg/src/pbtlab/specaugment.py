"""Time/frequency masking over 2-D time x frequency arrays.

Arrays are (T, F): T time frames, F frequency bands. Mask counts may be
fractional and are realized per call through :func:`pbtlab.hparam.sample_count`.
Widths include 0, masks are sampled independently and may overlap.

Draw order is part of the contract (tests replay it): per mask, width first,
then start; frequency masks before time masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hparam import HyperparamVector, sample_count


@dataclass(frozen=True)
class MaskPolicy:
    """Masking parameters: widths are caps, counts may be fractional."""

    fmask_f: float  # max frequency-mask width, bands
    fmask_n: float  # fractional number of frequency masks
    tmask_t: float  # max time-mask width, frames
    tmask_p: float  # max time-mask width as a fraction of utterance length
    tmask_n: float  # fractional number of time masks
    fill: float = 0.0

    def __post_init__(self):
        for name in ("fmask_f", "fmask_n", "tmask_t", "tmask_p", "tmask_n"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.tmask_p <= 1.0:
            raise ValueError("tmask_p must be in [0, 1]")


# The standard strong policy: 2 masks of up to 27 of 80 bands, 2 masks of up
# to 100 frames (1 second at 10 ms frames).
LD_POLICY = MaskPolicy(fmask_f=27, fmask_n=2, tmask_t=100, tmask_p=1.0, tmask_n=2)


def policy_from_vector(h: HyperparamVector, fill: float = 0.0) -> MaskPolicy:
    """Build a policy from the five mask entries of a hyperparameter vector."""
    return MaskPolicy(
        fmask_f=h["fmask_f"],
        fmask_n=h["fmask_n"],
        tmask_t=h["tmask_t"],
        tmask_p=h["tmask_p"],
        tmask_n=h["tmask_n"],
        fill=fill,
    )


def _as_target(s: np.ndarray, out: np.ndarray | None) -> np.ndarray:
    if out is None:
        return np.array(s, dtype=np.float64, copy=True)
    if out is not s:
        np.copyto(out, s)
    return out


def apply_freq_masks(
    s: np.ndarray,
    max_width: float,
    count: int,
    fill: float,
    rng: np.random.Generator,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Mask ``count`` uniformly sampled band ranges across all frames.

    ``out`` (optionally ``s`` itself) skips the defensive copy on hot paths.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    out = _as_target(s, out)
    n_bands = out.shape[1]
    cap = max(0, min(math.floor(max_width), n_bands))
    for _ in range(count):
        w = int(rng.integers(0, cap + 1))
        f0 = int(rng.integers(0, n_bands - w + 1))
        out[:, f0 : f0 + w] = fill
    return out


def apply_time_masks(
    s: np.ndarray,
    max_width: float,
    p: float,
    count: int,
    fill: float,
    rng: np.random.Generator,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Mask ``count`` frame ranges; width capped by both max_width and p*T."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    out = _as_target(s, out)
    n_frames = out.shape[0]
    cap = max(0, min(math.floor(max_width), math.floor(p * n_frames)))
    for _ in range(count):
        w = int(rng.integers(0, cap + 1))
        t0 = int(rng.integers(0, n_frames - w + 1))
        out[t0 : t0 + w, :] = fill
    return out


def specaugment(
    s: np.ndarray,
    policy: MaskPolicy,
    rng: np.random.Generator,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Apply a full masking pass with stochastically realized mask counts."""
    nf = sample_count(policy.fmask_n, rng)
    nt = sample_count(policy.tmask_n, rng)
    masked = apply_freq_masks(s, policy.fmask_f, nf, policy.fill, rng, out=out)
    return apply_time_masks(
        masked, policy.tmask_t, policy.tmask_p, nt, policy.fill, rng, out=masked
    )
