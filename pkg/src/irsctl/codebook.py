"""Capacitance codebooks and their update rules.

Codebooks are plain ``(M, N_G)`` float arrays in farads; direction codebooks
are ``(K, N_G)`` arrays of signed capacitance steps.  All indices are 0-based
and ties resolve to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

C_MIN = 0.4e-12
C_MAX = 2.7e-12


@dataclass(frozen=True)
class GroupMap:
    """Tiling of an ``N_IRS_w x N_IRS_h`` surface into ``n_groups`` width blocks.

    Elements are indexed column-major (height fastest), so group ``g`` owns
    the contiguous element range ``[g * size, (g + 1) * size)``.
    """

    n_groups: int
    n_w: int
    n_h: int

    def __post_init__(self):
        if self.n_groups < 1 or self.n_w % self.n_groups:
            raise ValueError(f"{self.n_groups} groups do not tile a width of {self.n_w}")

    @property
    def width_per_group(self) -> int:
        return self.n_w // self.n_groups

    @property
    def tile(self) -> tuple[int, int]:
        return self.width_per_group, self.n_h

    @property
    def size(self) -> int:
        return self.width_per_group * self.n_h

    @property
    def n_elements(self) -> int:
        return self.n_w * self.n_h


def expand_group(q, gmap: GroupMap) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != gmap.n_groups:
        raise ValueError(f"expected {gmap.n_groups} group values, got {q.shape[-1]}")
    return np.repeat(q, gmap.size, axis=-1)


def clip(x, lo: float = C_MIN, hi: float = C_MAX) -> np.ndarray:
    return np.clip(x, lo, hi)


def rvq_generate(M: int, n_dims: int, lo: float, hi: float, rng) -> np.ndarray:
    """M codewords with i.i.d. uniform entries in [lo, hi]."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    return rng.uniform(lo, hi, size=(M, n_dims))


def ra_update(q_star, M: int, delta: float, rng, lo: float = C_MIN, hi: float = C_MAX) -> np.ndarray:
    """M fresh uniform perturbations of the selected codeword, clipped to bounds."""
    q_star = np.asarray(q_star, dtype=float)
    z = rng.uniform(-delta, delta, size=(M, q_star.shape[-1]))
    return clip(q_star + z, lo, hi)


def dpic_update(q_m, d_k, lo: float = C_MIN, hi: float = C_MAX) -> tuple[np.ndarray, int]:
    """Step a codeword along a direction; returns the clipped result and the clip count."""
    raw = np.asarray(q_m, dtype=float) + np.asarray(d_k, dtype=float)
    n_clip = int(np.count_nonzero((raw < lo) | (raw > hi)))
    return clip(raw, lo, hi), n_clip


def direction_codebook(K: int, n_dims: int, delta: float, rng) -> np.ndarray:
    """K random step vectors, uniform in [-delta, delta]^n_dims."""
    return rng.uniform(-delta, delta, size=(K, n_dims))


def quantize_direction(u, D) -> int:
    """Index of the direction codeword nearest to ``u`` in Euclidean distance."""
    d2 = np.sum((np.asarray(D) - np.asarray(u)) ** 2, axis=-1)
    return int(np.argmin(d2))


def select_codeword(rates) -> int:
    rates = np.asarray(rates, dtype=float)
    if rates.size == 0:
        raise ValueError("cannot select from an empty codebook")
    return int(np.argmax(rates))


def dump_codebook(Q, path) -> None:
    """One codeword per line, picofarads, 12 significant digits."""
    lines = [" ".join(f"{v * 1e12:.12g}" for v in row) for row in np.atleast_2d(Q)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_codebook(path) -> np.ndarray:
    rows = [
        [float(x) * 1e-12 for x in line.split()]
        for line in Path(path).read_text().splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    return np.array(rows, dtype=float)
