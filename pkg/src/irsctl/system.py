"""Effective channels, noisy measurement, and rate / overhead accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .reflection import CircuitParamTable, reflection_grid


class ProtocolInfeasible(ValueError):
    """Feedback or overhead budget does not fit in one coherence block."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class LinkBudget:
    P: float = dbm_to_watt(20.0)
    sigma2: float = dbm_to_watt(-80.0)
    T_c: float = 5e-3
    T_reconf: float = 100e-6
    R_feedback: float = 1e6

    def __post_init__(self):
        for name in ("P", "sigma2", "T_c", "T_reconf", "R_feedback"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class BlockReport:
    t: int
    m_star: int
    rate_true: float
    rate_measured: float
    T_p: float
    rate_effective: float
    feedback_bits: int

    FIELDS: ClassVar[tuple[str, ...]] = ("t", "m_star", "rate_true", "rate_measured", "T_p", "rate_effective", "feedback_bits")

    def as_row(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


def effective_channel(h_ub, H_ib, ue_irs_paths, c, table: CircuitParamTable) -> np.ndarray:
    """End-to-end UE-BS channel for a full-length capacitance vector ``c``.

    ``ue_irs_paths`` is a sequence of (theta, h) pairs or the (thetas, vectors)
    array pair returned by the channel module.
    """
    h_ub = np.asarray(h_ub, dtype=complex)
    H_ib = np.asarray(H_ib, dtype=complex)
    c = np.asarray(c, dtype=float)
    thetas, vecs = _split_paths(ue_irs_paths, H_ib.shape[1])
    if H_ib.shape[0] != h_ub.shape[0] or c.shape != (H_ib.shape[1],) or vecs.shape[1:] != c.shape:
        raise ValueError(
            f"dimension mismatch: h_ub {h_ub.shape}, H_ib {H_ib.shape}, c {c.shape}, paths {vecs.shape}"
        )
    if len(thetas) == 0:
        return h_ub.copy()
    gammas = reflection_grid(table, c, table.clamp(thetas))  # (L, N_IRS)
    return h_ub + H_ib @ np.sum(gammas * vecs, axis=0)


def _split_paths(paths, n_irs):
    if isinstance(paths, tuple) and len(paths) == 2 and np.ndim(paths[0]) == 1 and np.ndim(paths[1]) == 2:
        return np.asarray(paths[0], dtype=float), np.asarray(paths[1], dtype=complex)
    paths = list(paths)
    if not paths:
        return np.zeros(0), np.zeros((0, n_irs), dtype=complex)
    thetas = np.array([p[0] for p in paths], dtype=float)
    vecs = np.array([np.asarray(p[1], dtype=complex) for p in paths])
    return thetas, vecs


def effective_channels_grouped(channels, Q, group_size: int, table: CircuitParamTable) -> np.ndarray:
    """Effective channels for M group-level codewords at once.

    ``Q`` has shape (M, N_G); group g drives the contiguous block of
    ``group_size`` IRS elements starting at g * group_size.  Reflection is
    evaluated once per group rather than per element.  Returns (M, N_BS).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    thetas = table.clamp(channels.ui_thetas)
    if len(thetas) == 0:
        return np.repeat(channels.h_ub[None, :], Q.shape[0], axis=0)
    gammas = reflection_grid(table, Q, thetas)  # (M, L, N_G)
    n_g = Q.shape[1]
    vecs = channels.ui_vectors.reshape(len(thetas), n_g, group_size)
    # sum over paths and elements inside each group: (M, N_G, group_size)
    v = np.einsum("mlg,lgk->mgk", gammas, vecs).reshape(Q.shape[0], n_g * group_size)
    return channels.h_ub[None, :] + v @ channels.H_ib.T


def measure_effective_channel(h_eff, P: float, sigma2: float, rng) -> np.ndarray:
    """Single-pilot least-squares estimate: h_eff plus CN(0, sigma2/P) per entry."""
    if not P > 0:
        raise ValueError("transmit power must be positive")
    h_eff = np.asarray(h_eff, dtype=complex)
    if sigma2 == 0:
        return h_eff.copy()
    std = np.sqrt(sigma2 / P / 2.0)
    noise = std * (rng.standard_normal(h_eff.shape) + 1j * rng.standard_normal(h_eff.shape))
    return h_eff + noise


def data_rate(h, P: float, sigma2: float):
    """log2(1 + P ||h||^2 / sigma2) along the last axis."""
    h = np.asarray(h)
    gain = np.sum(np.abs(h) ** 2, axis=-1)
    out = np.log2(1.0 + P * gain / sigma2)
    return float(out) if np.ndim(out) == 0 else out


def ceil_log2(n: int) -> int:
    if n < 1:
        raise ValueError(f"need a positive count, got {n}")
    return (int(n) - 1).bit_length()


DPIC_KINDS = ("SDPIC", "MDPIC", "RA_SDPIC", "RA_MDPIC")


def feedback_bits(kind: str, M: int, K: int = 2048, n_directions: int = 0, budget: LinkBudget | None = None) -> int:
    """Feedback bits sent in one block.

    RVQ and RA send only the selected index.  DPIC strategies also send one
    direction index per DPIC-updated codeword: ``n_directions`` is M_A during
    training and M_DPIC during utilization.
    """
    if kind in ("RVQ", "RA"):
        bits = ceil_log2(M)
    elif kind in DPIC_KINDS:
        if K < 1:
            raise ValueError("direction codebook size must be positive")
        bits = ceil_log2(M) + n_directions * ceil_log2(K)
    else:
        raise ValueError(f"unknown strategy {kind!r}")
    if budget is not None and bits >= budget.R_feedback * budget.T_c:
        raise ProtocolInfeasible(f"{bits} feedback bits do not fit in one block at {budget.R_feedback} bit/s")
    return bits


def time_overhead(M: int, T_reconf: float, B: int, R_feedback: float, final_is_last: bool, T_c: float | None = None) -> float:
    """Sounding + feedback + final reconfiguration time.

    The final reconfiguration is skipped when the selected codeword is the
    last one swept.
    """
    if M < 1:
        raise ValueError(f"codebook size must be at least 1, got {M}")
    if not (T_reconf > 0 and R_feedback > 0) or B < 0:
        raise ValueError("T_reconf and R_feedback must be positive and B non-negative")
    T_final = 0.0 if final_is_last else T_reconf
    T_p = M * T_reconf + B / R_feedback + T_final
    if T_c is not None and T_p >= T_c:
        raise ProtocolInfeasible(f"time overhead {T_p:.3e} s exceeds coherence time {T_c:.3e} s")
    return T_p


def effective_rate(rate: float, T_p: float, T_c: float) -> float:
    if not 0.0 <= T_p < T_c:
        raise ProtocolInfeasible(f"time overhead {T_p} must lie in [0, T_c={T_c})")
    return ((T_c - T_p) / T_c) * rate
