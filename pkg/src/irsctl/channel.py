"""Geometric multi-path channels with time correlation and UE mobility.

Three links are simulated: UE-BS (NLoS vector channel), IRS-BS (Rician
matrix channel with a fixed LoS component) and UE-IRS (NLoS paths, plus a
geometric LoS path in the outdoor scenario).  Path gains follow a first-order
Gauss-Markov recursion whose correlation comes from the Jakes model; angles
take small uniform random steps every coherence block.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0
SCENARIOS = ("scenario1_nlos", "scenario2_los")


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind by its power series.

    Accurate to ~1e-13 for |x| <= 10, which covers every Doppler argument the
    simulator produces.
    """
    x = np.asarray(x, dtype=float)
    q = -(x * x) / 4.0
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, 60):
        term = term * q / (k * k)
        total = total + term
        if np.all(np.abs(term) < 1e-18):
            break
    return total[()] if total.ndim == 0 else total


def jakes_rho(v: float, f: float, T_c: float) -> float:
    """Block-to-block gain correlation J0(2 pi f_d T_c) with f_d = v f / c."""
    f_d = v * f / SPEED_OF_LIGHT
    return float(bessel_j0(2.0 * np.pi * f_d * T_c))


def large_scale_fading(d, alpha: float, beta0_db: float = -30.0, d0: float = 1.0):
    """Linear-power large-scale fading at distance ``d`` meters."""
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError(f"distance must be positive, got {d}")
    out = 10.0 ** ((beta0_db - 10.0 * alpha * np.log10(d / d0)) / 10.0)
    return out[()] if out.ndim == 0 else out


def arv(theta, n_elems: int, spacing: float, lam: float) -> np.ndarray:
    """Uniform linear array response; element k has phase 2 pi (d/lambda) k sin(theta).

    A vector ``theta`` (degrees) gives one response per row.
    """
    k = np.arange(n_elems)
    s = np.sin(np.radians(np.asarray(theta, dtype=float)))
    return np.exp(1j * 2.0 * np.pi * (spacing / lam) * np.multiply.outer(s, k))


def complex_normal(rng, var, size=None):
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    std = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return std * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


@dataclass
class PathState:
    """One propagation path.  ``phi`` is NaN for vector (single-ended) channels."""

    gain: complex
    theta: float
    phi: float = float("nan")
    beta: float = 1.0


def evolve_path(p: PathState, rho: float, beta_new: float, rng, angle_step: float = 0.1) -> PathState:
    """One Gauss-Markov step of the gain plus a uniform angle perturbation."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    gain = rho * p.gain + math.sqrt(1.0 - rho * rho) * complex(complex_normal(rng, beta_new))
    theta = p.theta + rng.uniform(-angle_step, angle_step)
    phi = p.phi
    if not math.isnan(phi):
        phi = phi + rng.uniform(-angle_step, angle_step)
    return PathState(gain=gain, theta=theta, phi=phi, beta=beta_new)


@dataclass
class PathSet:
    """Vectorized bundle of paths sharing one large-scale factor."""

    gain: np.ndarray
    theta: np.ndarray
    phi: np.ndarray | None = None
    beta: float = 1.0

    def __len__(self):
        return len(self.gain)

    def copy(self) -> "PathSet":
        return PathSet(
            self.gain.copy(), self.theta.copy(), None if self.phi is None else self.phi.copy(), self.beta
        )

    def paths(self) -> list[PathState]:
        phis = self.phi if self.phi is not None else [float("nan")] * len(self)
        return [PathState(complex(g), float(t), float(p), self.beta) for g, t, p in zip(self.gain, self.theta, phis)]

    def evolve(self, rho: float, beta_new: float, rng, angle_step: float) -> "PathSet":
        n = len(self)
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {rho}")
        gain = rho * self.gain + math.sqrt(1.0 - rho * rho) * complex_normal(rng, beta_new, n)
        theta = self.theta + rng.uniform(-angle_step, angle_step, n)
        phi = None
        if self.phi is not None:
            phi = self.phi + rng.uniform(-angle_step, angle_step, n)
        return PathSet(gain, theta, phi, beta_new)


@dataclass
class Geometry:
    """2-D positions (meters), UE heading (radians) and array constants."""

    x_bs: np.ndarray
    x_irs: np.ndarray
    x_ue: np.ndarray
    heading: float
    v_ue: float
    d_bs: float
    d_irs: float
    lam: float

    def __post_init__(self):
        if not (self.d_bs > 0 and self.d_irs > 0 and self.lam > 0):
            raise ValueError("antenna spacings and wavelength must be positive")

    def copy(self) -> "Geometry":
        return replace(self, x_bs=self.x_bs.copy(), x_irs=self.x_irs.copy(), x_ue=self.x_ue.copy())

    @property
    def d_ue_bs(self) -> float:
        return float(np.linalg.norm(self.x_ue - self.x_bs))

    @property
    def d_ue_irs(self) -> float:
        return float(np.linalg.norm(self.x_ue - self.x_irs))

    @property
    def d_irs_bs(self) -> float:
        return float(np.linalg.norm(self.x_irs - self.x_bs))

    def ue_irs_angle(self) -> float:
        """Incident angle of the UE LoS ray at the IRS, measured from the surface normal.

        The surface normal points along -y (towards the BS/UE side of the map).
        """
        dx, dy = self.x_ue - self.x_irs
        return math.degrees(math.atan2(dx, -dy))


@dataclass
class EnvConfig:
    """Physical constants of the simulated deployment (defaults follow the reference setup)."""

    f: float = 5.195e9
    T_c: float = 5e-3
    N_BS: int = 5
    N_IRS_w: int = 50
    N_IRS_h: int = 4
    d_BS_over_lambda: float = 0.5
    d_IRS_over_lambda: float = 0.1
    x_BS: tuple = (0.0, 0.0)
    x_IRS: tuple = (90.0, 30.0)
    x_UE_center: tuple = (100.0, 0.0)
    r_UE: float = 5.0
    v_UE: float = 3.0 / 3.6
    # Doppler speed of the UE or scatterers; sets rho unless rho is given
    v_doppler: float = 3.0 / 3.6
    rho: float | None = None
    angle_step_deg: float = 0.1
    beta0_db: float = -30.0
    d0: float = 1.0
    alpha_UB: float = 3.75
    alpha_IB: float = 2.0
    alpha_UI: float = 2.2
    K_IB: float = 5.0
    K_UI: float = 1.0
    L_UB: int = 10
    L_IB: int = 10
    L: int = 10
    IB_los_aoa_deg: float = 0.0
    IB_los_aod_deg: float = -60.0

    @property
    def N_IRS(self) -> int:
        return self.N_IRS_w * self.N_IRS_h

    @property
    def lam(self) -> float:
        return SPEED_OF_LIGHT / self.f

    @property
    def correlation(self) -> float:
        if self.rho is not None:
            return float(self.rho)
        return jakes_rho(self.v_doppler, self.f, self.T_c)


@dataclass
class ChannelState:
    ue_bs: PathSet
    ue_irs_nlos: PathSet
    irs_bs_los: PathState
    irs_bs_nlos: PathSet
    ue_irs_los: PathState | None = None
    rician_K_ib: float = 5.0
    rician_K_ui: float = 1.0
    rho: float = 0.95

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")

    def copy(self) -> "ChannelState":
        return replace(
            self,
            ue_bs=self.ue_bs.copy(),
            ue_irs_nlos=self.ue_irs_nlos.copy(),
            irs_bs_nlos=self.irs_bs_nlos.copy(),
            irs_bs_los=replace(self.irs_bs_los),
            ue_irs_los=None if self.ue_irs_los is None else replace(self.ue_irs_los),
        )


@dataclass
class Channels:
    """Per-block channel realization consumed by the effective-channel computation."""

    h_ub: np.ndarray
    H_ib: np.ndarray
    ui_thetas: np.ndarray
    ui_vectors: np.ndarray = field(repr=False)


def _check_scenario(scenario: str):
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")


def _los_path(distance: float, alpha: float, cfg: EnvConfig, theta: float, phi: float = float("nan")) -> PathState:
    beta = float(large_scale_fading(distance, alpha, cfg.beta0_db, cfg.d0))
    gain = math.sqrt(beta) * complex(np.exp(-1j * 2.0 * np.pi * distance / cfg.lam))
    return PathState(gain=gain, theta=theta, phi=phi, beta=beta)


def _ue_irs_los(geom: Geometry, cfg: EnvConfig) -> PathState:
    theta = geom.ue_irs_angle()
    if not 0.0 < theta < 90.0:
        log.warning("UE-IRS LoS angle %.3f deg outside (0, 90); reflection lookup will clamp it", theta)
    return _los_path(geom.d_ue_irs, cfg.alpha_UI, cfg, theta)


def init_environment(cfg: EnvConfig, scenario: str, rng) -> tuple[Geometry, ChannelState]:
    """Fresh episode: random UE start inside the spawn disc, random heading, random paths."""
    _check_scenario(scenario)
    r = cfg.r_UE * math.sqrt(rng.uniform())
    a = rng.uniform(0.0, 2.0 * np.pi)
    x_ue = np.array(cfg.x_UE_center, dtype=float) + r * np.array([math.cos(a), math.sin(a)])
    geom = Geometry(
        x_bs=np.array(cfg.x_BS, dtype=float),
        x_irs=np.array(cfg.x_IRS, dtype=float),
        x_ue=x_ue,
        heading=float(rng.uniform(0.0, 2.0 * np.pi)),
        v_ue=cfg.v_UE,
        d_bs=cfg.d_BS_over_lambda * cfg.lam,
        d_irs=cfg.d_IRS_over_lambda * cfg.lam,
        lam=cfg.lam,
    )

    b_ub = float(large_scale_fading(geom.d_ue_bs, cfg.alpha_UB, cfg.beta0_db, cfg.d0))
    b_ui = float(large_scale_fading(geom.d_ue_irs, cfg.alpha_UI, cfg.beta0_db, cfg.d0))
    b_ib = float(large_scale_fading(geom.d_irs_bs, cfg.alpha_IB, cfg.beta0_db, cfg.d0))

    ue_bs = PathSet(complex_normal(rng, b_ub, cfg.L_UB), rng.uniform(-90.0, 90.0, cfg.L_UB), None, b_ub)
    ue_irs = PathSet(complex_normal(rng, b_ui, cfg.L), rng.uniform(0.0, 90.0, cfg.L), None, b_ui)
    irs_bs = PathSet(
        complex_normal(rng, b_ib, cfg.L_IB),
        rng.uniform(-90.0, 90.0, cfg.L_IB),
        rng.uniform(-90.0, 90.0, cfg.L_IB),
        b_ib,
    )
    state = ChannelState(
        ue_bs=ue_bs,
        ue_irs_nlos=ue_irs,
        irs_bs_los=_los_path(geom.d_irs_bs, cfg.alpha_IB, cfg, cfg.IB_los_aoa_deg, cfg.IB_los_aod_deg),
        irs_bs_nlos=irs_bs,
        ue_irs_los=_ue_irs_los(geom, cfg) if scenario == "scenario2_los" else None,
        rician_K_ib=cfg.K_IB,
        rician_K_ui=cfg.K_UI,
        rho=cfg.correlation,
    )
    return geom, state


def step_environment(geom: Geometry, state: ChannelState, scenario: str, cfg: EnvConfig, rng):
    """Advance the world by one coherence block; inputs are left untouched."""
    _check_scenario(scenario)
    geom = geom.copy()
    step = geom.v_ue * cfg.T_c
    geom.x_ue = geom.x_ue + step * np.array([math.cos(geom.heading), math.sin(geom.heading)])

    rho = state.rho
    b_ub = float(large_scale_fading(geom.d_ue_bs, cfg.alpha_UB, cfg.beta0_db, cfg.d0))
    b_ui = float(large_scale_fading(geom.d_ue_irs, cfg.alpha_UI, cfg.beta0_db, cfg.d0))
    new = replace(
        state,
        ue_bs=state.ue_bs.evolve(rho, b_ub, rng, cfg.angle_step_deg),
        ue_irs_nlos=state.ue_irs_nlos.evolve(rho, b_ui, rng, cfg.angle_step_deg),
        irs_bs_nlos=state.irs_bs_nlos.evolve(rho, state.irs_bs_nlos.beta, rng, cfg.angle_step_deg),
        irs_bs_los=replace(state.irs_bs_los),
        ue_irs_los=_ue_irs_los(geom, cfg) if scenario == "scenario2_los" else None,
    )
    return geom, new


def assemble_ue_bs(state: ChannelState, geom: Geometry, n_bs: int) -> np.ndarray:
    p = state.ue_bs
    if len(p) == 0:
        return np.zeros(n_bs, dtype=complex)
    return p.gain @ arv(p.theta, n_bs, geom.d_bs, geom.lam)


def assemble_irs_bs(state: ChannelState, geom: Geometry, n_bs: int, n_irs: int) -> np.ndarray:
    K = state.rician_K_ib
    los = state.irs_bs_los
    H0 = los.gain * np.outer(arv(los.theta, n_bs, geom.d_bs, geom.lam), arv(los.phi, n_irs, geom.d_irs, geom.lam).conj())
    p = state.irs_bs_nlos
    A_rx = arv(p.theta, n_bs, geom.d_bs, geom.lam)  # (L, N_BS)
    A_tx = arv(p.phi, n_irs, geom.d_irs, geom.lam)  # (L, N_IRS)
    Hn = np.einsum("l,lb,li->bi", p.gain, A_rx, A_tx.conj())
    return math.sqrt(K / (1.0 + K)) * H0 + math.sqrt(1.0 / (1.0 + K)) * Hn


def assemble_ue_irs_paths(state: ChannelState, geom: Geometry, n_irs: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-path incident angles (L,) and weighted path vectors (L, N_IRS).

    Paths stay separate because each sees its own angle-dependent reflection.
    The LoS path, when present, comes first.
    """
    p = state.ue_irs_nlos
    vecs = p.gain[:, None] * arv(p.theta, n_irs, geom.d_irs, geom.lam)
    thetas = p.theta.copy()
    if state.ue_irs_los is not None:
        K = state.rician_K_ui
        los = state.ue_irs_los
        los_vec = math.sqrt(K / (1.0 + K)) * los.gain * arv(los.theta, n_irs, geom.d_irs, geom.lam)
        vecs = np.vstack([los_vec[None, :], math.sqrt(1.0 / (1.0 + K)) * vecs])
        thetas = np.concatenate([[los.theta], thetas])
    return thetas, vecs


def realize(state: ChannelState, geom: Geometry, cfg: EnvConfig) -> Channels:
    thetas, vecs = assemble_ue_irs_paths(state, geom, cfg.N_IRS)
    return Channels(
        h_ub=assemble_ue_bs(state, geom, cfg.N_BS),
        H_ib=assemble_irs_bs(state, geom, cfg.N_BS, cfg.N_IRS),
        ui_thetas=thetas,
        ui_vectors=vecs,
    )
