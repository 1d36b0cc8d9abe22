"""Angle- and capacitance-dependent meta-atom reflection.

Each meta-atom is modelled by an equivalent circuit: a series branch
``R_T + jwL_T + 1/(jwC_T) + 1/(jwC)`` (top layer plus varactor) in parallel
with the bottom-layer inductance ``jwL_B``.  The element values depend on the
incident angle and are stored in a :class:`CircuitParamTable`, interpolated
piecewise-linearly between angle knots.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

Z0_FREE_SPACE = 376.73
DEFAULT_FREQUENCY = 5.195e9
ANGLE_MARGIN_DEG = 0.01

_COLUMNS = ("theta_deg", "L_T", "C_T", "R_T", "L_B")


class ReflectionError(ValueError):
    """Invalid input to the reflection model."""


class AngleDomainError(ReflectionError):
    pass


class CapacitanceError(ReflectionError):
    pass


@dataclass(frozen=True)
class CircuitParamTable:
    """Angle-indexed equivalent-circuit element values.

    ``entries`` has shape (n, 5) with columns theta_deg, L_T, C_T, R_T, L_B
    in SI units.
    """

    entries: np.ndarray
    f: float = DEFAULT_FREQUENCY
    Z0: float = Z0_FREE_SPACE

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[1] != 5:
            raise ReflectionError(f"table must have 5 columns, got shape {e.shape}")
        if e.shape[0] < 2:
            raise ReflectionError("table needs at least 2 angle knots")
        theta = e[:, 0]
        if np.any(np.diff(theta) <= 0):
            raise ReflectionError("theta_deg must be strictly increasing")
        if theta[0] <= 0.0 or theta[-1] >= 90.0:
            raise ReflectionError("table angles must lie in (0, 90) degrees")
        if np.any(e[:, 1] <= 0) or np.any(e[:, 2] <= 0) or np.any(e[:, 4] <= 0):
            raise ReflectionError("L_T, C_T and L_B must be positive")
        if np.any(e[:, 3] < 0):
            raise ReflectionError("R_T must be non-negative")
        if not self.f > 0:
            raise ReflectionError("carrier frequency must be positive")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def theta_min(self) -> float:
        return float(self.entries[0, 0])

    @property
    def theta_max(self) -> float:
        return float(self.entries[-1, 0])

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.f

    def clamp(self, theta):
        """Clamp angles into the table domain with a small safety margin."""
        return np.clip(theta, self.theta_min + ANGLE_MARGIN_DEG, self.theta_max - ANGLE_MARGIN_DEG)


def parse_table(text: str, f: float = DEFAULT_FREQUENCY, Z0: float = Z0_FREE_SPACE) -> CircuitParamTable:
    rows = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if not header_seen:
            if tuple(fields) != _COLUMNS:
                raise ReflectionError(f"line {lineno}: expected header {' '.join(_COLUMNS)!r}")
            header_seen = True
            continue
        if len(fields) != 5:
            raise ReflectionError(f"line {lineno}: expected 5 values, got {len(fields)}")
        try:
            rows.append([float(x) for x in fields])
        except ValueError as exc:
            raise ReflectionError(f"line {lineno}: {exc}") from None
    if not header_seen:
        raise ReflectionError("missing header line")
    return CircuitParamTable(np.array(rows), f=f, Z0=Z0)


def load_table(path, f: float = DEFAULT_FREQUENCY, Z0: float = Z0_FREE_SPACE) -> CircuitParamTable:
    return parse_table(Path(path).read_text(), f=f, Z0=Z0)


def default_table(f: float = DEFAULT_FREQUENCY, Z0: float = Z0_FREE_SPACE) -> CircuitParamTable:
    """The shipped synthetic table (see ``data/default_circuit.txt``)."""
    text = resources.files("irsctl").joinpath("data/default_circuit.txt").read_text()
    return parse_table(text, f=f, Z0=Z0)


def format_table(table: CircuitParamTable) -> str:
    lines = [" ".join(_COLUMNS)]
    for row in table.entries:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


def lookup_params(table: CircuitParamTable, theta):
    """Interpolated (L_T, C_T, R_T, L_B) at ``theta`` degrees.

    ``theta`` may be a scalar or an array; each returned element has its shape.
    Angles must already be clamped into the table domain.
    """
    theta = np.asarray(theta, dtype=float)
    knots = table.entries[:, 0]
    bad = ~np.isfinite(theta) | (theta < knots[0]) | (theta > knots[-1])
    if np.any(bad):
        raise AngleDomainError(
            f"incident angle {np.atleast_1d(theta)[np.atleast_1d(bad)][0]!r} deg outside "
            f"table domain [{knots[0]}, {knots[-1]}]"
        )
    return tuple(np.interp(theta, knots, table.entries[:, j]) for j in range(1, 5))


def _impedance_from_params(omega, C, L_T, C_T, R_T, L_B):
    series = R_T + 1j * omega * L_T + 1.0 / (1j * omega * C_T) + 1.0 / (1j * omega * C)
    bottom = 1j * omega * L_B
    return bottom * series / (bottom + series)


def impedance(table: CircuitParamTable, C, theta):
    """Meta-atom impedance in ohms; broadcasts over ``C`` and ``theta``."""
    C = np.asarray(C, dtype=float)
    if np.any(~(C > 0)):
        raise CapacitanceError("capacitance must be positive")
    L_T, C_T, R_T, L_B = lookup_params(table, theta)
    Z = _impedance_from_params(table.omega, C, L_T, C_T, R_T, L_B)
    if not np.all(np.isfinite(Z)):
        raise ReflectionError("non-finite impedance")
    return Z[()] if np.ndim(Z) == 0 else Z


def reflection_coeff(table: CircuitParamTable, C, theta):
    """Reflection coefficient (Z - Z0) / (Z + Z0)."""
    Z = np.asarray(impedance(table, C, theta))
    den = Z + table.Z0
    if np.any(den == 0):
        raise ReflectionError("impedance equals -Z0: reflection coefficient undefined")
    gamma = (Z - table.Z0) / den
    return gamma[()] if gamma.ndim == 0 else gamma


def reflection_matrix(table: CircuitParamTable, c, theta) -> np.ndarray:
    """Diagonal of the per-path reflection matrix for full-length capacitances ``c``."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.ndim != 1:
        raise ReflectionError("capacitance vector must be one-dimensional")
    return np.asarray(reflection_coeff(table, c, float(theta)), dtype=complex)


def reflection_grid(table: CircuitParamTable, C, thetas) -> np.ndarray:
    """Reflection coefficients for every (capacitance, angle) pair.

    ``C`` has shape (..., n) and ``thetas`` shape (L,); the result has shape
    (..., L, n).  Element values are interpolated once per angle.
    """
    C = np.asarray(C, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if np.any(~(C > 0)):
        raise CapacitanceError("capacitance must be positive")
    L_T, C_T, R_T, L_B = (p[:, None] for p in lookup_params(table, thetas))
    Z = _impedance_from_params(table.omega, C[..., None, :], L_T, C_T, R_T, L_B)
    return (Z - table.Z0) / (Z + table.Z0)
