import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irsctl.reflection import (
    AngleDomainError,
    CapacitanceError,
    CircuitParamTable,
    ReflectionError,
    default_table,
    format_table,
    impedance,
    lookup_params,
    parse_table,
    reflection_coeff,
    reflection_grid,
    reflection_matrix,
)

F = 5.195e9
W = 2 * np.pi * F
Z0 = 376.73


def synthetic_table(n=10, seed=3):
    rng = np.random.default_rng(seed)
    th = np.sort(rng.uniform(1, 89, n))
    return CircuitParamTable(
        np.c_[th, rng.uniform(0.5, 2, n) * 1e-9, rng.uniform(0.5, 2, n) * 1e-12, rng.uniform(0, 3, n),
              rng.uniform(0.5, 2, n) * 1e-9]
    )


def pw_linear(xs, ys, x):
    for i in range(len(xs) - 1):
        if xs[i] <= x <= xs[i + 1]:
            w = (x - xs[i]) / (xs[i + 1] - xs[i])
            return (1 - w) * ys[i] + w * ys[i + 1]
    raise AssertionError("outside")


def z_oracle(C, L_T, C_T, R_T, L_B):
    zs = complex(R_T, W * L_T - 1 / (W * C_T) - 1 / (W * C))
    zb = complex(0, W * L_B)
    return zs * zb / (zs + zb)


def test_knots_verbatim():
    t = synthetic_table()
    for row in t.entries:
        assert lookup_params(t, row[0]) == tuple(row[1:])


def test_midpoint_is_mean():
    t = synthetic_table()
    a, b = t.entries[2], t.entries[3]
    got = lookup_params(t, (a[0] + b[0]) / 2)
    np.testing.assert_allclose(got, (a[1:] + b[1:]) / 2, rtol=1e-12)


def test_interp_against_piecewise_oracle():
    t = synthetic_table()
    theta = float(np.clip(37.3, t.theta_min, t.theta_max))
    got = lookup_params(t, theta)
    for j in range(4):
        assert got[j] == pytest.approx(pw_linear(t.entries[:, 0], t.entries[:, j + 1], theta), rel=1e-12)


def test_out_of_domain_raises():
    t = synthetic_table()
    with pytest.raises(AngleDomainError, match="outside"):
        lookup_params(t, t.theta_max + 1)


def test_parallel_equal_branches_halve():
    # series branch +j50 with C huge, bottom branch +j50
    L_B = 50 / W
    C_T = 1.0
    L_T = 50 / W + 1 / (W**2 * C_T)
    t = CircuitParamTable(np.array([[10, L_T, C_T, 0, L_B], [80, L_T, C_T, 0, L_B]]))
    z = impedance(t, 1e9, 45)
    assert z == pytest.approx(25j, abs=1e-6)


def test_impedance_matches_direct_formula():
    t = synthetic_table()
    th = 41.0
    z = impedance(t, 1e-12, th)
    assert z == pytest.approx(z_oracle(1e-12, *lookup_params(t, th)), rel=1e-12)


def test_huge_capacitance_term_vanishes():
    assert abs(1 / (1j * W * 1.0)) < 1e-9
    t = synthetic_table()
    th = 30.0
    L_T, C_T, R_T, L_B = lookup_params(t, th)
    expected = z_oracle(np.inf, L_T, C_T, R_T, L_B)
    assert impedance(t, 1.0, th) == pytest.approx(expected, rel=1e-9)


def test_bad_capacitance():
    with pytest.raises(CapacitanceError):
        impedance(default_table(), 0.0, 45)


def test_matched_load_gives_zero():
    # resonant series branch with R_T = Z0 and an effectively open bottom branch
    C = C_T = 1e-12
    L_T = (1 / C_T + 1 / C) / W**2
    t = CircuitParamTable(np.array([[10, L_T, C_T, Z0, 1.0], [80, L_T, C_T, Z0, 1.0]]))
    assert abs(reflection_coeff(t, C, 45)) < 1e-6


def test_lossless_full_reflection():
    e = default_table().entries.copy()
    e[:, 3] = 0.0
    t = CircuitParamTable(e)
    C = np.linspace(0.4e-12, 2.7e-12, 50)
    np.testing.assert_allclose(np.abs(reflection_coeff(t, C, 33.0)), 1.0, atol=1e-9)


def test_default_sweep_45():
    t = default_table()
    C = np.linspace(0.4e-12, 2.7e-12, 300)
    g = reflection_coeff(t, C, 45.0)
    assert np.all(np.abs(g) <= 1 + 1e-12)
    oracle = np.array([(z - Z0) / (z + Z0) for z in (z_oracle(c, *lookup_params(t, 45.0)) for c in C)])
    np.testing.assert_allclose(g, oracle, rtol=1e-12)
    ph = np.unwrap(np.angle(g))
    d = np.diff(ph)
    assert np.all(d <= 0) or np.all(d >= 0)
    assert np.degrees(np.ptp(ph)) >= 300


def test_amplitude_tracks_phase():
    # one scalar knob moves both amplitude and phase
    t = default_table()
    C = np.linspace(0.4e-12, 2.7e-12, 60)
    for th in (10.0, 45.0, 80.0):
        g = reflection_coeff(t, C, th)
        ph = np.degrees(np.unwrap(np.angle(g)))
        for i in range(len(C) - 1):
            for j in range(i + 1, len(C)):
                if abs(ph[j] - ph[i]) > 10:
                    assert abs(abs(g[j]) - abs(g[i])) > 0


def test_reflection_matrix_cases():
    t = default_table()
    assert np.allclose(reflection_matrix(t, np.full(5, 1e-12), 20.0), reflection_coeff(t, 1e-12, 20.0))
    assert reflection_matrix(t, [1.3e-12], 20.0)[0] == reflection_coeff(t, 1.3e-12, 20.0)
    c = np.array([0.5, 1.1, 1.9, 2.6]) * 1e-12
    np.testing.assert_array_equal(reflection_matrix(t, c, 61.0), [reflection_coeff(t, x, 61.0) for x in c])


def test_grid_matches_pointwise():
    t = default_table()
    C = np.array([[0.4, 1.0, 2.7], [1.5, 2.0, 0.9]]) * 1e-12
    th = np.array([5.0, 45.0, 85.0, 60.0])
    g = reflection_grid(t, C, th)
    assert g.shape == (2, 4, 3)
    for m in range(2):
        for l in range(4):
            np.testing.assert_allclose(g[m, l], reflection_coeff(t, C[m], th[l]), rtol=1e-13)


def test_clamp_margin():
    t = default_table()
    assert t.clamp(0.0) == pytest.approx(t.theta_min + 0.01)
    assert t.clamp(95.0) == pytest.approx(t.theta_max - 0.01)


def test_table_text_round_trip():
    t = synthetic_table()
    t2 = parse_table("# comment\n" + format_table(t))
    np.testing.assert_array_equal(t2.entries, t.entries)


@pytest.mark.parametrize(
    "text",
    [
        "theta_deg L_T C_T R_T L_B\n10 1e-9 1e-12 1 1e-9\n",  # one knot
        "theta_deg L_T C_T R_T L_B\n20 1e-9 1e-12 1 1e-9\n10 1e-9 1e-12 1 1e-9\n",  # decreasing
        "theta_deg L_T C_T R_T L_B\n10 1e-9 1e-12 -1 1e-9\n20 1e-9 1e-12 1 1e-9\n",  # negative R
        "10 1e-9 1e-12 1 1e-9\n",  # no header
        "theta_deg L_T C_T R_T L_B\n10 1e-9 1e-12 1\n",  # short row
    ],
)
def test_bad_tables(text):
    with pytest.raises(ReflectionError):
        parse_table(text)


def test_pure():
    t = default_table()
    C = np.linspace(0.4e-12, 2.7e-12, 7)
    assert np.array_equal(reflection_coeff(t, C, 12.3), reflection_coeff(t, C, 12.3))


@settings(max_examples=200, deadline=None)
@given(st.floats(0.4e-12, 2.7e-12), st.floats(0.0, 90.0))
def test_passive_anywhere(C, theta):
    t = default_table()
    assert abs(reflection_coeff(t, C, t.clamp(theta))) <= 1 + 1e-12
