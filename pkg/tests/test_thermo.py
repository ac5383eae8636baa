import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from randeuler.thermo import (ConservedCell, GasParams, NonAdmissibleStateError,
                              conserved_from_primitive, entropy, max_wave_speed,
                              primitive_from_conserved, primitives)

AIR = GasParams(1.4)


def test_gas_params():
    assert AIR.cv * (AIR.gamma - 1) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        GasParams(1.0)


def test_primitive_rest_state():
    p = primitive_from_conserved(ConservedCell(1.0, (0.0, 0.0), 2.5), AIR)
    assert tuple(p.u) == (0.0, 0.0)
    assert (p.e, p.p, p.theta, p.s) == pytest.approx((2.5, 1.0, 1.0, 0.0), abs=1e-15)


def test_primitive_gamma_two():
    p = primitive_from_conserved(ConservedCell(1.0, (1.0, 0.0), 1.0), GasParams(2.0))
    assert tuple(p.u) == (1.0, 0.0)
    assert (p.e, p.p, p.theta) == (0.5, 0.5, 0.5)
    assert p.s == pytest.approx(-0.6931471805599453, abs=1e-15)


@pytest.mark.parametrize("cell, quantity", [
    (ConservedCell(1.0, (0.0, 0.0), -1.0), "e"),
    (ConservedCell(0.0, (0.0, 0.0), 1.0), "rho"),
    (ConservedCell(-2.0, (0.0, 0.0), 1.0), "rho"),
    (ConservedCell(1.0, (2.0, 0.0), 2.0), "e"),
])
def test_non_admissible(cell, quantity):
    for fn in (primitive_from_conserved, entropy, max_wave_speed):
        with pytest.raises(NonAdmissibleStateError) as info:
            fn(cell, AIR)
        assert info.value.quantity == quantity


def test_entropy_examples():
    assert entropy(ConservedCell(1.0, (0, 0), 2.5), AIR) == pytest.approx(0.0, abs=1e-15)
    assert entropy(ConservedCell(2.0, (0, 0), 5.0), AIR) == pytest.approx(-math.log(2), abs=1e-15)


def test_entropy_scaling_high_precision():
    # s(l rho, 0, l E) = s(rho, 0, E) - log l, checked at 50 digits
    mpmath.mp.dps = 50
    g = mpmath.mpf("1.4")

    def s_mp(rho, E):
        return mpmath.log((g - 1) * E / rho) / (g - 1) - mpmath.log(rho)

    for rho, E, lam in [(1.0, 2.5, 2.0), (0.3, 7.0, 5.5), (2.0, 0.1, 0.01)]:
        got = entropy(ConservedCell(lam * rho, (0, 0), lam * E), AIR)
        ref = s_mp(mpmath.mpf(rho), mpmath.mpf(E)) - mpmath.log(mpmath.mpf(lam))
        assert got == pytest.approx(float(ref), abs=1e-13)


def test_wave_speed_examples():
    assert max_wave_speed(ConservedCell(1.0, (0, 0), 2.5), AIR) == pytest.approx(math.sqrt(1.4), abs=1e-15)
    E = 2.5 + 0.5 * 25
    assert max_wave_speed(ConservedCell(1.0, (3.0, 4.0), E), AIR) == pytest.approx(5 + math.sqrt(1.4), abs=1e-14)


def test_wave_speed_vacuum_scale():
    rho = 1e-12
    u = (3e-1, -2e-1)
    E = rho * 1.0 + 0.5 * rho * (u[0] ** 2 + u[1] ** 2)
    got = max_wave_speed(ConservedCell(rho, (rho * u[0], rho * u[1]), E), AIR)
    mpmath.mp.dps = 60
    r = mpmath.mpf(rho)
    m = [r * mpmath.mpf(u[0]), r * mpmath.mpf(u[1])]
    Em = mpmath.mpf(E)
    g = mpmath.mpf("1.4")
    p = (g - 1) * (Em - (m[0] ** 2 + m[1] ** 2) / (2 * r))
    ref = mpmath.sqrt(m[0] ** 2 + m[1] ** 2) / r + mpmath.sqrt(g * p / r)
    assert math.isfinite(got)
    assert got == pytest.approx(float(ref), rel=1e-10)


states = st.tuples(
    st.floats(1e-3, 1e3), st.floats(-10, 10), st.floats(-10, 10), st.floats(1e-3, 1e3),
    st.floats(1.05, 3.0),
)


@given(states)
def test_roundtrip_and_entropy_agreement(state):
    rho, ux, uy, p, gamma = state
    gas = GasParams(gamma)
    r, m, E = conserved_from_primitive(rho, (ux, uy), p, gas)
    u2, p2, theta, e, s = primitives(r, m, E, gas)
    rebuilt = np.array([r, r * u2[0], r * u2[1], r * e + 0.5 * r * (u2 ** 2).sum()])
    orig = np.array([r, m[0], m[1], E])
    np.testing.assert_allclose(rebuilt, orig, rtol=1e-12, atol=1e-12 * abs(E))
    assert p2 == pytest.approx((gamma - 1) * r * e, rel=1e-12)
    assert theta == pytest.approx(p2 / r, rel=1e-12)
    assert entropy((r, m, E), gas) == pytest.approx(float(s), rel=1e-12, abs=1e-12)


def test_roundtrip_ten_thousand_states():
    rng = np.random.default_rng(11)
    n = 10_000
    rho = 10 ** rng.uniform(-3, 3, n)
    u = rng.normal(scale=5, size=(n, 2))
    p = 10 ** rng.uniform(-3, 3, n)
    r, m, E = conserved_from_primitive(rho, u, p, AIR)
    u2, p2, _, e, s = primitives(r, m, E, AIR)
    E2 = r * e + 0.5 * r * (u2 ** 2).sum(1)
    np.testing.assert_allclose(r[:, None] * u2, m, rtol=1e-12, atol=0)
    np.testing.assert_allclose(E2, E, rtol=1e-12)
    np.testing.assert_allclose(entropy((r, m, E), AIR), s, rtol=1e-12, atol=1e-12)


@given(states, st.floats(1e-6, 1.0))
def test_entropy_increasing_in_energy(state, frac):
    rho, ux, uy, p, gamma = state
    gas = GasParams(gamma)
    r, m, E = conserved_from_primitive(rho, (ux, uy), p, gas)
    dE = frac * (E - 0.5 * float((m ** 2).sum()) / r)
    assert entropy((r, m, E + dE), gas) > entropy((r, m, E), gas)
