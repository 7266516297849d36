import math

import numpy as np
import pytest

from oracles import lif_unroll
from spikerpe.errors import DimensionError, NumericError
from spikerpe.neuron import LIFParams, LIFState, lif_step, surrogate_grad, surrogate_primitive


@pytest.mark.parametrize(
    "u,i,h,spike,u_next",
    [(0.0, 0.0, 0.0, 0, 0.0), (0.0, 4.0, 2.0, 1, 0.0), (0.5, 0.0, 0.25, 0, 0.25)],
)
def test_step_examples(u, i, h, spike, u_next):
    s, st = lif_step(LIFState(np.array([u])), np.array([i]))
    assert s[0] == spike
    assert st.u[0] == u_next
    if not spike:
        assert st.u[0] == h


def test_threshold_equality_spikes():
    # H == u_thr exactly: u=0, I=2 -> H=1
    s, st = lif_step(LIFState.rest(1), np.array([2.0]))
    assert s[0] == 1 and st.u[0] == 0.0


def test_reset_and_leak():
    p = LIFParams(tau=4.0, u_thr=1.0, u_reset=0.0)
    st = LIFState(np.array([0.8]))
    for k in range(1, 6):
        s, st = lif_step(st, np.zeros(1), p)
        assert s[0] == 0
        assert st.u[0] == pytest.approx(0.8 * (1 - 1 / p.tau) ** k)


def test_nonzero_reset_potential():
    p = LIFParams(tau=2.0, u_thr=0.5, u_reset=-0.5)
    s, st = lif_step(LIFState.rest(3, p), np.array([0.0, 2.0, 10.0]), p)
    np.testing.assert_array_equal(s, [0, 1, 1])
    np.testing.assert_array_equal(st.u[1:], [-0.5, -0.5])
    assert st.u[0] == -0.5  # at rest with zero input


def test_unroll_matches_scalar_oracle(rng):
    currents = rng.normal(0.8, 1.0, (12, 7))
    st = LIFState.rest(7)
    got = []
    for t in range(12):
        s, st = lif_step(st, currents[t])
        got.append(s)
    got = np.array(got)
    for n in range(7):
        assert got[:, n].tolist() == lif_unroll(currents[:, n].tolist())


def test_binary_output(rng):
    s, _ = lif_step(LIFState(rng.normal(size=50)), rng.normal(0, 5, 50))
    assert set(np.unique(s).tolist()) <= {0.0, 1.0}


def test_step_errors():
    with pytest.raises(NumericError):
        lif_step(LIFState.rest(2), np.array([1.0, np.nan]))
    with pytest.raises(DimensionError):
        lif_step(LIFState.rest(2), np.zeros(3))


def test_params_validation():
    with pytest.raises(ValueError):
        LIFParams(tau=0.0)
    with pytest.raises(ValueError):
        LIFParams(u_thr=0.0, u_reset=0.0)


def test_surrogate_examples():
    assert surrogate_grad(0.0, 2.0) == 1.0
    assert surrogate_grad(1.0, 2.0) == pytest.approx(2 / (2 * (1 + math.pi**2)), abs=1e-12)
    assert round(surrogate_grad(1.0, 2.0), 4) == 0.0920
    assert surrogate_grad(1e8) < 1e-15 and surrogate_grad(-1e8) < 1e-15


@pytest.mark.parametrize("alpha", [0.5, 2.0, 4.0])
def test_surrogate_peak_is_half_alpha(alpha):
    assert abs(surrogate_grad(0.0, alpha) - alpha / 2) <= 1e-12


def _trapezoid(y, x):
    return np.trapezoid(y, x) if hasattr(np, "trapezoid") else np.trapz(y, x)


@pytest.mark.parametrize("alpha", [1.0, 2.0, 4.0])
def test_surrogate_mass_and_symmetry(alpha):
    x = np.linspace(-50, 50, 200_001)
    g = surrogate_grad(x, alpha)
    np.testing.assert_array_equal(g, surrogate_grad(-x, alpha))
    # over [-50, 50] the mass is (2/pi) atan(25 pi alpha), slightly under 1
    assert _trapezoid(g, x) == pytest.approx(2 / math.pi * math.atan(25 * math.pi * alpha), abs=1e-6)
    # the tail decays like 1/x^2; a wide window recovers unit mass
    xs = np.concatenate([-np.geomspace(1e5, 1e-6, 400_000), [0.0], np.geomspace(1e-6, 1e5, 400_000)])
    assert abs(_trapezoid(surrogate_grad(xs, alpha), xs) - 1.0) < 1e-3


def test_surrogate_is_derivative_of_primitive():
    x = np.linspace(-3, 3, 61)
    h = 1e-6
    fd = (surrogate_primitive(x + h) - surrogate_primitive(x - h)) / (2 * h)
    np.testing.assert_allclose(fd, surrogate_grad(x), rtol=1e-6, atol=1e-9)


def test_surrogate_bad_alpha():
    with pytest.raises(ValueError):
        surrogate_grad(0.0, 0.0)
