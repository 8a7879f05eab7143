import numpy as np
import pytest

from hybmot.sim.waves import BAND_HI, BAND_LO, jonswap_components, jonswap_density


def _quadrature_variance(hs, tp, n=20000):
    # independent oracle: fine trapezoid quadrature of the density
    wp = 2 * np.pi / tp
    w = np.linspace(BAND_LO * wp, BAND_HI * wp, n)
    return np.trapezoid(jonswap_density(w, hs, tp), w)


@pytest.mark.parametrize("hs,tp", [(1.0, 8.0), (2.0, 8.0), (4.0, 8.0), (2.5, 6.0), (3.0, 12.0)])
def test_component_variance_matches_target(hs, tp):
    rng = np.random.default_rng(1)
    _, amp, _ = jonswap_components(hs, tp, 256, rng)
    total = np.sum(amp**2) / 2.0
    target = hs**2 / 16.0
    assert abs(total - target) < 0.02 * target


def test_variance_matches_quadrature_oracle():
    rng = np.random.default_rng(2)
    _, amp, _ = jonswap_components(2.0, 8.0, 256, rng)
    total = np.sum(amp**2) / 2.0
    oracle = _quadrature_variance(2.0, 8.0)
    assert abs(total - oracle) < 1e-3 * oracle
    # the committed example window from the discretized sum
    assert 0.245 <= total <= 0.255


def test_degenerate_sea_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        jonswap_components(0.0, 8.0, 64, rng)
    with pytest.raises(ValueError):
        jonswap_components(2.0, -1.0, 64, rng)
    with pytest.raises(ValueError):
        jonswap_density(np.array([0.5]), 0.0, 8.0)


def test_too_few_components_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        jonswap_components(2.0, 8.0, 8, rng)


def test_doubling_hs_quadruples_variance():
    rng = np.random.default_rng(3)
    _, a1, _ = jonswap_components(1.5, 9.0, 128, rng)
    _, a2, _ = jonswap_components(3.0, 9.0, 128, rng)
    assert np.isclose(np.sum(a2**2), 4.0 * np.sum(a1**2), rtol=1e-12)


def test_component_layout():
    rng = np.random.default_rng(4)
    omega, amp, phases = jonswap_components(2.0, 8.0, 64, rng)
    wp = 2 * np.pi / 8.0
    assert len(omega) == len(amp) == len(phases) == 64
    dw = np.diff(omega)
    assert np.allclose(dw, dw[0])
    assert omega[0] > BAND_LO * wp and omega[-1] < BAND_HI * wp
    assert np.all(amp >= 0)
    assert np.all((phases >= 0) & (phases < 2 * np.pi))


def test_density_peaks_near_peak_frequency():
    wp = 2 * np.pi / 8.0
    w = np.linspace(0.4 * wp, 3 * wp, 2000)
    dens = jonswap_density(w, 2.0, 8.0)
    w_peak = w[np.argmax(dens)]
    assert abs(w_peak - wp) < 0.05 * wp
