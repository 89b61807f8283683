import math

import numpy as np
import pytest

from ramantm.grid import SpaceGrid, TemporalEnvelope, TimeGrid, hg_basis, hg_mode, superpose
from ramantm.kernel import (
    Kernel,
    build_retrieval_kernel,
    build_storage_kernel,
    component_filter_ratios,
    crosstalk_matrix,
    kernel_to_csv,
    nearest_neighbour_crosstalk,
    svd,
)
from ramantm.memory import CouplingSpec, retrieve, store


@pytest.fixture(scope="module")
def k06(params, grid):
    return build_storage_kernel(CouplingSpec(0.60, hg_mode(0, grid)), params)


@pytest.fixture(scope="module")
def k162(params, grid):
    return build_storage_kernel(CouplingSpec(1.62, hg_mode(0, grid)), params)


def test_kernel_reproduces_direct_store(k06, params, grid):
    s = hg_mode(0, grid)
    direct = store(s, CouplingSpec(0.60, s), params).spinwave.amplitude
    via = k06.apply(s).amplitude
    assert np.max(np.abs(via - direct)) <= 1e-8 * np.max(np.abs(direct))


def test_leading_mode_efficiency_at_low_coupling(k06):
    dec = svd(k06)
    e = dec.efficiencies
    assert abs(e[0] - 0.300) < 0.01
    assert e[1] / e[0] < 0.02


def test_zero_coupling_kernel(params, grid):
    k = build_storage_kernel(CouplingSpec(0.0, hg_mode(0, grid)), params, n_modes=5)
    assert np.all(k.matrix == 0)


def test_passivity(k06, k162):
    assert k06.max_singular_value <= 1 + 1e-6
    assert k162.max_singular_value <= 1 + 1e-6


def test_high_coupling_less_single_mode(k06, k162):
    a, b = svd(k06), svd(k162)
    assert b.efficiencies[1] / b.efficiencies.sum() > 5 * a.efficiencies[1] / a.efficiencies.sum()
    assert b.single_modeness < a.single_modeness


def test_reconstruction_residual(k162):
    dec = svd(k162)
    r = np.linalg.norm(dec.reconstruct() - k162.matrix) / np.linalg.norm(k162.matrix)
    assert r < 1e-8


def test_modes_are_unit_normalized(k06):
    dec = svd(k06, rank=3)
    for m in dec.input_modes:
        assert m.norm_sq == pytest.approx(1.0, abs=1e-10)
    for m in dec.output_modes:
        assert m.excitation_number == pytest.approx(1.0, abs=1e-10)


def test_efficiency_from_modes_matches_store(k162, params, grid):
    x = superpose([(0.6, hg_mode(0, grid)), (0.48j, hg_mode(1, grid)), (0.64, hg_mode(3, grid))])
    dec = svd(k162)
    pred = sum(lam**2 * abs(np.vdot(phi.amplitude, x.amplitude) * grid.dt) ** 2 for lam, phi in zip(dec.singular_values, dec.input_modes))
    direct = store(x, CouplingSpec(1.62, hg_mode(0, grid)), params).report.eta_stor
    assert abs(pred - direct) < 1e-6


def test_svd_contracts():
    g = TimeGrid(0.0, 1.0, 4)
    sg = SpaceGrid(3.0, 4)
    u = np.array([1.0, 2.0, 0.5, -1.0])
    v = np.array([0.3, -0.1j, 1.0, 0.2])
    one = svd(Kernel(g, sg, np.outer(u, v.conj())))
    assert np.count_nonzero(one.singular_values > 1e-12 * one.singular_values[0]) == 1
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)) + 0j)
    np.testing.assert_allclose(svd(Kernel(g, sg, q)).singular_values, 1.0, atol=1e-12)
    with pytest.raises(ValueError):
        svd(Kernel(g, sg, q), rank=5)
    with pytest.raises(ValueError):
        svd(Kernel(g, sg, q), rank=0)


def test_non_orthonormal_probes_rejected(params, grid):
    h0, h1 = hg_mode(0, grid), hg_mode(1, grid)
    bad = [h0, TemporalEnvelope(grid, (h0.amplitude + h1.amplitude) / math.sqrt(2))]
    with pytest.raises(ValueError):
        build_storage_kernel(CouplingSpec(0.6, h0), params, bad)


def test_impulse_probes_agree_with_hg_probes(params):
    g = TimeGrid.centered(4e-9, 96)
    p = params.with_space_samples(48)
    ctrl = CouplingSpec(0.6, hg_mode(0, g, fwhm=40e-9))
    from ramantm.kernel import impulse_probes

    ki = build_storage_kernel(ctrl, p, impulse_probes(g))
    x = hg_mode(2, g, fwhm=40e-9)
    direct = store(x, ctrl, p).spinwave.amplitude
    np.testing.assert_allclose(ki.apply(x).amplitude, direct, atol=1e-10 * np.abs(direct).max())


def test_retrieval_kernel(params, grid):
    read = CouplingSpec(0.6, hg_mode(0, grid).time_reversed())
    k2 = build_retrieval_kernel(read, params)
    assert not k2.is_storage
    assert k2.max_singular_value <= 1 + 1e-6
    s = hg_mode(0, grid)
    sw = store(s, CouplingSpec(0.6, s), params).spinwave
    out = retrieve(sw, read, params).output.amplitude
    np.testing.assert_allclose(k2.apply(sw).amplitude, out, atol=1e-8 * np.abs(out).max())


@pytest.fixture(scope="module")
def standard_matrices(params, hg5):
    return {c: crosstalk_matrix(hg5, hg5, c, params) for c in (0.60, 1.16, 1.62)}


def test_crosstalk_low_coupling(standard_matrices):
    m = standard_matrices[0.60]
    assert np.all((m >= 0) & (m <= 1))
    np.testing.assert_allclose(np.diag(m), 0.300, atol=0.01)
    assert nearest_neighbour_crosstalk(m) <= 0.002


def test_crosstalk_high_coupling(standard_matrices):
    m = standard_matrices[1.62]
    np.testing.assert_allclose(np.diag(m), 0.814, atol=0.02)
    assert abs(nearest_neighbour_crosstalk(m) - 0.180) <= 0.02


@pytest.mark.parametrize("C", [0.60, 1.16, 1.62])
def test_diagonal_uniformity(standard_matrices, C):
    d = np.diag(standard_matrices[C])
    assert (d.max() - d.min()) / d.mean() < 0.02


def test_orthogonal_signal_vanishes_at_low_coupling(params, grid):
    m = crosstalk_matrix([hg_mode(3, grid)], [hg_mode(0, grid)], 0.05, params)
    matched = crosstalk_matrix([hg_mode(0, grid)], [hg_mode(0, grid)], 0.05, params)
    assert m[0, 0] < 1e-3 * matched[0, 0]


@pytest.mark.parametrize("weights, ideal", [((1, 2), 4.0), ((1, 1), 1.0)])
def test_component_filter_ratios(params, grid, weights, ideal):
    h1, h3 = hg_mode(1, grid), hg_mode(3, grid)
    w = np.array(weights, float) / np.linalg.norm(weights)
    sup = superpose([(w[0], h1), (w[1], h3)])
    eff = component_filter_ratios(sup, [h1, h3], params, 0.60)
    assert abs(eff[1] / eff[0] / ideal - 1.0) < 0.05


def test_mismatched_component_is_filtered(params, grid):
    h1, h3 = hg_mode(1, grid), hg_mode(3, grid)
    eff = component_filter_ratios(h1, [h1, h3], params, 0.60)
    assert eff[1] < 0.02 * eff[0]


def test_kernel_csv(tmp_path, standard_matrices):
    kernel_to_csv(standard_matrices[0.60], tmp_path / "m.csv")
    back = np.loadtxt(tmp_path / "m.csv", delimiter=",")
    np.testing.assert_array_equal(back, standard_matrices[0.60])


def test_grid_mismatch_rejected(params, grid):
    other = hg_basis(2, TimeGrid.centered(0.25e-9, 2048))
    with pytest.raises(ValueError):
        crosstalk_matrix(hg_basis(2, grid), other, 0.6, params)
