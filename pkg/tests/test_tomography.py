import json

import numpy as np
import pytest

from ramantm.grid import hg_basis
from ramantm.kernel import build_storage_kernel, svd
from ramantm.memory import CouplingSpec
from ramantm.tomography import (
    EfficiencyDataset,
    ProcessMatrix,
    fidelity,
    forward_efficiency,
    generate_mubs,
    ideal_filter,
    is_prime,
    kappa_statistics,
    parameter_count,
    random_control_ensemble,
    reconstruct,
    reduced_process,
    simulate_mub_dataset,
    single_modeness,
    synthetic_dataset,
)


def random_process(dim, rng, rank=None):
    n = dim * dim
    k = rank or n
    g = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    p = g @ g.conj().T
    return p * rng.uniform(0.2, 1.0) * dim / np.linalg.eigvalsh(p)[-1]


@pytest.mark.parametrize("dim", [2, 3, 5, 7])
def test_mub_unbiasedness(dim):
    m = generate_mubs(dim)
    assert m.bases.shape == (dim + 1, dim, dim)
    assert m.max_unbiasedness_error() < 1e-10


def test_mub_rejects_composite():
    assert not is_prime(4) and is_prime(5) and not is_prime(1)
    with pytest.raises(ValueError):
        generate_mubs(4)


def test_ideal_filter_passes_matched_states():
    p = ideal_filter(5, 0.3)
    rng = np.random.default_rng(2)
    for _ in range(5):
        s = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        s /= np.linalg.norm(s)
        c = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        c /= np.linalg.norm(c)
        assert forward_efficiency(p, s, s) == pytest.approx(0.3)
        assert forward_efficiency(p, s, c) == pytest.approx(0.3 * abs(np.vdot(c, s)) ** 2)


def test_process_matrix_validation():
    with pytest.raises(ValueError):
        ProcessMatrix(2, np.zeros((3, 3)))
    bad = np.zeros((4, 4), complex)
    bad[0, 1] = 1.0
    with pytest.raises(ValueError):
        ProcessMatrix(2, bad)
    with pytest.raises(ValueError):
        ProcessMatrix(2, -np.eye(4))
    with pytest.raises(ValueError):
        ProcessMatrix(2, 3 * np.eye(4))
    with pytest.raises(ValueError):
        ProcessMatrix(2, np.eye(4)).normalized()


def test_process_json_roundtrip():
    p = ProcessMatrix(3, random_process(3, np.random.default_rng(0)), 0.4)
    q = ProcessMatrix.from_json(json.loads(json.dumps(p.to_json())))
    np.testing.assert_array_equal(q.matrix, p.matrix)
    assert q.eta_stor == 0.4
    np.testing.assert_allclose(q.normalized(), p.matrix / 0.4)


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_synthetic_recovery(dim):
    rng = np.random.default_rng(100 + dim)
    mubs = generate_mubs(dim)
    for _ in range(3):
        p = random_process(dim, rng)
        rec = reconstruct(synthetic_dataset(p, mubs), dim)
        assert rec.converged
        assert fidelity(rec.process, p) >= 0.999


def test_ideal_filter_recovered_exactly():
    mubs = generate_mubs(5)
    rec = reconstruct(synthetic_dataset(ideal_filter(5, 0.3), mubs), 5)
    assert fidelity(rec.process, ideal_filter(5)) > 1 - 1e-6
    assert rec.process.trace == pytest.approx(1.5, rel=1e-9)


def test_trace_preserving_mode():
    d = 3
    rng = np.random.default_rng(9)
    p = random_process(d, rng)
    rec = reconstruct(synthetic_dataset(p, generate_mubs(d)), d, trace_preserving=True)
    red = np.einsum("iaib->ab", rec.process.matrix.reshape(d, d, d, d))
    np.testing.assert_allclose(red, np.eye(d) * rec.process.trace / d, atol=1e-8)


@pytest.mark.parametrize("dim", [2, 3, 5])
def test_parameter_count(dim):
    assert parameter_count(dim) == dim**4 - dim**2
    assert parameter_count(dim, trace_preserving=False) == dim**4 - 1


def test_incomplete_dataset_rejected():
    mubs = generate_mubs(3)
    full = synthetic_dataset(ideal_filter(3), mubs)
    keep = slice(0, 20)
    part = EfficiencyDataset(3, full.signal_states[keep], full.control_states[keep], full.eta[keep], full.sigma[keep], full.labels[keep])
    with pytest.raises(ValueError):
        reconstruct(part, 3)


def test_fidelity_properties():
    rng = np.random.default_rng(4)
    a, b = random_process(3, rng), random_process(3, rng, rank=2)
    assert fidelity(a, a) == pytest.approx(1.0, abs=1e-9)
    assert fidelity(a, b) == pytest.approx(fidelity(b, a), abs=1e-9)
    q, _ = np.linalg.qr(rng.standard_normal((9, 9)) + 1j * rng.standard_normal((9, 9)))
    assert fidelity(q @ a @ q.conj().T, q @ b @ q.conj().T) == pytest.approx(fidelity(a, b), abs=1e-7)
    assert 0.0 <= fidelity(a, b) <= 1.0


def test_single_modeness():
    c = random_control_ensemble(5, 3, seed=1)
    for v in c:
        assert single_modeness(ideal_filter(5), v) == pytest.approx(1.0)
    assert single_modeness(np.zeros((25, 25)), c[0]) is None
    mixed = np.eye(25, dtype=complex) / 5
    assert single_modeness(mixed, c[0]) == pytest.approx(0.2)
    assert reduced_process(mixed, c[0]).shape == (5, 5)


def test_random_controls_seeded():
    a = random_control_ensemble(5, 10, seed=3)
    np.testing.assert_array_equal(a, random_control_ensemble(5, 10, seed=3))
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0)
    with pytest.raises(ValueError):
        random_control_ensemble(5, 0)


def test_dataset_csv_roundtrip(tmp_path):
    mubs = generate_mubs(3)
    ds = synthetic_dataset(random_process(3, np.random.default_rng(5)), mubs)
    ds.to_csv(tmp_path / "d.csv")
    back = EfficiencyDataset.from_csv(tmp_path / "d.csv", 3)
    np.testing.assert_array_equal(back.eta, ds.eta)
    np.testing.assert_allclose(back.design(), ds.design())


# ------------------------------------------------------- simulated memory


@pytest.fixture(scope="module")
def simulated_06(params):
    mubs = generate_mubs(5)
    data = simulate_mub_dataset(0.60, params, mubs, seed=0)
    return data, reconstruct(data, 5)


def test_simulated_dataset_shape(simulated_06):
    data, _ = simulated_06
    assert len(data) == 30 * 30
    assert data.matched_efficiency() == pytest.approx(0.300, abs=0.01)


def test_simulated_low_coupling_is_filter_like(simulated_06):
    _, rec = simulated_06
    assert rec.converged
    assert fidelity(rec.process, ideal_filter(5)) > 0.95


def test_tomographic_kappa_agrees_with_kernel_svd(simulated_06, params, grid):
    _, rec = simulated_06
    k_tomo, _ = kappa_statistics(rec.process, 5, 200, seed=0)
    modes = hg_basis(5, grid)
    dec = svd(build_storage_kernel(CouplingSpec(0.60, modes[0]), params, modes))
    assert abs(k_tomo - dec.single_modeness) < 0.02


def test_noise_robustness(params):
    mubs = generate_mubs(3)
    rec = reconstruct(simulate_mub_dataset(0.60, params, mubs, seed=0), 3)
    noisy = simulate_mub_dataset(0.60, params, mubs, noise=0.01, seed=11)
    rec_noisy = reconstruct(noisy, 3)
    assert fidelity(rec_noisy.process, rec.process) >= 0.98


def test_count_noise_dataset(params):
    d = simulate_mub_dataset(0.60, params, generate_mubs(2), counts=100_000, seed=3)
    assert np.all((d.eta >= 0) & (d.eta <= 1))
    assert np.all(d.sigma > 0)
    d2 = simulate_mub_dataset(0.60, params, generate_mubs(2), counts=100_000, seed=3)
    np.testing.assert_array_equal(d.eta, d2.eta)
