import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import eigenlearn as el
from conftest import random_spin_params
from oracles import eigvals_power_deflation


class TestDiagonalize:
    def test_diagonal_input(self):
        H = np.diag([3.0, 1, 1, -1, 1, -1, -1, -3])
        sp = el.diagonalize(H)
        np.testing.assert_array_equal(sp.energies, [-3, -1, -1, -1, 1, 1, 1, 3])
        # vectors are a signed permutation of identity columns
        assert np.allclose(np.abs(sp.vectors).sum(axis=0), 1.0)
        assert np.allclose(np.abs(sp.vectors).max(axis=0), 1.0)
        assert sp.L == 3

    def test_single_sigma_x(self):
        sp = el.diagonalize(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(sp.energies, [-1.0, 1.0])
        inv_sqrt2 = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(sp.vectors[:, 0], [inv_sqrt2, -inv_sqrt2])
        np.testing.assert_allclose(sp.vectors[:, 1], [inv_sqrt2, inv_sqrt2])

    def test_l6_dataset_matches_power_deflation_oracle(self, dataset_hamiltonian_l6):
        _, H = dataset_hamiltonian_l6
        sp = el.diagonalize(H)
        oracle = eigvals_power_deflation(H, tol=1e-10)
        assert np.abs(sp.energies - oracle).max() <= 1e-7

    def test_determinism(self, dataset_hamiltonian_l6):
        _, H = dataset_hamiltonian_l6
        a = el.diagonalize(H.copy())
        b = el.diagonalize(H.copy())
        assert np.array_equal(a.energies, b.energies)
        assert np.array_equal(a.vectors, b.vectors)

    def test_errors(self):
        with pytest.raises(ValueError):
            el.diagonalize(np.array([[np.inf, 0.0], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            el.diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(ValueError):
            el.diagonalize(np.eye(3))


class TestGaugeFix:
    def test_sign_flip(self):
        out = el.fix_gauge(np.array([[0.0], [-1.0], [0.0]]))
        np.testing.assert_array_equal(out[:, 0], [0.0, 1.0, 0.0])

    def test_already_positive_unchanged(self):
        col = np.array([[0.8], [-0.6]])
        np.testing.assert_array_equal(el.fix_gauge(col), col)

    def test_tie_breaks_to_lowest_row(self):
        out = el.fix_gauge(np.array([[-0.5], [0.5]]) * np.sqrt(2.0))
        # both entries have equal magnitude; row 0 decides the sign
        assert out[0, 0] > 0

    @given(st.integers(min_value=0, max_value=2 ** 31))
    @settings(max_examples=15, deadline=None)
    def test_idempotent_on_random_orthogonal(self, seed):
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        once = el.fix_gauge(q)
        np.testing.assert_array_equal(el.fix_gauge(once), once)

    def test_zero_column_rejected(self):
        with pytest.raises(ValueError):
            el.fix_gauge(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestMeanEnergyIndex:
    def test_symmetric_spectrum_tie(self):
        H = np.diag([3.0, 1, 1, -1, 1, -1, -1, -3])
        sp = el.diagonalize(H)
        assert el.mean_energy_index(sp, H) == 2

    def test_simple_case(self):
        # build an explicit spectrum: energies (0, 1, 2), trace/D = 1
        sp = el.Spectrum(energies=np.array([0.0, 1.0, 2.0]), vectors=np.eye(3), L=0)
        H = np.diag([0.0, 1.0, 2.0])
        assert el.mean_energy_index(sp, H) == 2

    def test_matches_recomputed_argmin(self, dataset_hamiltonian_l6):
        _, H = dataset_hamiltonian_l6
        sp = el.diagonalize(H)
        e_av = sp.energies.sum() / sp.dim  # trace equals the eigenvalue sum
        expected = int(np.argmin(np.abs(sp.energies - e_av))) + 1
        assert el.mean_energy_index(sp, H) == expected


class TestSpectrumInvariants:
    @pytest.mark.parametrize("L,seed", [(3, 0), (4, 1), (5, 2), (6, 3)])
    def test_trace_orthonormality_residual(self, L, seed):
        p = random_spin_params(np.random.default_rng(seed), L)
        H = el.build_hamiltonian(p)
        sp = el.diagonalize(H)
        tr = np.trace(H)
        assert abs(tr - sp.energies.sum()) <= 1e-8 * max(1.0, abs(tr))
        gram = sp.vectors.T @ sp.vectors
        assert np.abs(gram - np.eye(sp.dim)).max() <= 1e-9
        resid = H @ sp.vectors - sp.vectors * sp.energies
        scale = np.maximum(1.0, np.abs(sp.energies))
        assert (np.linalg.norm(resid, axis=0) / scale).max() <= 1e-8
        assert np.all(np.diff(sp.energies) >= 0)

    def test_gauge_convention(self, spectrum_l6):
        lead = np.argmax(np.abs(spectrum_l6.vectors), axis=0)
        picked = spectrum_l6.vectors[lead, np.arange(spectrum_l6.dim)]
        assert np.all(picked > 0)


def test_near_degenerate_pairs_detection():
    energies = np.array([0.0, 1e-12, 1.0, 2.0])
    assert el.near_degenerate_pairs(energies) == [(1, 2)]
    assert el.near_degenerate_pairs(np.array([0.0, 1.0])) == []
