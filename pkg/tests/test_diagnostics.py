import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import eigenlearn as el
from oracles import entropy_partial_trace

LN2 = np.log(2.0)


def _random_state(seed: int, dim: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


class TestEntanglementEntropy:
    def test_product_state(self):
        state = np.zeros(8)
        state[0] = 1.0
        assert el.entanglement_entropy(state, 3, 1) == 0.0

    def test_bell_state(self):
        state = np.zeros(4)
        state[0] = state[3] = 1.0 / np.sqrt(2.0)
        assert abs(el.entanglement_entropy(state, 2, 1) - LN2) <= 1e-9

    def test_ground_state_matches_partial_trace_oracle(self, spectrum_l6):
        gs = spectrum_l6.vectors[:, 0]
        mine = el.entanglement_entropy(gs, 6, 3)
        assert abs(mine - entropy_partial_trace(gs, 6, 3)) <= 1e-9

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_random_states_match_oracle(self, seed):
        state = _random_state(seed, 2 ** 5)
        for cut in (1, 2, 3, 4):
            assert abs(el.entanglement_entropy(state, 5, cut)
                       - entropy_partial_trace(state, 5, cut)) <= 1e-9

    def test_bipartition_symmetry(self, spectrum_l6):
        # For a pure state, the block {1..cut} and its complement carry the
        # same entropy; the complement side is evaluated through the
        # independent reduced-density route.
        for m in (0, 10, 40):
            state = spectrum_l6.vectors[:, m]
            for cut in (1, 2, 3):
                a = el.entanglement_entropy(state, 6, cut)
                psi = state.reshape(2 ** cut, 2 ** (6 - cut))
                rho_b = psi.T @ psi
                lam = np.linalg.eigvalsh(rho_b)
                lam = lam[lam > 1e-14]
                b = float(-np.sum(lam * np.log(lam)))
                assert abs(a - b) <= 1e-9

    def test_parity_symmetric_state_cut_reflection(self):
        # On a reflection-symmetric state the entropy is also symmetric in
        # the cut position itself.
        plus = np.full(2, 1.0 / np.sqrt(2.0))
        bell = np.zeros(4)
        bell[0] = bell[3] = 1.0 / np.sqrt(2.0)
        state = np.kron(plus, np.kron(bell, plus))  # sites 2,3 entangled
        assert abs(el.entanglement_entropy(state, 4, 1) - el.entanglement_entropy(state, 4, 3)) <= 1e-12

    @given(st.integers(min_value=0, max_value=2 ** 31), st.integers(min_value=1, max_value=3))
    @settings(max_examples=15, deadline=None)
    def test_entropy_bounds(self, seed, cut):
        state = _random_state(seed, 16)
        s = el.entanglement_entropy(state, 4, cut)
        assert -1e-12 <= s <= min(cut, 4 - cut) * LN2 + 1e-9

    def test_errors(self):
        with pytest.raises(ValueError):
            el.entanglement_entropy(np.ones(4), 2, 1)  # unnormalized
        with pytest.raises(ValueError):
            el.entanglement_entropy(_random_state(0, 4), 2, 2)  # cut out of range


class TestParticipationEntropy:
    def test_basis_state(self):
        state = np.zeros(8)
        state[5] = 1.0
        assert el.participation_entropy(state) == 0.0

    def test_uniform_state(self):
        dim = 32
        state = np.full(dim, 1.0 / np.sqrt(dim))
        assert abs(el.participation_entropy(state) - np.log(dim)) <= 1e-9

    def test_hand_computed_value(self):
        state = np.array([np.sqrt(0.5), np.sqrt(0.25), np.sqrt(0.25), 0.0])
        expected = 1.5 * LN2  # -0.5 ln 0.5 - 2 * 0.25 ln 0.25
        assert abs(el.participation_entropy(state) - expected) <= 1e-12

    @given(st.integers(min_value=0, max_value=2 ** 31))
    @settings(max_examples=15, deadline=None)
    def test_bounds(self, seed):
        state = _random_state(seed, 64)
        s = el.participation_entropy(state)
        assert -1e-12 <= s <= np.log(64) + 1e-9


class TestDensityOfStates:
    def test_uniform_spectrum(self):
        centers, counts = el.density_of_states(np.array([0.0, 1.0, 2.0, 3.0]), 2)
        np.testing.assert_array_equal(counts, [2, 2])
        np.testing.assert_allclose(centers, [0.25, 0.75])

    def test_single_bin(self):
        _, counts = el.density_of_states(np.linspace(-1, 1, 17), 1)
        np.testing.assert_array_equal(counts, [17])

    def test_counts_sum_to_dimension(self, spectrum_l6):
        _, counts = el.density_of_states(spectrum_l6.energies, 7)
        assert counts.sum() == spectrum_l6.dim

    def test_degenerate_spectrum_rejected(self):
        with pytest.raises(ValueError):
            el.density_of_states(np.zeros(4), 4)

    @pytest.mark.slow
    @pytest.mark.parametrize("j1", [-0.4, 0.4])
    def test_l12_bulk_peak_is_central(self, j1):
        # L=12, Delta=0.5 chain: the level density peaks near the middle of
        # the rescaled band.
        params = el.apply_symmetry_breaking(el.chain_params(12, J1=j1, Delta=0.5))
        energies = np.linalg.eigvalsh(el.build_hamiltonian(params))
        centers, counts = el.density_of_states(energies, 64)
        peak = centers[np.argmax(counts)]
        assert 0.35 <= peak <= 0.65


class TestFidelity:
    def test_self_overlap(self):
        v = _random_state(7, 16)
        assert abs(el.fidelity(v, v) - 1.0) <= 1e-12

    def test_sign_gauge_irrelevant(self):
        v = _random_state(8, 16)
        assert abs(el.fidelity(v, -v) - 1.0) <= 1e-12

    def test_analytic_overlap(self):
        e1 = np.zeros(4)
        e1[0] = 1.0
        mix = np.zeros(4)
        mix[0] = mix[1] = 1.0 / np.sqrt(2.0)
        assert abs(el.fidelity(e1, mix) - 0.5) <= 1e-12


class TestSpectrumDiagnostics:
    def test_record_shapes_and_ranges(self, spectrum_l6):
        rec = el.spectrum_diagnostics(spectrum_l6)
        dim = spectrum_l6.dim
        for arr in (rec.index_norm, rec.energy_rescaled, rec.svn_norm, rec.spart_norm):
            assert arr.shape == (dim,)
        assert np.all(np.diff(rec.index_norm) > 0)
        assert rec.index_norm[0] > 0 and rec.index_norm[-1] == 1.0
        assert rec.energy_rescaled[0] == 0.0 and rec.energy_rescaled[-1] == 1.0
        for arr in (rec.svn_norm, rec.spart_norm):
            assert arr.min() >= 0.0 and arr.max() <= 1.0 + 1e-9

    def test_low_energy_entropy_suppression_l8(self):
        # smaller-scale version of the low-sector suppression seen at L=10
        params = el.apply_symmetry_breaking(el.chain_params(8, J1=0.4))
        rec = el.spectrum_diagnostics(el.diagonalize(el.build_hamiltonian(params)))
        dim = rec.svn_norm.shape[0]
        low = rec.svn_norm[: max(dim // 20, 3)]
        mid_lo = int(dim * 0.45)
        mid = rec.svn_norm[mid_lo: mid_lo + max(dim // 10, 3)]
        assert low.mean() < mid.mean()

    def test_csv_roundtrip(self, spectrum_l6, tmp_path):
        rec = el.spectrum_diagnostics(spectrum_l6)
        path = tmp_path / "diag.csv"
        el.write_diagnostics_csv(rec, path)
        import csv

        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == spectrum_l6.dim
        assert float(rows[0]["index_norm"]) == rec.index_norm[0]
        assert float(rows[-1]["svn_norm"]) == rec.svn_norm[-1]
