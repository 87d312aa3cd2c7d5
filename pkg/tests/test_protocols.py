import numpy as np
import pytest

import eigenlearn as el
from eigenlearn.protocols import ProtocolKind, SpectralProtocol


def _dummy_spectrum(dim: int) -> el.Spectrum:
    return el.Spectrum(energies=np.arange(dim, dtype=float), vectors=np.eye(dim), L=0)


class TestSelectIndices:
    def test_low_takes_first_m(self):
        sp = _dummy_spectrum(64)
        idx = el.select_indices(SpectralProtocol(kind=ProtocolKind.LOW, M=5), sp)
        np.testing.assert_array_equal(idx, [1, 2, 3, 4, 5])

    def test_mid_odd_window(self):
        sp = _dummy_spectrum(64)
        idx = el.select_indices(SpectralProtocol(kind=ProtocolKind.MID, M=3), sp, m_av=32)
        np.testing.assert_array_equal(idx, [31, 32, 33])

    def test_mid_even_window_drops_top(self):
        sp = _dummy_spectrum(64)
        idx = el.select_indices(SpectralProtocol(kind=ProtocolKind.MID, M=4), sp, m_av=32)
        np.testing.assert_array_equal(idx, [30, 31, 32, 33])

    def test_single(self):
        sp = _dummy_spectrum(64)
        idx = el.select_indices(SpectralProtocol(kind=ProtocolKind.SINGLE, m_index=17), sp)
        np.testing.assert_array_equal(idx, [17])

    def test_exhaustive_window_properties(self):
        # every (M, m_av) combination on a small spectrum: exact length,
        # sortedness, range, and centering when no clamping is active
        dim = 16
        sp = _dummy_spectrum(dim)
        for M in range(1, dim + 1):
            for m_av in range(1, dim + 1):
                idx = el.select_indices(SpectralProtocol(kind=ProtocolKind.MID, M=M), sp, m_av=m_av)
                assert idx.shape == (M,)
                assert np.all(np.diff(idx) == 1)
                assert idx[0] >= 1 and idx[-1] <= dim
                lo = m_av - M // 2
                if lo >= 1 and lo + M - 1 <= dim:
                    assert idx[0] == lo
                    assert m_av in idx

    def test_oversized_requests_rejected(self):
        sp = _dummy_spectrum(8)
        with pytest.raises(ValueError):
            el.select_indices(SpectralProtocol(kind=ProtocolKind.LOW, M=9), sp)
        with pytest.raises(ValueError):
            el.select_indices(SpectralProtocol(kind=ProtocolKind.SINGLE, m_index=9), sp)

    def test_mid_requires_m_av(self):
        sp = _dummy_spectrum(8)
        with pytest.raises(ValueError):
            el.select_indices(SpectralProtocol(kind=ProtocolKind.MID, M=3), sp)


class TestStateBlock:
    def test_gather(self, spectrum_l6):
        block = el.build_state_block(spectrum_l6, [1, 2], [0.4])
        np.testing.assert_array_equal(block.psi[:, 0], spectrum_l6.vectors[:, 0])
        np.testing.assert_array_equal(block.psi[:, 1], spectrum_l6.vectors[:, 1])
        np.testing.assert_array_equal(block.energies, spectrum_l6.energies[:2])
        np.testing.assert_array_equal(block.indices, [1, 2])
        np.testing.assert_array_equal(block.theta_true, [0.4])

    def test_single_column(self, spectrum_l6):
        block = el.build_state_block(spectrum_l6, [7], [0.4])
        assert block.psi.shape == (64, 1)

    def test_orthonormality_post_gather(self, spectrum_l6):
        block = el.build_state_block(spectrum_l6, [1, 5, 9, 30], [0.4])
        gram = block.psi.T @ block.psi
        assert np.abs(gram - np.eye(4)).max() <= 1e-9

    def test_index_validation(self, spectrum_l6):
        with pytest.raises(ValueError):
            el.build_state_block(spectrum_l6, [0], [0.4])
        with pytest.raises(ValueError):
            el.build_state_block(spectrum_l6, [65], [0.4])
        with pytest.raises(ValueError):
            el.build_state_block(spectrum_l6, [], [0.4])


class TestProtocolValidation:
    def test_single_forces_one_state(self):
        p = SpectralProtocol(kind="single", m_index=5)
        assert p.n_states == 1
        assert p.label() == "single:m=5"

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            SpectralProtocol(kind=ProtocolKind.LOW, M=0)
        with pytest.raises(ValueError):
            SpectralProtocol(kind=ProtocolKind.SINGLE, m_index=0)
