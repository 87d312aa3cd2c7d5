"""Learnability of spin-chain couplings from many-body eigenstates.

The package builds eigenstate datasets of a J1-J2 spin-1/2 chain family
by exact diagonalization, trains a small permutation-invariant encoder
with a physics-informed Rayleigh loss to infer the latent couplings, and
ships the experiment suites (spectral sweeps, state-count and capacity
scans, generalization holes, learnability gaps) behind a deterministic
command-line interface.
"""

from .spin_chain import (
    SpinChainParams, LatentSpec, chain_params, embed_pauli, coupling_term,
    build_hamiltonian, apply_symmetry_breaking, basis_operators,
)
from .eigensolver import Spectrum, diagonalize, fix_gauge, mean_energy_index, near_degenerate_pairs
from .diagnostics import (
    DiagnosticsRecord, entanglement_entropy, participation_entropy,
    density_of_states, fidelity, spectrum_diagnostics, write_diagnostics_csv,
)
from .protocols import ProtocolKind, SpectralProtocol, StateBlock, select_indices, build_state_block
from .encoder import (
    EncoderParams, ForwardCache, init_params, num_parameters, forward, forward_batch,
    backward, backward_batch, save_params, load_params,
)
from .loss import (
    LossConfig, ProjectedBasis, project_basis, residual_matrix, rayleigh_loss,
    theta_loss, spectral_error,
)
from .training import (
    Dataset, DatasetSample, TrainConfig, AdamState, History, TrainingDiverged,
    derive_seed, sample_parameters, generate_dataset, split_dataset,
    init_adam_state, adam_update, run_training, evaluate,
    save_dataset, load_dataset, write_history_csv,
)

__version__ = "0.1.0"
