import os
import sys
from pathlib import Path

# Pin BLAS to one thread before numpy loads anywhere: keeps worker processes
# from oversubscribing the machine and makes in-process runs reproducible.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest

import eigenlearn as el
from eigenlearn.protocols import ProtocolKind, SpectralProtocol


@pytest.fixture(scope="session")
def dataset_hamiltonian_l6():
    """The L=6 chain at J1=0.4 with standard fixed couplings and the
    symmetry-breaking perturbations applied, as used for dataset samples."""
    params = el.apply_symmetry_breaking(el.chain_params(6, J1=0.4))
    return params, el.build_hamiltonian(params)


@pytest.fixture(scope="session")
def spectrum_l6(dataset_hamiltonian_l6):
    _, H = dataset_hamiltonian_l6
    return el.diagonalize(H)


@pytest.fixture(scope="session")
def latent_j1_l6():
    return el.LatentSpec(free=("J1",), fixed_base=el.chain_params(6))


@pytest.fixture(scope="session")
def small_dataset(latent_j1_l6):
    """60 low-protocol samples at L=6, M=5; shared by training-level tests."""
    thetas = el.sample_parameters([((-2.0, 2.0),)], 60, "uniform", seed=42)
    proto = SpectralProtocol(kind=ProtocolKind.LOW, M=5)
    return el.generate_dataset(thetas, latent_j1_l6, proto, seed=2)


def random_spin_params(rng: np.random.Generator, L: int) -> el.SpinChainParams:
    return el.SpinChainParams(
        L=L,
        J1=float(rng.uniform(-2, 2)),
        J2=float(rng.uniform(-2, 2)),
        Delta=float(rng.uniform(-1.5, 1.5)),
        hz=rng.uniform(-1, 1, size=L),
        gx=rng.uniform(-1, 1, size=L),
    )
