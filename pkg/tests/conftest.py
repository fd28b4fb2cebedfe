"""Shared helpers: small substrates and hand-built single-neuron rigs."""

import numpy as np
import pytest

from neurodream.encoding import PopulationCodeConfig
from neurodream.substrate import (
    Connectivity,
    NeuronParams,
    Substrate,
    SubstrateConfig,
    build_substrate,
)


@pytest.fixture
def enc_cfg():
    return PopulationCodeConfig()


@pytest.fixture
def small_substrate():
    """A 64-neuron agent substrate at a spiking operating point."""
    cfg = SubstrateConfig(n_neurons=64)
    sub = build_substrate(cfg, 1234)
    sub.set_core_efficacy(1.0)
    return sub


def single_neuron_substrate(efficacy: float, mismatch_cv: float = 0.0) -> Substrate:
    """One neuron fed by one generator through a single parallel-1 edge."""
    cfg = SubstrateConfig(
        n_neurons=1,
        n_state_generators=8,
        mismatch_cv=mismatch_cv,
        base_params=NeuronParams(core_efficacy=efficacy),
    )
    conn = Connectivity(
        pre=np.array([0], dtype=np.int64),
        post=np.array([0], dtype=np.int64),
        parallel=np.array([1], dtype=np.int64),
    )
    ones = np.ones(1)
    return Substrate(cfg, conn, ones, ones, ones)


def uniform_substrate(n: int, efficacy: float, n_generators: int = 8) -> Substrate:
    """Every neuron wired identically (all generators, parallel 1), no mismatch."""
    cfg = SubstrateConfig(
        n_neurons=n,
        n_state_generators=n_generators,
        mismatch_cv=0.0,
        base_params=NeuronParams(core_efficacy=efficacy),
    )
    pre = np.tile(np.arange(n_generators, dtype=np.int64), n)
    post = np.repeat(np.arange(n, dtype=np.int64), n_generators)
    parallel = np.ones(n * n_generators, dtype=np.int64)
    ones = np.ones(n)
    return Substrate(cfg, Connectivity(pre, post, parallel), ones, ones, ones)
