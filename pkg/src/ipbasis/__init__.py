"""Basis-network PINNs for fast inverse problems on parametric differential equations.

A shared body network is trained once (offline) over many sampled
parameter values with one linear readout per sample.  New inverse problems
(online) then only fit a fresh readout plus parameter estimates against
precomputed body features and their hyper-dual input derivatives.
"""
__version__ = "0.1.0"

from .hyperdual import HyperDual, HyperDualBatch, hd_seed, hd_tanh  # noqa: F401
from .network import (  # noqa: F401
    Checkpoint, MlpParams, NetworkArch, ReadoutLayer, forward, forward_basis, forward_basis_hd,
    init_network, init_readout, load_checkpoint, save_checkpoint,
)
from .problems import ProblemSpec, WeightSchedule, builtin_specs, get_spec, sample_parameters  # noqa: F401
from .offline import OfflineConfig, offline_train, pinn_loss  # noqa: F401
from .online import InverseQuery, InverseResult, online_infer, online_infer_upinn, precompute_basis  # noqa: F401
