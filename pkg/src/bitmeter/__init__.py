"""Multi-stage sparse-recovery decoders on a lattice circuit, metered in bit-meters."""

from .bounds import BoundParams, BoundValue, lower_bound_theorem1, scaling_lower_bound
from .circuit import BitMeterLedger, CircuitLayout, Lattice, distance, layout_centralized, layout_distributed
from .decoder import DecodeResult, Multi, Singleton, Zero, ca_decode, clearing_stage, detect_singleton, sa_decode
from .encoder import EncodingMatrix, GroupPlan, build_matrix, encode, plan_ca_groups, plan_sa_groups
from .harness import ExperimentConfig, TrialRecord, compare_bound, fit_scaling, run_trial, sweep
from .signals import ErrorSpec, SparseSignal, block_error_flag, gen_combinatorial, gen_probabilistic, relative_error
from .stencil import StencilPartition, build_stencil, nld_fraction, scan_origins

__version__ = "0.1.0"
