"""Noise-free filtering and belief-space control for finite jump processes.

The hidden state is a controlled finite jump process; the observation is a
deterministic label of the state.  The package provides the exact filter,
its characterization as a piecewise-deterministic belief process, ground-
truth simulators for both representations, a belief-grid value-iteration
solver for the discounted control problem, and a verification battery
tying every formula to an independent computation.
"""
from .filtering import (b_op, big_lambda, flow, h_update, jump_update, run_filter,
                        vector_field)
from .grids import BeliefGrid, build_grid
from .model import (Belief, ModelSpec, dirac, face_states, load_model,
                    uniform_on_face, validate_model)
from .paths import FilterPath, PdmpPath, SignalPath, YPath
from .pdmp import jump_rate, obs_kernel, sample_sojourn, sample_transition, simulate_pdmp, survival
from .rngs import stream
from .signals import ConstantControl, derive_y, mc_cost, simulate_signal
from .solver import (FilterPolicyControl, StationaryPolicy, ValueField, bellman_const,
                     bellman_sl, lift_value, one_stage_cost, solve, value_iteration)
from .verify import CheckReport, expm_flow_oracle

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
