'''
Online decentralized tracking of time-varying AC optimal power flow for
coupled transmission and distribution grids.
'''
from .errors import (GridTrackError, ValidationError, CaseError, ScenarioError,
                     DimensionError, SolverError, NotInteriorError,
                     SingularSystemError, MaxIterationsError, ProtocolError)
from .grid import (Area, Branch, Bus, Generator, GridVariables, Network,
                   ResUnit, load_case, parse_case, power_mismatch)
from .scenario import (Profile, Scenario, hermite_eval, load_scenario,
                       make_synthetic, sample_params, save_scenario)
from .nlp import (NlpProblem, PrimalDualState, kkt_bundle, kkt_error,
                  kkt_residual, kkt_time_derivative)
from .opf import OpfProblem, build_nlp
from .pdipm import (Increment, assemble_reduced, full_kkt_solve,
                    initial_state, solve_converged, solve_correction)
from .tracker import TrackerConfig, Trajectory, run_tracker, track_step
from .coordination import (Coordinator, decentralized_track_step, ds_condense,
                           ds_recover, partition_network, ts_accumulate_solve,
                           verify_equivalence)
from .baselines import BoundaryAssumption, independent_solve
from .harness import RunRecord, compute_metrics, run_mode
