'''
Independent (uncoordinated) optimization: every operator fixes a boundary
condition and solves alone.

The TS schedules against the assumed tie withdrawals, each DS solves with
its root voltage pinned to the assumption, and the TS then settles the
mismatch: it is re-dispatched against the DS-realized tie flows with the
interface voltage magnitudes held at the assumption. The settled TS cost
plus the DS costs is a feasible point of the coupled problem, so the
coordinated optimum can never be worse.
'''
import logging
import numpy as np
import pandas as pd

from .errors import ValidationError
from .nlp import PinnedProblem, kkt_error
from .opf import OpfProblem, area_net_load
from .pdipm import EPS, initial_state, solve_converged

logger = logging.getLogger(__name__)


class BoundaryAssumption:
    '''
    Predefined boundary condition per DS.

    Arguments:
        voltage (dict): ds_id -> (magnitude, angle in radians) at the root
        tie (dict): ds_id -> (P, Q) withdrawal by the TS
    '''
    def __init__(self, voltage, tie):
        self.voltage = {k: (float(v), float(a)) for k, (v, a) in voltage.items()}
        self.tie = {k: (float(p), float(q)) for k, (p, q) in tie.items()}

    def validate(self, net):
        if set(self.voltage) != set(net.ds) or set(self.tie) != set(net.ds):
            raise ValidationError('assumption must cover DSs {}'.format(
                sorted(net.ds)))
        buses = {ds_id: ts_bus for ts_bus, ds_id in net.tie_lines}
        for k, (vm, _) in self.voltage.items():
            bus = net.ts.bus(buses[k])
            if not bus.v_min <= vm <= bus.v_max:
                raise ValidationError(
                    'assumed voltage {} of DS {} outside [{}, {}]'.format(
                        vm, k, bus.v_min, bus.v_max))
        return self

    def root_point(self, ds_id):
        vm, angle = self.voltage[ds_id]
        return vm * np.cos(angle), vm * np.sin(angle)


def nominal_assumption(net, scenario, t=None):
    '''
    Root voltage 1.0 p.u. at angle 0 and tie flow equal to each DS's net
    load at t (the start of the horizon by default).
    '''
    t = scenario.horizon[0] if t is None else t
    voltage = {k: (1.0, 0.0) for k in net.ds}
    tie = {k: area_net_load(area, scenario, t) for k, area in net.ds.items()}
    return BoundaryAssumption(voltage, tie)


def from_coordinated(partition, state):
    '''
    Boundary values of a coordinated (merged global) state.
    '''
    voltage, tie = {}, {}
    for k, idx in partition.boundary.items():
        e, f, p, q = state.x[idx]
        voltage[k] = (float(np.hypot(e, f)), float(np.arctan2(f, e)))
        tie[k] = (float(p), float(q))
    return BoundaryAssumption(voltage, tie)


class IndependentResult:
    '''
    Outcome of the independent method at one time.

    Attributes:
        ts_schedule (PrimalDualState): TS solved against the assumed ties
        ts_settled (PrimalDualState): TS re-dispatched to the realized ties
        ds_states (dict): ds_id -> DS solution
        mismatch (dict): ds_id -> realized minus assumed (P, Q)
        scheduled_objective (float): TS schedule cost plus DS costs
        combined_objective (float): settled TS cost plus DS costs
    '''
    def __init__(self, t, ts_problem, ds_problems, ts_schedule, ts_settled,
                 ds_states, mismatch):
        self.t = t
        self.ts_problem = ts_problem
        self.ds_problems = ds_problems
        self.ts_schedule = ts_schedule
        self.ts_settled = ts_settled
        self.ds_states = ds_states
        self.mismatch = mismatch
        self.kkt_error = None

        ds_cost = sum(ds_problems[k].objective(s.x, t)
                      for k, s in ds_states.items())
        self.scheduled_objective = ts_problem.objective(ts_schedule.x, t) + \
            ds_cost
        self.combined_objective = ts_problem.objective(ts_settled.x, t) + \
            ds_cost

    def ds_voltages(self):
        return {k: self.ds_problems[k].voltage_magnitudes(s.x)
                for k, s in self.ds_states.items()}


def _solve(p, t, eps, solver_kwargs):
    return solve_converged(p, t, initial_state(p, t), eps=eps, **solver_kwargs)


def independent_solve(net, scenario, t, assumption=None, eps=EPS,
                      **solver_kwargs):
    '''
    Independent optimization at time t.

    Arguments:
        net (Network): coupled network
        scenario (Scenario): parameters
        t (float): time
        assumption (BoundaryAssumption): nominal by default
        eps (float): tolerance of every agent solve

    Returns:
        IndependentResult
    '''
    if assumption is None:
        assumption = nominal_assumption(net, scenario)
    assumption.validate(net)

    tied = {ds_id: ts_bus for ts_bus, ds_id in net.tie_lines}
    ts = OpfProblem(net.ts, scenario,
                    ties=[(k, tied[k], net.ds[k]) for k in sorted(tied)])

    fixed = {}
    for k in sorted(net.ds):
        p, q = ts.tie_index[k]
        fixed[p], fixed[q] = assumption.tie[k]
    pinned = PinnedProblem(ts, fixed)
    ts_schedule = _solve(pinned, t, eps, solver_kwargs)
    errors = [kkt_error(pinned, ts_schedule, t)]

    ds_problems, ds_states, realized, mismatch = {}, {}, {}, {}
    for k, area in sorted(net.ds.items()):
        ds = OpfProblem(area, scenario, boundary_root=True)
        e_b, f_b, p_b, q_b = ds.boundary_indices()
        e0, f0 = assumption.root_point(k)
        pinned = PinnedProblem(ds, {e_b: e0, f_b: f0})
        s = _solve(pinned, t, eps, solver_kwargs)
        errors.append(kkt_error(pinned, s, t))
        ds_problems[k] = ds
        ds_states[k] = s
        realized[k] = (s.x[p_b], s.x[q_b])
        mismatch[k] = (realized[k][0] - assumption.tie[k][0],
                       realized[k][1] - assumption.tie[k][1])
        logger.info('DS %d: tie mismatch P %.4g Q %.4g', k, *mismatch[k])

    fixed, magnitudes = {}, []
    for k in sorted(net.ds):
        p, q = ts.tie_index[k]
        fixed[p], fixed[q] = realized[k]
        e_b, f_b = ts.boundary_indices(k)[:2]
        magnitudes.append((e_b, f_b, assumption.voltage[k][0]))
    pinned = PinnedProblem(ts, fixed, magnitudes)
    ts_settled = _solve(pinned, t, eps, solver_kwargs)
    errors.append(kkt_error(pinned, ts_settled, t))

    result = IndependentResult(t, ts, ds_problems, ts_schedule, ts_settled,
                               ds_states, mismatch)
    result.kkt_error = max(errors)
    return result


def voltage_profile_frame(profiles):
    '''
    Long table of DS voltage magnitudes.

    Arguments:
        profiles (dict): method -> {ds_id: {bus id: magnitude}}

    Returns:
        pandas.DataFrame with columns method, ds_id, bus, vm
    '''
    rows = [(method, k, bus, vm)
            for method, by_ds in profiles.items()
            for k, buses in sorted(by_ds.items())
            for bus, vm in sorted(buses.items())]
    return pd.DataFrame(rows, columns=['method', 'ds_id', 'bus', 'vm'])


def coordinated_voltages(partition, state):
    'DS voltage magnitudes of a merged coordinated state.'
    out = {}
    for k, p in partition.ds_problems.items():
        out[k] = p.voltage_magnitudes(state.x[partition.ds_maps[k]])
    return out
