'''
Decentralized coordination of one transmission agent and several
distribution agents.

Each round every DS condenses its reduced correction system into a
quadratic surrogate over its boundary increment v = [de_b, df_b, dP_tie,
dQ_tie] and sends it up; the TS adds the surrogates into its own system,
solves, and sends each DS its boundary increment; each DS back-substitutes
into its cached factorization. Increments are those of the centralized
reduced system, which a dense oracle verifies.
'''
import logging
import numpy as np
import scipy.sparse as sp
import time

from collections import Counter

from .errors import (MaxIterationsError, ProtocolError, SingularSystemError,
                     ValidationError)
from .messages import (IncrementDown, MessageBus, QuadraticSurrogate,
                       SurrogateUp, INCREMENT_DOWN, SURROGATE_UP)
from .nlp import PrimalDualState, StackedProblem, kkt_bundle, kkt_error
from .opf import OpfProblem
from .pdipm import (BorderedSolver, Increment, apply_increment,
                    assemble_reduced, barrier_update, full_kkt_solve,
                    initial_state, step_lengths, SETTLE_TOL)
from .tracker import (TrackerConfig, Trajectory, _progress, sample_times,
                      update_barrier)

logger = logging.getLogger(__name__)

BOUNDARY_SIZE = 4


class Partition:
    '''
    Variable partition of a coupled network.

    Global variables are [x_T; x_I,1; x_I,2; ...]: the whole TS vector,
    then the independent variables of each DS in ascending id. The boundary
    of DS k is a set of TS variables; the DS's last four local variables
    are its copy of them.

    Attributes:
        ts_problem (OpfProblem): TS problem with tie variables
        ds_problems (dict): ds_id -> OpfProblem coupled at its root
        ts_map (array): global index of each TS local variable (E_T)
        ds_maps (dict): ds_id -> global index of each DS local variable (E_k)
        ts_boundary (dict): ds_id -> TS local indices of the boundary
        ds_boundary (dict): ds_id -> DS local indices of the boundary
        boundary (dict): ds_id -> global indices of the boundary
        centralized (StackedProblem): the coupled problem
    '''
    def __init__(self, ts_problem, ds_problems):
        self.ts_problem = ts_problem
        self.ds_problems = dict(sorted(ds_problems.items()))
        self.ds_ids = list(self.ds_problems)
        self.R_T = ts_problem.n
        self.ts_map = np.arange(self.R_T)
        self.ds_maps = {}
        self.ts_boundary = {}
        self.ds_boundary = {}
        self.boundary = {}
        self.R_k = {}

        offset = self.R_T
        for k, p in self.ds_problems.items():
            ts_b = ts_problem.boundary_indices(k)
            ds_b = p.boundary_indices()
            n_internal = p.n - BOUNDARY_SIZE
            if not np.array_equal(ds_b, np.arange(n_internal, p.n)):
                raise ValidationError(
                    'DS {} boundary must close its variable vector'.format(k))
            self.ts_boundary[k] = ts_b
            self.ds_boundary[k] = ds_b
            self.boundary[k] = self.ts_map[ts_b]
            self.ds_maps[k] = np.concatenate(
                [offset + np.arange(n_internal), self.ts_map[ts_b]])
            self.R_k[k] = p.n
            offset += n_internal
        self.R = offset

        boundary = np.concatenate(
            [self.boundary[k] for k in self.ds_ids] + [np.zeros(0, dtype=int)])
        if np.unique(boundary).size != boundary.size:
            raise ValidationError('boundary sets of distinct DSs overlap')
        self.ts_independent = np.setdiff1d(self.ts_map, boundary)
        self.ds_independent = {k: self.ds_maps[k][:-BOUNDARY_SIZE]
                               for k in self.ds_ids}

        self.centralized = StackedProblem(
            [(ts_problem, self.ts_map)] +
            [(self.ds_problems[k], self.ds_maps[k]) for k in self.ds_ids],
            self.R)


def partition_network(net, scenario):
    '''
    Partition a coupled network into a TS problem and one problem per DS.

    Returns:
        Partition
    '''
    tied = {}
    for ts_bus, ds_id in net.tie_lines:
        if ds_id in tied:
            raise ValidationError('DS {} has more than one tie line'.format(
                ds_id))
        tied[ds_id] = ts_bus
    for ds_id in net.ds:
        if ds_id not in tied:
            raise ValidationError('DS {} has no tie line'.format(ds_id))

    ts_problem = OpfProblem(
        net.ts, scenario,
        ties=[(k, tied[k], net.ds[k]) for k in sorted(tied)])
    ds_problems = {k: OpfProblem(net.ds[k], scenario, boundary_root=True)
                   for k in sorted(net.ds)}

    return Partition(ts_problem, ds_problems)


class DsAgent:
    '''
    Distribution agent: condenses its system and recovers its increment.
    The factorization of the independent block is cached between the two
    calls of one sample and dropped after recovery.
    '''
    def __init__(self, ds_id, problem, solver=None):
        self.ds_id = ds_id
        self.problem = problem
        self.boundary = problem.boundary_indices()
        self.internal = np.arange(problem.n - self.boundary.size)
        if problem.m_eq > self.internal.size:
            raise SingularSystemError(
                'DS {}: {} equality rows but only {} internal variables, '
                'the independent block cannot be condensed'.format(
                    ds_id, problem.m_eq, self.internal.size))
        self.solver = solver or BorderedSolver()
        self.state = None
        self._cache = None
        self._last_sample = None
        self._recovered = None

    def condense(self, t, alpha, prediction, sample_index):
        if self._last_sample is not None and sample_index <= self._last_sample:
            raise ProtocolError('DS {}: sample index {} does not increase'
                                .format(self.ds_id, sample_index))
        p, s = self.problem, self.state
        bundle = kkt_bundle(p, s, t, prediction=prediction)
        rs = assemble_reduced(p, s, t, bundle, alpha)

        I, B = self.internal, self.boundary
        H = rs.H.tocsr()
        G = rs.G.tocsc()
        H_I = H[I]
        factor = self.solver.factorize(H_I[:, I], G[:, I], regularize=False)
        C = sp.vstack([H_I[:, B], -G[:, B]]).toarray()
        r_I = np.concatenate([rs.R_x[I], rs.R_y])
        a = factor.solve(r_I)
        Bm = factor.solve(C)

        j2 = H[B][:, B].toarray() - C.T @ Bm
        j2 = 0.5 * (j2 + j2.T)
        j1 = C.T @ a - rs.R_x[B]
        j0 = -0.5 * float(r_I @ a)

        self._cache = (sample_index, rs, a, Bm)
        self._last_sample = sample_index

        return QuadraticSurrogate(self.ds_id, j2, j1, j0)

    def recover(self, dxb, sample_index):
        if self._cache is None:
            if self._recovered == sample_index:
                raise ProtocolError('DS {}: sample {} already recovered'.format(
                    self.ds_id, sample_index))
            raise ProtocolError('DS {}: recover before condense'.format(
                self.ds_id))
        cached_index, rs, a, Bm = self._cache
        if sample_index != cached_index:
            raise ProtocolError('DS {}: increment for sample {} while sample {} '
                                'is pending'.format(self.ds_id, sample_index,
                                                    cached_index))
        dxb = np.asarray(dxb, dtype=float)
        if dxb.size != self.boundary.size:
            raise ProtocolError('DS {}: boundary increment of size {}'.format(
                self.ds_id, dxb.size))

        q = a - Bm @ dxb
        n_i = self.internal.size
        dx = np.zeros(self.problem.n)
        dx[self.internal] = q[:n_i]
        dx[self.boundary] = dxb

        self._cache = None
        self._recovered = sample_index

        return rs.recover(dx, q[n_i:])


class TsAgent:
    '''
    Transmission agent: solves its system with the surrogates accumulated.
    '''
    def __init__(self, problem, ds_ids, solver=None):
        self.problem = problem
        self.boundary = {k: problem.boundary_indices(k) for k in ds_ids}
        self.solver = solver or BorderedSolver()
        self.state = None

    def accumulate_solve(self, surrogates, t, alpha, prediction):
        ids = sorted(sur.ds_id for sur in surrogates)
        if ids != sorted(self.boundary):
            raise ProtocolError('expected one surrogate per DS {}, got {}'
                                .format(sorted(self.boundary), ids))
        p, s = self.problem, self.state
        bundle = kkt_bundle(p, s, t, prediction=prediction)
        rs = assemble_reduced(p, s, t, bundle, alpha)

        H = rs.H
        R_x = rs.R_x.copy()
        for sur in sorted(surrogates, key=lambda sur: sur.ds_id):
            idx = self.boundary[sur.ds_id]
            if sur.j2.shape != (idx.size, idx.size):
                raise ProtocolError('surrogate of DS {} has shape {}'.format(
                    sur.ds_id, sur.j2.shape))
            rows = np.repeat(idx, idx.size)
            cols = np.tile(idx, idx.size)
            H = H + sp.csr_matrix((sur.j2.ravel(), (rows, cols)),
                                  shape=H.shape)
            R_x[idx] -= sur.j1

        sol = self.solver.solve(H, rs.G, np.concatenate([R_x, rs.R_y]))
        dx, dy = sol[:rs.n], sol[rs.n:]
        inc = rs.recover(dx, dy)

        return inc, {k: dx[idx] for k, idx in self.boundary.items()}


def ds_condense(agent, t, cfg, sample_index):
    'Quadratic surrogate of a DS agent at its current state.'
    return agent.condense(t, cfg.alpha, cfg.prediction_enabled, sample_index)


def ts_accumulate_solve(agent, surrogates, t, cfg):
    'TS increment and per-DS boundary increments.'
    return agent.accumulate_solve(surrogates, t, cfg.alpha,
                                  cfg.prediction_enabled)


def ds_recover(agent, boundary_increment, sample_index):
    'DS increment from the boundary increment sent down.'
    return agent.recover(boundary_increment, sample_index)


class RoundResult:

    def __init__(self, ts_increment, ts_steps, ds_increments, ds_steps):
        self.ts_increment = ts_increment
        self.ts_steps = ts_steps
        self.ds_increments = ds_increments
        self.ds_steps = ds_steps


class Coordinator:
    '''
    Owns the agents, the message bus and the protocol counters.

    Arguments:
        partition (Partition): coupled problem
        cfg (TrackerConfig): constants
    '''
    def __init__(self, partition, cfg=None):
        self.partition = partition
        self.cfg = cfg or TrackerConfig()
        self.ts = TsAgent(partition.ts_problem, partition.ds_ids)
        self.ds = {k: DsAgent(k, p) for k, p in partition.ds_problems.items()}
        self.bus = MessageBus()
        self.counters = Counter()
        self.sample_index = 0
        self.burn_in_rounds = 0

    @classmethod
    def from_network(cls, net, scenario, cfg=None):
        return cls(partition_network(net, scenario), cfg)

    @property
    def agents(self):
        return [self.ts] + [self.ds[k] for k in self.partition.ds_ids]

    def initialize(self, t0, states=None):
        '''
        Flat start, or given agent-local states (TS first).
        '''
        if states is None:
            states = [initial_state(agent.problem, t0) for agent in self.agents]
        for agent, s in zip(self.agents, states):
            agent.state = s.copy()
        self.sync_boundary()

    def sync_boundary(self):
        'Overwrite each DS copy of its boundary with the TS values.'
        for k, agent in self.ds.items():
            agent.state.x[agent.boundary] = \
                self.ts.state.x[self.partition.ts_boundary[k]]

    def merged_state(self):
        return self.partition.centralized.merge(
            [agent.state for agent in self.agents])

    def set_merged_state(self, s):
        for agent, local in zip(self.agents,
                                self.partition.centralized.split(s)):
            agent.state = local

    def kkt_error(self, t):
        return kkt_error(self.partition.centralized, self.merged_state(), t)

    def objective(self, t):
        return self.partition.centralized.objective(self.merged_state().x, t)

    def round(self, t, alpha, prediction, surrogate_hook=None, factor=1.0):
        '''
        One condense / accumulate / recover exchange at the current states.
        Every agent also computes its own step lengths for an update applied
        with the given factor.

        Returns:
            RoundResult
        '''
        self.sample_index += 1
        index = self.sample_index
        gamma = self.cfg.gamma

        for k in self.partition.ds_ids:
            surrogate = self.ds[k].condense(t, alpha, prediction, index)
            self.bus.send(SurrogateUp(k, index, surrogate))
            self.counters['condense'] += 1

        ups = self.bus.receive_all(SURROGATE_UP)
        for msg in ups:
            if msg.sample_index != index:
                raise ProtocolError('stale surrogate from DS {}'.format(
                    msg.ds_id))
        surrogates = [msg.surrogate for msg in ups]
        if surrogate_hook is not None:
            surrogate_hook(surrogates)

        ts_inc, dxbs = self.ts.accumulate_solve(surrogates, t, alpha,
                                                prediction)
        self.counters['accumulate'] += 1
        ts_steps = step_lengths(self.ts.state, ts_inc, gamma, factor)
        for k in self.partition.ds_ids:
            self.bus.send(IncrementDown(k, index, dxbs[k], ts_steps[0]))

        ds_incs, ds_steps = {}, {}
        for msg in self.bus.receive_all(INCREMENT_DOWN):
            agent = self.ds[msg.ds_id]
            ds_incs[msg.ds_id] = agent.recover(msg.dxb, msg.sample_index)
            ds_steps[msg.ds_id] = step_lengths(agent.state, ds_incs[msg.ds_id],
                                               gamma, factor)
            self.counters['recover'] += 1
        self.counters['rounds'] += 1

        return RoundResult(ts_inc, ts_steps, ds_incs, ds_steps)

    def apply(self, result, factor):
        '''
        Update every agent with its increment. In per-agent mode each agent
        uses its own step lengths and the DS copies of the boundary follow
        the TS primal step; in global-min mode all agents share the
        smallest step lengths.

        Returns:
            (alpha_p, alpha_d) smallest over the agents
        '''
        steps = [result.ts_steps] + \
            [result.ds_steps[k] for k in self.partition.ds_ids]
        alpha_p = min(ap for ap, _ in steps)
        alpha_d = min(ad for _, ad in steps)

        if self.cfg.step_mode == 'global-min':
            self.ts.state = apply_increment(self.ts.state, result.ts_increment,
                                            alpha_p, alpha_d, factor)
            for k, agent in self.ds.items():
                agent.state = apply_increment(agent.state,
                                              result.ds_increments[k],
                                              alpha_p, alpha_d, factor)
            return alpha_p, alpha_d

        ts_ap, ts_ad = result.ts_steps
        self.ts.state = apply_increment(self.ts.state, result.ts_increment,
                                        ts_ap, ts_ad, factor)
        for k, agent in self.ds.items():
            inc = result.ds_increments[k]
            ap, ad = result.ds_steps[k]
            new = apply_increment(agent.state, inc, ap, ad, factor)
            B = agent.boundary
            new.x[B] = agent.state.x[B] + factor * ts_ap * inc.dx[B]
            agent.state = new

        return alpha_p, alpha_d

    def burn_in(self, t0):
        '''
        Decentralized rounds at frozen t0 parameters until the merged state
        converges. Protocol counters restart afterwards.
        '''
        cfg = self.cfg
        centralized = self.partition.centralized
        for it in range(cfg.burn_in_max + 1):
            merged = self.merged_state()
            err = kkt_error(centralized, merged, t0)
            if err <= cfg.burn_in_eps and merged.gap <= cfg.burn_in_eps:
                logger.info('decentralized burn-in converged in %d rounds', it)
                self.burn_in_rounds = it + self._settle(t0)
                self.counters.clear()
                self.bus.counts.clear()
                return
            if it == cfg.burn_in_max:
                break
            result = self.round(t0, 1.0, False)
            self.apply(result, 1.0)
            for agent in self.agents:
                agent.state.mu = barrier_update(agent.state, cfg.sigma)
            logger.debug('burn-in round %d: kkt %.3e', it, err)

        raise MaxIterationsError(
            'decentralized burn-in did not converge in {} rounds'.format(
                cfg.burn_in_max),
            state=merged, kkt_error=err)

    def _settle(self, t0):
        '''
        Rounds at frozen t0 with every agent's barrier parameter driven to
        mu_min, until no entry of the merged state moves by more than
        SETTLE_TOL relative.
        '''
        cfg = self.cfg
        for it in range(cfg.burn_in_max):
            before = self.merged_state().vector()
            for agent in self.agents:
                agent.state = update_barrier(agent.state, cfg)
            self.apply(self.round(t0, 1.0, False), 1.0)
            moved = np.abs(self.merged_state().vector() - before)
            at_floor = all(agent.state.mu == cfg.mu_min for agent in self.agents)
            if at_floor and np.all(moved <= SETTLE_TOL *
                                   np.maximum(1.0, np.abs(before))):
                return it + 1
        logger.warning('decentralized burn-in did not settle at mu_min in '
                       '%d rounds', cfg.burn_in_max)
        return cfg.burn_in_max

    def run(self, scenario, t0=None, t_end=None, keep_states=0, verbose=False):
        '''
        Burn in at t0, then one decentralized step per sample.

        Returns:
            Trajectory
        '''
        h0, h1 = scenario.horizon
        t0 = h0 if t0 is None else t0
        t_end = h1 if t_end is None else t_end
        times = sample_times(t0, t_end, self.cfg.tau)
        traj = Trajectory(keep_states)

        start = time.perf_counter()
        if self.ts.state is None:
            self.initialize(t0)
        self.burn_in(t0)
        traj.append(t0, self.objective(t0), self.kkt_error(t0),
                    wall_ms=1e3 * (time.perf_counter() - start),
                    state=self.merged_state())

        for k in _progress(range(1, len(times)), verbose):
            t_prev, t = times[k - 1], times[k]
            sent = self.bus.counts['total']
            start = time.perf_counter()
            alpha_p, alpha_d = decentralized_track_step(self, t_prev, self.cfg)
            wall_ms = 1e3 * (time.perf_counter() - start)
            traj.append(t, self.objective(t), self.kkt_error(t), alpha_p,
                        alpha_d, wall_ms, self.bus.counts['total'] - sent,
                        state=self.merged_state())

        traj.counters = self.counters
        traj.final_state = self.merged_state()
        return traj


def decentralized_track_step(coord, t, cfg):
    '''
    One decentralized tracking step from t to t + tau: per-agent barrier
    update, one message round, per-agent (or global-min) updates.

    Returns:
        (alpha_p, alpha_d) smallest over the agents
    '''
    for agent in coord.agents:
        agent.state = update_barrier(agent.state, cfg)
    result = coord.round(t, cfg.alpha, cfg.prediction_enabled,
                         factor=cfg.step_factor)
    return coord.apply(result, cfg.step_factor)


def merge_increments(partition, ts_increment, ds_increments):
    'Global increment from agent increments, owned variables winning.'
    states = [PrimalDualState(*ts_increment.blocks())] + \
        [PrimalDualState(*ds_increments[k].blocks()) for k in partition.ds_ids]
    merged = partition.centralized.merge(states)
    return Increment(*merged.blocks())


def random_interior_states(partition, t, rs):
    '''
    Seeded random strictly interior agent states with consistent boundary
    copies and a random barrier parameter per agent.
    '''
    problems = [partition.ts_problem] + \
        [partition.ds_problems[k] for k in partition.ds_ids]
    xs = [p.initial_point(t) + rs.uniform(-0.02, 0.02, p.n) for p in problems]
    for k, x in zip(partition.ds_ids, xs[1:]):
        x[partition.ds_boundary[k]] = xs[0][partition.ts_boundary[k]]

    states = []
    for p, x in zip(problems, xs):
        h = p.ineq(x, t)
        u = np.maximum(p.h_upper - h, 0.1) * rs.uniform(0.5, 1.5, p.m_ineq)
        l = np.maximum(h - p.h_lower, 0.1) * rs.uniform(0.5, 1.5, p.m_ineq)
        states.append(PrimalDualState(
            x, rs.normal(size=p.m_eq), -rs.uniform(0.1, 1.0, p.m_ineq),
            rs.uniform(0.1, 1.0, p.m_ineq), u, l,
            mu=rs.uniform(0.01, 0.1)))
    return states


class EquivalenceReport:

    def __init__(self, deviations, tol):
        self.deviations = deviations
        self.tol = tol

    @property
    def max_deviation(self):
        return max(self.deviations.values())

    @property
    def passed(self):
        return self.max_deviation <= self.tol

    def __str__(self):
        return '{} max deviation {:.3e} ({})'.format(
            'PASS' if self.passed else 'FAIL', self.max_deviation,
            ', '.join('{} {:.1e}'.format(k, v)
                      for k, v in self.deviations.items()))


def verify_equivalence(net, scenario, t, seed, alpha=1.0, prediction=True,
                       perturb=0.0, tol=1e-8):
    '''
    Compare one decentralized round against the dense solve of the
    centralized, unreduced Newton system at a seeded random interior state.

    Arguments:
        net (Network): small coupled network
        scenario (Scenario): parameters
        t (float): time
        seed (int): state seed
        alpha (float): residual weight
        prediction (bool): include the time-derivative term
        perturb (float): added to the first linear coefficient of the first
            surrogate before accumulation
        tol (float): largest relative block deviation that passes

    Returns:
        EquivalenceReport
    '''
    partition = partition_network(net, scenario)
    coord = Coordinator(partition)
    rs = np.random.RandomState(seed)
    coord.initialize(t, random_interior_states(partition, t, rs))

    centralized = partition.centralized
    merged = coord.merged_state()
    bundle = kkt_bundle(centralized, merged, t, prediction=prediction)
    oracle = full_kkt_solve(centralized, merged, t, bundle, alpha)

    def tamper(surrogates):
        if perturb and surrogates:
            surrogates[0].j1[0] += perturb

    result = coord.round(t, alpha, prediction, surrogate_hook=tamper)
    dec = merge_increments(partition, result.ts_increment,
                           result.ds_increments)

    deviations = {}
    for name, a, b in zip(('dx', 'dy', 'dw', 'dz', 'du', 'dl'), dec.blocks(),
                          oracle.blocks()):
        scale = float(np.max(np.abs(b))) if b.size else 0.0
        diff = float(np.max(np.abs(a - b))) if b.size else 0.0
        deviations[name] = diff / scale if scale > 0.0 else diff

    report = EquivalenceReport(deviations, tol)
    logger.info('equivalence check (seed %d): %s', seed, report)
    return report
