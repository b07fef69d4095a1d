'''
Prediction-correction tracking of a time-varying KKT trajectory: forward
Euler with one interior-point correction per sampling period, after a
burn-in at frozen initial parameters.
'''
import logging
import numpy as np
import pandas as pd
import time

from collections import Counter

from .errors import (MaxIterationsError, NotInteriorError, SingularSystemError,
                     ValidationError)
from .nlp import kkt_bundle, kkt_error
from .pdipm import (BorderedSolver, assemble_reduced, apply_increment,
                    barrier_update, initial_state, recenter, settle,
                    solve_converged, solve_correction, step_lengths, GAMMA,
                    SIGMA, EPS, MAX_ITER)

logger = logging.getLogger(__name__)

MODES = ('centralized-track', 'oracle-resolve')
STEP_MODES = ('per-agent', 'global-min')

TRAJECTORY_COLUMNS = ['t', 'objective', 'kkt_error', 'alpha_p', 'alpha_d',
                      'wall_ms', 'msgs']


class TrackerConfig:
    '''
    Tunable constants of tracking and burn-in.

    Arguments:
        tau (float): sampling period, seconds
        alpha (float): residual weight; defaults to 1 / tau
        gamma (float): fraction-to-boundary factor of the step lengths
        sigma (float): centering factor of the barrier update
        mu_min (float): floor of the barrier parameter while tracking
        burn_in_eps (float): burn-in tolerance on kkt error and gap
        burn_in_max (int): burn-in iteration limit
        oracle_eps (float): tolerance of the per-sample oracle solves
        prediction_enabled (bool): include the time-derivative term
        step_mode (str): 'per-agent' or 'global-min' step lengths when
            tracking decentralized
    '''
    def __init__(self, tau=0.02, alpha=None, gamma=GAMMA, sigma=SIGMA,
                 mu_min=1e-10, burn_in_eps=EPS, burn_in_max=MAX_ITER,
                 oracle_eps=EPS, prediction_enabled=True,
                 step_mode='per-agent'):
        if not tau > 0.0:
            raise ValidationError('tau must be positive, got {}'.format(tau))
        if alpha is None:
            alpha = 1.0 / tau
        if not alpha > 0.0:
            raise ValidationError('alpha must be positive, got {}'.format(alpha))
        if not 0.0 < gamma < 1.0:
            raise ValidationError('gamma must lie in (0, 1)')
        if not 0.0 < sigma < 1.0:
            raise ValidationError('sigma must lie in (0, 1)')
        if burn_in_max < 0:
            raise ValidationError('burn_in_max must be nonnegative')
        if step_mode not in STEP_MODES:
            raise ValidationError('unknown step mode {}'.format(step_mode))

        self.tau = float(tau)
        self.alpha = float(alpha)
        self.gamma = gamma
        self.sigma = sigma
        self.mu_min = mu_min
        self.burn_in_eps = burn_in_eps
        self.burn_in_max = int(burn_in_max)
        self.oracle_eps = oracle_eps
        self.prediction_enabled = bool(prediction_enabled)
        self.step_mode = step_mode

    @property
    def step_factor(self):
        'Euler factor tau, capped so no update exceeds a full Newton step.'
        return min(self.tau, 1.0 / self.alpha, 1.0)

    def as_dict(self):
        return dict(vars(self))


class Trajectory:
    '''
    Append-only record of sampled tracking results.

    Arguments:
        keep_states (int): keep every keep_states-th state, 0 for none
    '''
    def __init__(self, keep_states=0):
        self.rows = []
        self.states = []
        self.keep_states = keep_states
        self.counters = Counter()
        self.final_state = None

    def __len__(self):
        return len(self.rows)

    def append(self, t, objective, kkt_error, alpha_p=1.0, alpha_d=1.0,
               wall_ms=0.0, msgs=0, state=None):
        if self.rows and t <= self.rows[-1][0]:
            raise ValidationError('trajectory times must increase')
        k = len(self.rows)
        self.rows.append((t, objective, kkt_error, alpha_p, alpha_d, wall_ms,
                          msgs))
        if state is not None and self.keep_states and \
                k % self.keep_states == 0:
            self.states.append((t, state.copy()))

    @property
    def times(self):
        return np.array([row[0] for row in self.rows])

    @property
    def objectives(self):
        return np.array([row[1] for row in self.rows])

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=TRAJECTORY_COLUMNS)


def correction_increment(p, s, t, cfg, solver=None, counters=None):
    '''
    The increment a tracking step applies, before step lengths.
    '''
    bundle = kkt_bundle(p, s, t, prediction=cfg.prediction_enabled)
    rs = assemble_reduced(p, s, t, bundle, cfg.alpha)
    inc = solve_correction(rs, solver)
    if counters is not None:
        counters['assemble'] += 1
        counters['solve'] += 1
    return inc


def update_barrier(s, cfg):
    'Once-per-sample barrier parameter, floored at mu_min.'
    s = s.copy()
    s.mu = max(barrier_update(s, cfg.sigma), cfg.mu_min)
    return s


def _track_step(p, s, t, cfg, solver=None, counters=None):
    s = update_barrier(s, cfg)
    inc = correction_increment(p, s, t, cfg, solver, counters)
    alpha_p, alpha_d = step_lengths(s, inc, cfg.gamma, cfg.step_factor)
    return apply_increment(s, inc, alpha_p, alpha_d, cfg.step_factor), \
        alpha_p, alpha_d


def track_step(p, s, t, cfg, solver=None, counters=None):
    '''
    One forward-Euler prediction-correction step from t to t + tau.

    Arguments:
        p (NlpProblem): problem
        s (PrimalDualState): strictly interior state at t
        t (float): current time
        cfg (TrackerConfig): constants

    Returns:
        PrimalDualState at t + tau
    '''
    return _track_step(p, s, t, cfg, solver, counters)[0]


def burn_in(p, s0, t0, cfg, solver=None):
    '''
    Converge at frozen t0 parameters before tracking starts, then settle
    with the barrier parameter at mu_min so a constant problem is a fixed
    point of track_step.
    '''
    s = solve_converged(p, t0, s0, eps=cfg.burn_in_eps, gamma=cfg.gamma,
                        sigma=cfg.sigma, max_iter=cfg.burn_in_max,
                        solver=solver)
    try:
        s, iterations, settled = settle(p, t0, s, cfg.mu_min, gamma=cfg.gamma,
                                        sigma=cfg.sigma,
                                        max_iter=cfg.burn_in_max,
                                        solver=solver)
    except SingularSystemError as e:
        logger.warning('burn-in settling stopped: %s', e)
    else:
        if not settled:
            logger.warning('burn-in did not settle at mu_min in %d '
                           'iterations', iterations)
    logger.info('burn-in finished at t0=%g', t0)
    return s


def sample_times(t0, t_end, tau):
    n = int(np.floor((t_end - t0) / tau + 1e-9))
    return t0 + tau * np.arange(n + 1)


def _progress(iterable, verbose):
    if not verbose:
        return iterable
    from progressbar import ProgressBar
    return ProgressBar()(iterable)


def oracle_solve(p, t, s, cfg, solver=None):
    '''
    Converged solution at t, warm-started from s. A failed warm start is
    retried recentered away from the boundary, then from a flat start.
    '''
    starts = (('warm', lambda: s), ('recentered', lambda: recenter(s)),
              ('flat', lambda: initial_state(p, t)))
    for k, (name, start) in enumerate(starts):
        try:
            return solve_converged(p, t, start(), eps=cfg.oracle_eps,
                                   gamma=cfg.gamma, sigma=cfg.sigma,
                                   solver=solver)
        except (MaxIterationsError, SingularSystemError,
                NotInteriorError) as e:
            if k == len(starts) - 1:
                raise
            logger.warning('oracle %s start failed at t=%g (%s), retrying',
                           name, t, e)


def run_tracker(p, scenario, cfg, mode='centralized-track', t0=None,
                t_end=None, init=None, keep_states=0, verbose=False):
    '''
    Track a problem over [t0, t_end] on the tau grid.

    Arguments:
        p (NlpProblem): problem
        scenario (Scenario): parameters the problem reads
        cfg (TrackerConfig): constants
        mode (str): 'centralized-track' takes one step per sample;
            'oracle-resolve' converges at every sample from the previous
            solution
        init (PrimalDualState): start of burn-in, flat start by default
        keep_states (int): state thinning of the trajectory
        verbose (bool): show a progress bar

    Returns:
        Trajectory
    '''
    if mode not in MODES:
        raise ValidationError('unknown tracker mode {}'.format(mode))
    h0, h1 = scenario.horizon
    t0 = h0 if t0 is None else t0
    t_end = h1 if t_end is None else t_end
    if t0 < h0 or t_end > h1 + 1e-9 or t_end < t0:
        raise ValidationError('[{}, {}] is not inside the horizon [{}, {}]'
                              .format(t0, t_end, h0, h1))

    times = sample_times(t0, t_end, cfg.tau)
    solver = BorderedSolver()
    traj = Trajectory(keep_states)
    s = init if init is not None else initial_state(p, t0)

    start = time.perf_counter()
    if mode == 'oracle-resolve':
        s = oracle_solve(p, t0, s, cfg, solver)
    else:
        s = burn_in(p, s, t0, cfg, solver)
    traj.append(t0, p.objective(s.x, t0), kkt_error(p, s, t0),
                wall_ms=1e3 * (time.perf_counter() - start), state=s)

    for k in _progress(range(1, len(times)), verbose):
        t_prev, t = times[k - 1], times[k]
        start = time.perf_counter()
        if mode == 'oracle-resolve':
            s = oracle_solve(p, t, s, cfg, solver)
            alpha_p = alpha_d = 1.0
        else:
            s, alpha_p, alpha_d = _track_step(p, s, t_prev, cfg, solver,
                                              traj.counters)
        wall_ms = 1e3 * (time.perf_counter() - start)
        traj.append(t, p.objective(s.x, t), kkt_error(p, s, t), alpha_p,
                    alpha_d, wall_ms, state=s)

    traj.final_state = s
    return traj
