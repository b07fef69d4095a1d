import numpy as np
import unittest

from numpy.testing import assert_allclose

from gridtrack.errors import SingularSystemError, ValidationError
from gridtrack.nlp import PrimalDualState, kkt_error
from gridtrack.opf import build_nlp
from gridtrack.pdipm import BorderedSolver, initial_state
from gridtrack.tracker import (TRAJECTORY_COLUMNS, TrackerConfig, Trajectory,
                               burn_in, oracle_solve, run_tracker,
                               sample_times, track_step, update_barrier)

from helpers import ScalarTracking, bundled


class TestConfig(unittest.TestCase):

    def test_defaults(self):
        '''
        alpha defaults to 1 / tau and the Euler factor is tau
        '''
        cfg = TrackerConfig(tau=0.05)
        assert_allclose(cfg.alpha, 20.0)
        assert_allclose(cfg.step_factor, 0.05)
        assert cfg.prediction_enabled
        assert cfg.step_mode == 'per-agent'

    def test_step_factor_capped(self):
        '''
        A large weight caps the factor at 1 / alpha, a long period at one
        '''
        assert_allclose(TrackerConfig(tau=0.1, alpha=100.0).step_factor, 0.01)
        assert_allclose(TrackerConfig(tau=5.0, alpha=0.1).step_factor, 1.0)

    def test_invalid(self):
        for kwargs in ({'tau': 0.0}, {'tau': -1.0}, {'alpha': 0.0},
                       {'gamma': 1.0}, {'sigma': 0.0},
                       {'step_mode': 'fastest'}, {'burn_in_max': -1}):
            with self.assertRaises(ValidationError):
                TrackerConfig(**kwargs)

    def test_as_dict(self):
        cfg = TrackerConfig(tau=0.01, prediction_enabled=False)
        again = TrackerConfig(**cfg.as_dict())
        assert again.as_dict() == cfg.as_dict()


class TestTrajectory(unittest.TestCase):

    def test_frame(self):
        traj = Trajectory()
        traj.append(0.0, 1.0, 1e-7)
        traj.append(0.5, 2.0, 1e-6, 0.9, 0.8, 3.0, 4)
        frame = traj.to_frame()
        assert list(frame.columns) == TRAJECTORY_COLUMNS
        assert_allclose(frame['alpha_d'], [1.0, 0.8])
        assert_allclose(traj.times, [0.0, 0.5])
        assert len(traj) == 2

    def test_times_increase(self):
        traj = Trajectory()
        traj.append(1.0, 0.0, 0.0)
        with self.assertRaises(ValidationError):
            traj.append(1.0, 0.0, 0.0)

    def test_state_thinning(self):
        '''
        Only every keep_states-th state is kept, as a copy
        '''
        traj = Trajectory(keep_states=2)
        s = PrimalDualState([1.0], [], [], [], [], [])
        for k in range(5):
            traj.append(float(k), 0.0, 0.0, state=s)
        s.x[0] = 7.0
        assert [t for t, _ in traj.states] == [0.0, 2.0, 4.0]
        assert traj.states[0][1].x[0] == 1.0

    def test_sample_times(self):
        assert_allclose(sample_times(0.0, 1.0, 0.25),
                        [0.0, 0.25, 0.5, 0.75, 1.0])
        assert len(sample_times(0.0, 0.6, 0.02)) == 31


class TestScalarTracking(unittest.TestCase):
    '''
    min (x - t)^2: with prediction the tracker has no lag, without it lags
    one period behind.
    '''
    def setUp(self):
        self.p = ScalarTracking()
        _, self.scenario = bundled('t2d3x1', horizon=(0.0, 2.0))

    def test_zero_lag_with_prediction(self):
        cfg = TrackerConfig(tau=0.02)
        traj = run_tracker(self.p, self.scenario, cfg, keep_states=1)
        for t, s in traj.states:
            assert abs(s.x[0] - t) <= 1e-10
        assert abs(traj.final_state.x[0] - 2.0) <= 1e-10

    def test_lag_without_prediction(self):
        cfg = TrackerConfig(tau=0.02, prediction_enabled=False)
        traj = run_tracker(self.p, self.scenario, cfg, keep_states=1)
        for t, s in traj.states[1:]:
            assert abs(t - s.x[0] - 0.02) <= 1e-10

    def test_single_step(self):
        s = PrimalDualState([0.3], [], [], [], [], [])
        moved = track_step(self.p, s, 0.3, TrackerConfig(tau=0.1))
        assert_allclose(moved.x, [0.4])


class TestOpfTracking(unittest.TestCase):

    def test_fixed_point_of_constant_problem(self):
        '''
        With constant parameters the tracker settles and stops moving
        '''
        net, scenario = bundled('t2d3x1', shape='flat', horizon=(0.0, 3.0))
        p = build_nlp(net, scenario)
        traj = run_tracker(p, scenario, TrackerConfig(tau=0.02),
                           keep_states=1)
        settled = traj.states[30][1].x
        for _, s in traj.states[30:131]:
            assert np.max(np.abs(s.x - settled)) <= 1e-9

    def test_states_stay_interior(self):
        net, scenario = bundled('t2d3x1', shape='noon-peak',
                                horizon=(0.0, 2.0), noise=0.05, seed=1)
        p = build_nlp(net, scenario)
        traj = run_tracker(p, scenario, TrackerConfig(tau=0.02),
                           keep_states=1)
        assert len(traj) == 101
        for _, s in traj.states:
            assert s.is_interior()
        assert traj.counters['solve'] == 100

    def test_prediction_reduces_error(self):
        '''
        On a fast ramp the prediction term keeps the primal iterate closer
        to the per-sample optimum
        '''
        net, scenario = bundled('t2d3x1', shape='ramp', horizon=(0.0, 1.0))
        p = build_nlp(net, scenario)
        oracle = run_tracker(p, scenario, TrackerConfig(tau=0.02,
                                                        oracle_eps=1e-9),
                             mode='oracle-resolve', keep_states=1)

        def distance(prediction):
            cfg = TrackerConfig(tau=0.02, prediction_enabled=prediction)
            traj = run_tracker(p, scenario, cfg, keep_states=1)
            return np.mean([np.max(np.abs(a.x - b.x)) for (_, a), (_, b) in
                            zip(traj.states[10:], oracle.states[10:])])

        assert distance(True) < 0.5 * distance(False)

    def test_burn_in_settles_at_floor(self):
        '''
        Burn-in leaves mu at its floor, where one tracking step of a
        constant problem is negligible
        '''
        net, scenario = bundled('t2d3x1', shape='flat', horizon=(0.0, 1.0))
        p = build_nlp(net, scenario)
        cfg = TrackerConfig(tau=0.02)
        s = burn_in(p, initial_state(p, 0.0), 0.0, cfg)
        assert s.mu == cfg.mu_min
        nxt = track_step(p, s, 0.0, cfg)
        assert np.max(np.abs(nxt.x - s.x)) <= 1e-10
        assert update_barrier(s, cfg).mu == cfg.mu_min

    def test_steps_are_not_throttled(self):
        '''
        Step lengths are measured on the damped update, so tracking a
        smooth scenario takes essentially full steps
        '''
        net, scenario = bundled('t2d3x1', shape='noon-peak',
                                horizon=(0.0, 2.0))
        p = build_nlp(net, scenario)
        frame = run_tracker(p, scenario, TrackerConfig(tau=0.02)).to_frame()
        assert np.median(frame['alpha_p'].values[1:]) > 0.5
        assert np.median(frame['alpha_d'].values[1:]) > 0.5

    def test_oracle_falls_back_on_singular_system(self):
        '''
        A singular warm start is retried instead of aborting the run
        '''
        net, scenario = bundled('t2d3x1', shape='noon-peak',
                                horizon=(0.0, 2.0))
        p = build_nlp(net, scenario)
        cfg = TrackerConfig(oracle_eps=1e-9)
        with self.assertLogs('gridtrack.tracker', 'WARNING'):
            s = oracle_solve(p, 1.0, initial_state(p, 1.0), cfg,
                             _FailingOnce())
        assert kkt_error(p, s, 1.0) <= 1e-9

    def test_window_outside_horizon(self):
        net, scenario = bundled('t2d3x1', horizon=(0.0, 1.0))
        p = build_nlp(net, scenario)
        with self.assertRaises(ValidationError):
            run_tracker(p, scenario, TrackerConfig(), t0=0.0, t_end=2.0)
        with self.assertRaises(ValidationError):
            run_tracker(p, scenario, TrackerConfig(), mode='sideways')


class _FailingOnce(BorderedSolver):

    def __init__(self):
        super().__init__()
        self.failed = False

    def factorize(self, H, G, regularize=True):
        if not self.failed:
            self.failed = True
            raise SingularSystemError('bordered system is singular')
        return super().factorize(H, G, regularize)


class TestBarrier(unittest.TestCase):

    def test_floor(self):
        s = PrimalDualState([0.0], [], [-1e-20], [1e-20], [1.0], [1.0])
        assert update_barrier(s, TrackerConfig(mu_min=1e-10)).mu == 1e-10
        s = PrimalDualState([0.0], [], [-1.0], [1.0], [1.0], [1.0])
        assert_allclose(update_barrier(s, TrackerConfig(sigma=0.1)).mu, 0.1)
