import numpy as np
import unittest

from numpy.testing import assert_allclose

from gridtrack.coordination import (BOUNDARY_SIZE, Coordinator, Partition,
                                    decentralized_track_step,
                                    partition_network,
                                    random_interior_states,
                                    verify_equivalence)
from gridtrack.errors import (ProtocolError, SingularSystemError,
                              ValidationError)
from gridtrack.messages import (INCREMENT_DOWN, SURROGATE_UP, IncrementDown,
                                MessageBus, QuadraticSurrogate, SurrogateUp,
                                decode, encode, field_inventory)
from gridtrack.nlp import kkt_bundle
from gridtrack.pdipm import BorderedSolver, assemble_reduced, bordered_matrix
from gridtrack.scenario import make_synthetic
from gridtrack.tracker import TrackerConfig

from helpers import bundled, loads_only_case


class TestPartition(unittest.TestCase):

    def test_dimensions(self):
        '''
        Global variables are the TS vector followed by each DS's internal
        variables
        '''
        net, scenario = bundled('t3d3x3')
        part = partition_network(net, scenario)
        assert part.ds_ids == [1, 2, 3]
        n_internal = sum(p.n - BOUNDARY_SIZE
                         for p in part.ds_problems.values())
        assert part.R == part.R_T + n_internal
        assert part.centralized.n == part.R
        for k in part.ds_ids:
            assert_allclose(part.ds_maps[k][-BOUNDARY_SIZE:], part.boundary[k])
            assert len(part.ds_independent[k]) == part.R_k[k] - BOUNDARY_SIZE
        boundary = np.concatenate([part.boundary[k] for k in part.ds_ids])
        assert len(part.ts_independent) == part.R_T - boundary.size

    def test_overlapping_boundaries(self):
        net, scenario = bundled('t3d3x3')
        part = partition_network(net, scenario)
        ds = dict(part.ds_problems)
        ts = part.ts_problem
        ts.boundary_indices = lambda k: part.ts_boundary[1]
        with self.assertRaises(ValidationError):
            Partition(ts, ds)

    def test_tie_errors(self):
        '''
        Every DS needs exactly one tie line
        '''
        net, scenario = bundled('t2d3x1')
        net.tie_lines.append((1, 1))
        with self.assertRaises(ValidationError) as ctx:
            partition_network(net, scenario)
        assert 'more than one tie line' in str(ctx.exception)

        net, scenario = bundled('t2d3x1')
        net.tie_lines.clear()
        with self.assertRaises(ValidationError) as ctx:
            partition_network(net, scenario)
        assert 'no tie line' in str(ctx.exception)


class TestEquivalence(unittest.TestCase):
    '''
    One decentralized round reproduces the dense centralized Newton step.
    '''
    def _check(self, name, seeds, **kwargs):
        net, scenario = bundled(name, shape='noon-peak', noise=0.02, seed=4)
        for seed in seeds:
            report = verify_equivalence(net, scenario, 2.5, seed, **kwargs)
            assert report.passed, 'seed {}: {}'.format(seed, report)

    def test_single_feeder(self):
        self._check('t2d3x1', range(50))

    def test_three_feeders(self):
        self._check('t3d3x3', range(50))

    def test_tracking_weight_without_prediction(self):
        self._check('t3d3x3', range(5), alpha=50.0, prediction=False)

    def test_perturbed_surrogate_fails(self):
        '''
        A tampered surrogate coefficient is detected
        '''
        net, scenario = bundled('t2d3x1', shape='noon-peak')
        report = verify_equivalence(net, scenario, 2.5, 0, perturb=1e-3)
        assert not report.passed
        assert report.max_deviation > 1e-6
        assert str(report).startswith('FAIL')


class TestCondensation(unittest.TestCase):

    def setUp(self):
        net, scenario = bundled('t3d3x3', shape='ramp')
        self.part = partition_network(net, scenario)
        self.coord = Coordinator(self.part)
        rs = np.random.RandomState(9)
        self.coord.initialize(1.0, random_interior_states(self.part, 1.0, rs))
        self.agent = self.coord.ds[2]

    def test_surrogate_is_condensed_quadratic(self):
        '''
        The surrogate at v equals the DS quadratic model minimized over its
        internal variables, and the recovered increment is that minimizer
        '''
        agent, t, alpha = self.agent, 1.0, 20.0
        p, s = agent.problem, agent.state
        rs = assemble_reduced(p, s, t, kkt_bundle(p, s, t), alpha)
        K = bordered_matrix(rs.H, rs.G)
        rhs = np.concatenate([rs.R_x, rs.R_y])

        surrogate = agent.condense(t, alpha, True, 1)
        v = np.random.RandomState(1).normal(size=BOUNDARY_SIZE) * 0.01
        inc = agent.recover(v, 1)
        z = np.concatenate([inc.dx, inc.dy])

        assert_allclose(inc.dx[agent.boundary], v)
        residual = K @ z - rhs
        residual = np.delete(residual, agent.boundary)
        assert np.max(np.abs(residual)) <= 1e-8 * max(1.0, np.max(np.abs(rhs)))

        model = 0.5 * z @ (K @ z) - rhs @ z
        assert_allclose(surrogate(v), model, rtol=1e-8, atol=1e-10)

    def test_surrogate_minimizer(self):
        sur = QuadraticSurrogate(1, [[2.0, 0.0], [0.0, 4.0]], [2.0, -4.0], 1.0)
        assert_allclose(sur.minimizer(), [-1.0, 1.0])
        assert_allclose(sur([-1.0, 1.0]), 1.0 - 1.0 - 2.0)


class TestProtocol(unittest.TestCase):

    def setUp(self):
        net, scenario = bundled('t3d3x3')
        self.coord = Coordinator.from_network(net, scenario)
        self.coord.initialize(0.0)
        self.agent = self.coord.ds[1]

    def test_recover_before_condense(self):
        with self.assertRaises(ProtocolError):
            self.agent.recover(np.zeros(4), 1)

    def test_sample_index_must_increase(self):
        self.agent.condense(0.0, 1.0, False, 3)
        self.agent.recover(np.zeros(4), 3)
        with self.assertRaises(ProtocolError):
            self.agent.condense(0.0, 1.0, False, 3)

    def test_recover_checks(self):
        '''
        The increment must match the pending sample and the boundary size,
        and arrives once
        '''
        self.agent.condense(0.0, 1.0, False, 1)
        with self.assertRaises(ProtocolError):
            self.agent.recover(np.zeros(4), 2)
        with self.assertRaises(ProtocolError):
            self.agent.recover(np.zeros(3), 1)
        self.agent.recover(np.zeros(4), 1)
        with self.assertRaises(ProtocolError) as ctx:
            self.agent.recover(np.zeros(4), 1)
        assert 'already recovered' in str(ctx.exception)

    def test_missing_surrogate(self):
        surrogates = [self.coord.ds[k].condense(0.0, 1.0, False, 1)
                      for k in (1, 2)]
        with self.assertRaises(ProtocolError):
            self.coord.ts.accumulate_solve(surrogates, 0.0, 1.0, False)

    def test_only_surrogates_cross_upward(self):
        '''
        An upward frame carries routing fields and surrogate coefficients
        only: no voltages, injections or multipliers of the DS
        '''
        self.coord.bus = MessageBus(keep_frames=True)
        self.coord.round(0.0, 1.0, False)
        ups = [f for f in self.coord.bus.frames if f[5] == SURROGATE_UP]
        downs = [f for f in self.coord.bus.frames if f[5] == INCREMENT_DOWN]
        assert len(ups) == len(downs) == 3
        for frame in ups:
            assert field_inventory(frame) == ['magic', 'version', 'tag',
                                              'ds_id', 'sample_index', 'n_b',
                                              'j2', 'j1', 'j0']
            assert len(frame) == 6 + 16 + 8 * 15
        for frame in downs:
            assert field_inventory(frame)[-2:] == ['dxb', 'alpha_p']
            assert len(frame) == 6 + 16 + 8 * 5

    def test_message_counts(self):
        '''
        Each sample costs one message up and one down per DS
        '''
        net, scenario = bundled('t3d3x3', shape='noon-peak',
                                horizon=(0.0, 20.0))
        cfg = TrackerConfig(tau=0.02)
        coord = Coordinator.from_network(net, scenario, cfg)
        traj = coord.run(scenario)
        assert len(traj) == 1001
        assert traj.counters['rounds'] == 1000
        assert traj.counters['condense'] == 3000
        assert traj.counters['recover'] == 3000
        assert coord.bus.counts[SURROGATE_UP] == 3000
        assert coord.bus.counts[INCREMENT_DOWN] == 3000
        assert list(traj.to_frame()['msgs'][1:].unique()) == [6]
        assert coord.bus.pending() == 0


class TestCodec(unittest.TestCase):

    def setUp(self):
        j2 = np.array([[2.0, 0.5, 0.0, 0.1], [0.5, 3.0, 0.2, 0.0],
                       [0.0, 0.2, 1.0, 0.0], [0.1, 0.0, 0.0, 4.0]])
        self.up = SurrogateUp(7, 12, QuadraticSurrogate(
            7, j2, [1.0, -2.0, 0.5, 0.0], -3.25))

    def test_surrogate_frame(self):
        '''
        j2 travels as its lower triangle and comes back symmetric
        '''
        msg = decode(encode(self.up))
        assert (msg.ds_id, msg.sample_index) == (7, 12)
        assert_allclose(msg.surrogate.j2, self.up.surrogate.j2, rtol=0,
                        atol=0)
        assert msg.surrogate.j0 == -3.25

    def test_decoded_arrays_are_writable(self):
        '''
        Decoded coefficients own their memory and can be edited in place
        '''
        frame = encode(self.up)
        msg = decode(frame)
        msg.surrogate.j1[0] += 1e-3
        msg.surrogate.j2[0, 0] += 1e-3
        assert_allclose(msg.surrogate.j1[0], 1.0 + 1e-3)
        assert_allclose(decode(frame).surrogate.j1[0], 1.0)
        inc = decode(encode(IncrementDown(2, 5, [0.1, 0.2, 0.3, 0.4], 0.75)))
        inc.dxb[0] = 0.0

    def test_increment_frame(self):
        msg = decode(encode(IncrementDown(2, 5, [0.1, 0.2, 0.3, 0.4], 0.75)))
        assert msg.tag == INCREMENT_DOWN
        assert msg.alpha_p == 0.75
        assert_allclose(msg.dxb, [0.1, 0.2, 0.3, 0.4])

    def test_malformed_frames(self):
        frame = encode(self.up)
        for bad in (b'XXXX' + frame[4:],
                    frame[:4] + bytes([9]) + frame[5:],
                    frame[:5] + bytes([3]) + frame[6:],
                    frame[:10],
                    frame[:-3],
                    frame[:-8]):
            with self.assertRaises(ProtocolError):
                decode(bad)
        with self.assertRaises(ProtocolError):
            encode(object())


class TestDecentralizedStep(unittest.TestCase):

    def _coordinator(self, step_mode):
        net, scenario = bundled('t3d3x3', shape='noon-peak',
                                horizon=(0.0, 5.0))
        cfg = TrackerConfig(tau=0.05, step_mode=step_mode)
        coord = Coordinator.from_network(net, scenario, cfg)
        coord.initialize(0.0)
        coord.burn_in(0.0)
        return coord, cfg

    def test_boundary_copies_agree(self):
        '''
        After a per-agent step every DS copy of its boundary still equals
        the TS variables
        '''
        coord, cfg = self._coordinator('per-agent')
        for k in range(10):
            decentralized_track_step(coord, 0.05 * k, cfg)
            for ds_id, agent in coord.ds.items():
                ts_b = coord.partition.ts_boundary[ds_id]
                assert_allclose(agent.state.x[agent.boundary],
                                coord.ts.state.x[ts_b], rtol=0, atol=1e-12)
            assert all(agent.state.is_interior() for agent in coord.agents)

    def test_global_min_steps(self):
        coord, cfg = self._coordinator('global-min')
        for k in range(10):
            alpha_p, alpha_d = decentralized_track_step(coord, 0.05 * k, cfg)
            assert 0.0 < alpha_p <= 1.0 and 0.0 < alpha_d <= 1.0
        assert coord.merged_state().is_interior()

    def test_burn_in_resets_counters(self):
        coord, _ = self._coordinator('per-agent')
        assert coord.burn_in_rounds > 0
        assert sum(coord.counters.values()) == 0
        assert coord.bus.counts['total'] == 0
        assert coord.kkt_error(0.0) <= 1e-6


    def test_constant_scenario_is_fixed_point(self):
        '''
        With constant parameters a settled decentralized state does not
        move under further tracking steps
        '''
        net, scenario = bundled('t2d3x1', shape='flat', horizon=(0.0, 2.0))
        cfg = TrackerConfig(tau=0.02)
        coord = Coordinator.from_network(net, scenario, cfg)
        coord.initialize(0.0)
        coord.burn_in(0.0)
        for k in range(20):
            before = coord.merged_state()
            decentralized_track_step(coord, 0.02 * k, cfg)
            after = coord.merged_state()
            assert np.max(np.abs(after.x - before.x)) <= 1e-9
            assert np.max(np.abs(after.y - before.y)) <= 1e-9


class _PivotFailure(BorderedSolver):

    def __init__(self):
        super().__init__()
        self.attempts = 0

    def _factor(self, K, perm):
        self.attempts += 1
        raise RuntimeError('Factor is exactly singular')


class TestSingularFeeder(unittest.TestCase):

    def test_loads_only_feeder_is_rejected(self):
        '''
        A feeder with more balance rows than internal variables cannot be
        condensed, and the coordinator says so instead of regularizing
        '''
        net = loads_only_case()
        scenario = make_synthetic(net, 'flat', horizon=(0.0, 1.0))
        with self.assertRaises(SingularSystemError):
            Coordinator.from_network(net, scenario)
        with self.assertRaises(SingularSystemError):
            verify_equivalence(net, scenario, 0.5, 0)

    def test_condense_does_not_regularize(self):
        '''
        A singular independent block raises from condense without the
        regularizing retry
        '''
        net, scenario = bundled('t2d3x1')
        coord = Coordinator.from_network(net, scenario)
        coord.initialize(0.0)
        agent = coord.ds[1]
        agent.solver = _PivotFailure()
        with self.assertRaises(SingularSystemError):
            agent.condense(0.0, 1.0, False, 1)
        assert agent.solver.attempts == 1
