import copy
import json
import numpy as np
import os
import tempfile
import unittest

from numpy.testing import assert_allclose

from gridtrack.errors import CaseError, DimensionError
from gridtrack.grid import (GridVariables, branch_flow, flow_matrices,
                            load_case, parse_case, power_mismatch)
from gridtrack.harness import bundled_cases, resolve_case
from gridtrack.scenario import sample_params, make_synthetic


SMALL_CASE = {
    'ts': {
        'buses': [
            {'id': 1, 'vmin': 0.95, 'vmax': 1.05},
            {'id': 2, 'vmin': 0.95, 'vmax': 1.05, 'pd': 0.5, 'qd': 0.1}
        ],
        'branches': [{'from': 1, 'to': 2, 'g': 2.0, 'b': -10.0, 'smax': 2.0}],
        'generators': [{'bus': 1, 'pmin': 0.0, 'pmax': 2.0, 'c2': 10.0}]
    },
    'ds': [{
        'id': 4,
        'root_bus': 1,
        'buses': [
            {'id': 1, 'vmin': 0.9, 'vmax': 1.1},
            {'id': 2, 'vmin': 0.9, 'vmax': 1.1, 'pd': 0.05, 'qd': 0.02}
        ],
        'branches': [{'from': 1, 'to': 2, 'r': 0.04, 'x': 0.08, 'smax': 1.0}],
        'res': [{'bus': 2, 's_rated': 0.05, 'tan_theta': 0.48}]
    }],
    'ties': [{'ts_bus': 2, 'ds_id': 4}]
}


class TestCaseFiles(unittest.TestCase):

    def test_bundled_cases_load(self):
        '''
        Every bundled case parses and validates
        '''
        names = bundled_cases()
        assert {'t2d3x1', 't3d3x3', 't9d33x3'} <= set(names)
        for name in names:
            net = load_case(resolve_case(name))
            assert len(net.ds) == len(net.tie_lines)

    def test_nine_bus_with_feeders(self):
        '''
        The 9-bus system carries three 33-bus feeders with nine RES each
        '''
        net = load_case(resolve_case('t9d33x3'))
        assert len(net.ts.buses) == 9
        assert len(net.ts.generators) == 3
        assert sorted(net.ds) == [1, 2, 3]
        for area in net.ds.values():
            assert len(area.buses) == 33
            assert len(area.branches) == 32
            assert len(area.res_units) == 9
            assert area.bus(area.root_bus).kind == 'distribution-root'
        assert sorted(net.tie_lines) == [(5, 1), (7, 2), (9, 3)]

    def test_impedance_conversion(self):
        '''
        A branch given as (r, x) carries the series admittance 1 / (r + jx)
        '''
        net = parse_case(SMALL_CASE)
        br = net.ds[4].branches[0]
        y = 1.0 / complex(0.04, 0.08)
        assert_allclose([br.g, br.b], [y.real, y.imag])

    def test_reference_bus_default(self):
        '''
        The TS angle reference defaults to the first generator's bus
        '''
        net = parse_case(SMALL_CASE)
        assert net.ts.ref_bus == 1
        assert net.ds[4].name == 'ds4'
        assert net.ds[4].key(2) == 'ds4:2'

    def test_malformed_json(self):
        '''
        A file that is not JSON is a CaseError
        '''
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, 'broken.json')
            with open(path, 'w') as f:
                f.write('{"ts": [')
            with self.assertRaises(CaseError):
                load_case(path)


class TestValidation(unittest.TestCase):

    def _broken(self, edit):
        doc = copy.deepcopy(SMALL_CASE)
        edit(doc)
        with self.assertRaises(CaseError) as ctx:
            parse_case(doc)
        return str(ctx.exception)

    def test_missing_bus(self):
        '''
        A branch to a missing bus names the branch
        '''
        msg = self._broken(
            lambda d: d['ts']['branches'][0].update({'to': 7}))
        assert 'ts branch 1-7' in msg

    def test_self_loop(self):
        msg = self._broken(
            lambda d: d['ts']['branches'][0].update({'to': 1}))
        assert 'self loop' in msg

    def test_voltage_bounds(self):
        '''
        vmin must lie below vmax
        '''
        msg = self._broken(
            lambda d: d['ds'][0]['buses'][1].update({'vmin': 1.2}))
        assert 'ds4 bus 2' in msg

    def test_duplicate_bus(self):
        msg = self._broken(
            lambda d: d['ts']['buses'].append({'id': 2, 'vmin': 0.9,
                                               'vmax': 1.1}))
        assert 'duplicate bus id 2' in msg

    def test_disconnected(self):
        '''
        An island inside an area is rejected
        '''
        msg = self._broken(
            lambda d: d['ts']['buses'].append({'id': 3, 'vmin': 0.9,
                                               'vmax': 1.1}))
        assert 'not connected' in msg

    def test_missing_root(self):
        msg = self._broken(lambda d: d['ds'][0].update({'root_bus': 9}))
        assert 'root bus 9' in msg

    def test_tie_to_missing_ds(self):
        msg = self._broken(lambda d: d['ties'][0].update({'ds_id': 5}))
        assert 'missing DS 5' in msg

    def test_one_res_per_bus(self):
        msg = self._broken(
            lambda d: d['ds'][0]['res'].append({'bus': 2, 's_rated': 0.01,
                                                'tan_theta': 0.4}))
        assert 'one RES per bus' in msg

    def test_missing_field(self):
        '''
        A record without a required field names the field
        '''
        msg = self._broken(lambda d: d['ts']['buses'][0].pop('vmax'))
        assert '"vmax"' in msg


class TestPowerFlow(unittest.TestCase):

    def test_branch_flow_complex_form(self):
        '''
        P + jQ leaving bus i equals V_i conj(y (V_i - V_j))
        '''
        rs = np.random.RandomState(3)
        for _ in range(20):
            ei, fi, ej, fj = rs.uniform(-1.1, 1.1, 4)
            g, b = rs.uniform(0.1, 5.0), rs.uniform(-20.0, -1.0)
            vi, vj = complex(ei, fi), complex(ej, fj)
            s = vi * np.conj(complex(g, b) * (vi - vj))
            assert_allclose(branch_flow(ei, fi, ej, fj, g, b),
                            [s.real, s.imag], atol=1e-12)

    def test_flow_matrices(self):
        '''
        The quadratic forms of flow_matrices reproduce branch_flow
        '''
        rs = np.random.RandomState(4)
        g, b = 3.0, -7.0
        mp, mq = flow_matrices(g, b)
        assert_allclose(mp, mp.T)
        assert_allclose(mq, mq.T)
        for _ in range(10):
            v = rs.uniform(-1.1, 1.1, 4)
            assert_allclose([v @ mp @ v, v @ mq @ v], branch_flow(*v, g, b),
                            atol=1e-12)

    def test_common_rotation_leaves_flows_unchanged(self):
        '''
        Shifting every voltage angle by the same amount changes neither the
        branch flows nor the bus balances
        '''
        rs = np.random.RandomState(8)
        for _ in range(20):
            ei, fi, ej, fj = rs.uniform(-1.1, 1.1, 4)
            g, b = rs.uniform(0.1, 5.0), rs.uniform(-20.0, -1.0)
            theta = rs.uniform(-np.pi, np.pi)
            c, s = np.cos(theta), np.sin(theta)
            turned = (c * ei - s * fi, s * ei + c * fi,
                      c * ej - s * fj, s * ej + c * fj)
            assert_allclose(branch_flow(*turned, g, b),
                            branch_flow(ei, fi, ej, fj, g, b), atol=1e-12)

        net = parse_case(SMALL_CASE)
        scenario = make_synthetic(net, 'flat', horizon=(0.0, 2.0))
        params = sample_params(scenario, net, 1.0)
        for area in (net.ts, net.ds[4]):
            gv = GridVariables.flat(area)
            gv.e = rs.uniform(0.95, 1.05, gv.e.size)
            gv.f = rs.uniform(-0.1, 0.1, gv.f.size)
            gv.p_g = rs.uniform(0.0, 1.0, gv.p_g.size)
            gv.p_res = rs.uniform(0.0, 0.05, gv.p_res.size)
            before = power_mismatch(area, gv, params)
            theta = 0.7
            e, f = gv.e.copy(), gv.f.copy()
            gv.e = np.cos(theta) * e - np.sin(theta) * f
            gv.f = np.sin(theta) * e + np.cos(theta) * f
            assert_allclose(power_mismatch(area, gv, params), before,
                            atol=1e-12)

    def test_flat_start_mismatch(self):
        '''
        At flat voltage nothing flows, so the balance is injection minus load
        '''
        net = parse_case(SMALL_CASE)
        scenario = make_synthetic(net, 'flat', horizon=(0.0, 2.0))
        params = sample_params(scenario, net, 1.0)
        area = net.ts
        gv = GridVariables.flat(area)
        gv.p_g[0] = 0.3
        mismatch = power_mismatch(area, gv, params, injections={2: (0.1, 0.0)})
        assert_allclose(mismatch, [0.3, -0.5 + 0.1, 0.0, -0.1], atol=1e-12)

    def test_dimension_check(self):
        net = parse_case(SMALL_CASE)
        gv = GridVariables([1.0], [0.0], [0.0], [0.0], [], [])
        with self.assertRaises(DimensionError):
            power_mismatch(net.ts, gv, None)

    def test_case_file_round_trip(self):
        '''
        A case written as JSON loads back to the same network
        '''
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, 'small.json')
            with open(path, 'w') as f:
                json.dump(SMALL_CASE, f)
            net = load_case(path)
        assert [b.id for b in net.ds[4].buses] == [1, 2]
        assert net.ds[4].res_units[0].kind == 'pv'
