'''
AC optimal power flow of one area in rectangular voltage coordinates, cast
as an NlpProblem with the time-varying demand and RES availability folded
into the constraint functions.
'''
import logging
import numpy as np
import scipy.sparse as sp

from .grid import GridVariables, Network, flow_matrices
from .nlp import NlpProblem, QuadraticRows

logger = logging.getLogger(__name__)

# Opposite bound of one-sided rows.
LOOSE = 1e6

# Every finite bound is widened by this, relative to max(1, |bound|), so
# rows pinned by the network itself (zero dispatch without load, zero
# availability) keep a strict interior.
BOUND_RELAX = 1e-8

RES_ROWS = 5


class BranchLimitRows:
    '''
    Apparent-power rows P_ij^2 + Q_ij^2 at the sending end of each branch,
    with P_ij, Q_ij quadratic forms on v = [e_i, f_i, e_j, f_j].
    '''
    def __init__(self, rows, idx, mp, mq, n_rows, n_vars):
        self.rows = np.asarray(rows, dtype=int)
        self.idx = np.asarray(idx, dtype=int).reshape(-1, 4)
        self.mp = np.asarray(mp, dtype=float).reshape(-1, 4, 4)
        self.mq = np.asarray(mq, dtype=float).reshape(-1, 4, 4)
        self.n_rows = n_rows
        self.n_vars = n_vars

    def _flows(self, x):
        v = x[self.idx]
        gp = 2.0 * np.einsum('kij,kj->ki', self.mp, v)
        gq = 2.0 * np.einsum('kij,kj->ki', self.mq, v)
        p = 0.5 * np.einsum('ki,ki->k', gp, v)
        q = 0.5 * np.einsum('ki,ki->k', gq, v)
        return p, q, gp, gq

    def value(self, x):
        out = np.zeros(self.n_rows)
        if self.rows.size:
            p, q, _, _ = self._flows(x)
            out[self.rows] = p ** 2 + q ** 2
        return out

    def jacobian(self, x):
        if not self.rows.size:
            return sp.csr_matrix((self.n_rows, self.n_vars))
        p, q, gp, gq = self._flows(x)
        grad = 2.0 * p[:, None] * gp + 2.0 * q[:, None] * gq
        rows = np.repeat(self.rows, 4)
        return sp.csr_matrix((grad.ravel(), (rows, self.idx.ravel())),
                             shape=(self.n_rows, self.n_vars))

    def hessian(self, x, v):
        if not self.rows.size:
            return sp.csr_matrix((self.n_vars, self.n_vars))
        p, q, gp, gq = self._flows(x)
        local = 2.0 * np.einsum('ki,kj->kij', gp, gp) + \
            2.0 * np.einsum('ki,kj->kij', gq, gq) + \
            4.0 * p[:, None, None] * self.mp + 4.0 * q[:, None, None] * self.mq
        local *= v[self.rows][:, None, None]
        rows = np.repeat(self.idx, 4, axis=1)
        cols = np.tile(self.idx, (1, 4))
        return sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(self.n_vars, self.n_vars))


def area_net_load(area, scenario, t):
    '''
    Total demand minus total RES availability of an area, (P, Q).
    '''
    values, _ = scenario.evaluate(t)
    p = q = 0.0
    for bus in area.load_buses():
        p += values[scenario.column(area.key(bus.id), 'pd')]
        q += values[scenario.column(area.key(bus.id), 'qd')]
    for res in area.res_units:
        p -= values[scenario.column(area.key(res.bus), 'pav')]
    return float(p), float(q)


class OpfProblem(NlpProblem):
    '''
    ACOPF of one area.

    Variables are [e, f, P_g, Q_g, P_res, Q_res] followed by the tie
    variables. A transmission area carries (P_tie, Q_tie) per tied DS, in
    ascending DS id, withdrawn at the interface bus. A distribution area
    built with boundary_root moves its root voltage behind the internal
    variables and injects (P_tie, Q_tie) there, so its last four variables
    [e_root, f_root, P_tie, Q_tie] mirror the TS interface variables; it
    carries no voltage-limit row at the root.

    Equality rows are [P balance per bus, Q balance per bus] plus f = 0 at
    the reference bus when angle_reference is set. Inequality rows are the
    generator limits, the squared voltage limits, the branch limits at the
    sending end, and five rows per RES unit:

        P >= 0,  P - P_av(t) <= 0,  P tan - Q >= 0,  P tan + Q >= 0,
        P^2 + Q^2 <= S^2

    Arguments:
        area (Area): the subsystem
        scenario (Scenario): time-varying parameters
        angle_reference (bool): add the reference-angle row
        ties (list): (ds_id, ts_bus, ds_area) couplings of a TS area
        boundary_root (bool): distribution area coupled at its root
    '''
    def __init__(self, area, scenario, angle_reference=None, ties=(),
                 boundary_root=False):
        self.area = area
        self.scenario = scenario
        self.boundary_root = boundary_root
        self.ties = sorted(ties, key=lambda tie: tie[0])
        if angle_reference is None:
            angle_reference = not boundary_root
        self.angle_reference = angle_reference

        self._layout()
        self._parameters()
        self._equalities()
        self._inequalities()
        self._objective_terms()

        logger.debug('%s problem: n=%d m_eq=%d m_ineq=%d', area.name, self.n,
                     self.m_eq, self.m_ineq)

    def _layout(self):
        area = self.area
        root = area.root_bus if self.boundary_root else None
        voltage_buses = [b.id for b in area.buses if b.id != root]
        nv = len(voltage_buses)
        self.e_idx = {bus: i for i, bus in enumerate(voltage_buses)}
        self.f_idx = {bus: nv + i for i, bus in enumerate(voltage_buses)}
        pos = 2 * nv
        ng = len(area.generators)
        nr = len(area.res_units)
        self.pg_idx = pos + np.arange(ng)
        self.qg_idx = pos + ng + np.arange(ng)
        pos += 2 * ng
        self.pres_idx = pos + np.arange(nr)
        self.qres_idx = pos + nr + np.arange(nr)
        pos += 2 * nr

        # bus id -> (P index, Q index, sign) of tie transfers.
        self.tie_vars = {}
        self.tie_index = {}
        if self.boundary_root:
            self.e_idx[root] = pos
            self.f_idx[root] = pos + 1
            self.tie_vars[root] = [(pos + 2, pos + 3, 1.0)]
            self.tie_index[area.ds_id] = (pos + 2, pos + 3)
            pos += 4
        for ds_id, ts_bus, _ in self.ties:
            self.tie_vars.setdefault(ts_bus, []).append((pos, pos + 1, -1.0))
            self.tie_index[ds_id] = (pos, pos + 1)
            pos += 2
        self.n = pos

    def boundary_indices(self, ds_id=None):
        '''
        Local indices [e_b, f_b, P_tie, Q_tie] of a coupling: the root of a
        coupled distribution area, or the interface of DS ds_id on a TS.
        '''
        if self.boundary_root:
            ds_id = self.area.ds_id
            bus = self.area.root_bus
        else:
            bus = dict((k, b) for k, b, _ in self.ties)[ds_id]
        p, q = self.tie_index[ds_id]
        return np.array([self.e_idx[bus], self.f_idx[bus], p, q])

    def _parameters(self):
        area = self.area
        columns = []
        self.pd_param = {}
        for bus in area.load_buses():
            key = area.key(bus.id)
            self.pd_param[bus.id] = len(columns)
            columns.append(self.scenario.column(key, 'pd'))
            columns.append(self.scenario.column(key, 'qd'))
        self.pav_param = []
        for res in area.res_units:
            self.pav_param.append(len(columns))
            columns.append(self.scenario.column(area.key(res.bus), 'pav'))
        self.pav_param = np.asarray(self.pav_param, dtype=int)
        self._columns = np.asarray(columns, dtype=int)

    def params(self, t):
        'Parameter values and rates this problem reads, at t.'
        values, rates = self.scenario.evaluate(t)
        return values[self._columns], rates[self._columns]

    def _equalities(self):
        area = self.area
        nb = len(area.buses)
        self.m_eq = 2 * nb + (1 if self.angle_reference else 0)
        rows = QuadraticRows(self.m_eq, self.n)

        def p_row(bus):
            return area.bus_index[bus]

        def q_row(bus):
            return nb + area.bus_index[bus]

        for k, gen in enumerate(area.generators):
            rows.add_linear(p_row(gen.bus), self.pg_idx[k], 1.0)
            rows.add_linear(q_row(gen.bus), self.qg_idx[k], 1.0)
        for k, res in enumerate(area.res_units):
            rows.add_linear(p_row(res.bus), self.pres_idx[k], 1.0)
            rows.add_linear(q_row(res.bus), self.qres_idx[k], 1.0)
        for bus, ties in self.tie_vars.items():
            for p, q, sign in ties:
                rows.add_linear(p_row(bus), p, sign)
                rows.add_linear(q_row(bus), q, sign)
        for bus, k in self.pd_param.items():
            rows.add_param(p_row(bus), k, -1.0)
            rows.add_param(q_row(bus), k + 1, -1.0)

        for br in area.branches:
            mp, mq = flow_matrices(br.g, br.b)
            for i, j in ((br.from_bus, br.to_bus), (br.to_bus, br.from_bus)):
                idx = [self.e_idx[i], self.f_idx[i], self.e_idx[j],
                       self.f_idx[j]]
                for a in range(4):
                    for b in range(4):
                        if mp[a, b] != 0.0:
                            rows.add_quadratic(p_row(i), idx[a], idx[b],
                                               -mp[a, b])
                        if mq[a, b] != 0.0:
                            rows.add_quadratic(q_row(i), idx[a], idx[b],
                                               -mq[a, b])

        if self.angle_reference:
            ref = area.ref_bus if area.ref_bus is not None else area.root_bus
            rows.add_linear(2 * nb, self.f_idx[ref], 1.0)

        self.eq_rows = rows.freeze()

    def _inequalities(self):
        area = self.area
        root = area.root_bus if self.boundary_root else None
        limited = [bus for bus in area.buses if bus.id != root]
        ng = len(area.generators)
        nbr = len(area.branches)
        nr = len(area.res_units)
        self.m_ineq = ng + len(limited) + nbr + RES_ROWS * nr
        lower = np.zeros(self.m_ineq)
        upper = np.zeros(self.m_ineq)
        rows = QuadraticRows(self.m_ineq, self.n)

        r = 0
        for k, gen in enumerate(area.generators):
            rows.add_linear(r, self.pg_idx[k], 1.0)
            lower[r], upper[r] = gen.p_min, gen.p_max
            r += 1
        for bus in limited:
            rows.add_quadratic(r, self.e_idx[bus.id], self.e_idx[bus.id], 1.0)
            rows.add_quadratic(r, self.f_idx[bus.id], self.f_idx[bus.id], 1.0)
            lower[r], upper[r] = bus.v_min ** 2, bus.v_max ** 2
            r += 1

        branch_rows, branch_idx, mps, mqs = [], [], [], []
        for br in area.branches:
            i, j = br.from_bus, br.to_bus
            mp, mq = flow_matrices(br.g, br.b)
            branch_rows.append(r)
            branch_idx.append([self.e_idx[i], self.f_idx[i], self.e_idx[j],
                               self.f_idx[j]])
            mps.append(mp)
            mqs.append(mq)
            lower[r], upper[r] = -LOOSE, br.s_max ** 2
            r += 1
        self.branch_rows = BranchLimitRows(branch_rows, branch_idx, mps, mqs,
                                           self.m_ineq, self.n)

        for k, res in enumerate(area.res_units):
            p, q = self.pres_idx[k], self.qres_idx[k]
            rows.add_linear(r, p, 1.0)
            lower[r], upper[r] = 0.0, LOOSE
            rows.add_linear(r + 1, p, 1.0)
            rows.add_param(r + 1, self.pav_param[k], -1.0)
            lower[r + 1], upper[r + 1] = -LOOSE, 0.0
            rows.add_linear(r + 2, p, res.tan_theta)
            rows.add_linear(r + 2, q, -1.0)
            lower[r + 2], upper[r + 2] = 0.0, LOOSE
            rows.add_linear(r + 3, p, res.tan_theta)
            rows.add_linear(r + 3, q, 1.0)
            lower[r + 3], upper[r + 3] = 0.0, LOOSE
            rows.add_quadratic(r + 4, p, p, 1.0)
            rows.add_quadratic(r + 4, q, q, 1.0)
            lower[r + 4], upper[r + 4] = -LOOSE, res.s_rated ** 2
            r += RES_ROWS

        self.ineq_rows = rows.freeze()
        self.h_lower = lower - BOUND_RELAX * np.maximum(1.0, np.abs(lower))
        self.h_upper = upper + BOUND_RELAX * np.maximum(1.0, np.abs(upper))

    def _objective_terms(self):
        area = self.area
        self.c2 = np.array([gen.c2 for gen in area.generators])
        self.c1 = np.array([gen.c1 for gen in area.generators])
        self.c0 = np.array([gen.c0 for gen in area.generators])
        self.cp = np.array([res.cp for res in area.res_units])
        self.cq = np.array([res.cq for res in area.res_units])
        diag = np.zeros(self.n)
        diag[self.pg_idx] = 2.0 * self.c2
        diag[self.pres_idx] = 2.0 * self.cp
        diag[self.qres_idx] = 2.0 * self.cq
        self._hessian = sp.diags(diag).tocsr()

    def objective(self, x, t):
        values, _ = self.params(t)
        pg = x[self.pg_idx]
        pav = values[self.pav_param]
        return float(
            np.sum(self.c2 * pg ** 2 + self.c1 * pg + self.c0) +
            np.sum(self.cp * (pav - x[self.pres_idx]) ** 2 +
                   self.cq * x[self.qres_idx] ** 2)
        )

    def generation_cost(self, x):
        pg = x[self.pg_idx]
        return float(np.sum(self.c2 * pg ** 2 + self.c1 * pg + self.c0))

    def gradient(self, x, t):
        values, _ = self.params(t)
        grad = np.zeros(self.n)
        grad[self.pg_idx] = 2.0 * self.c2 * x[self.pg_idx] + self.c1
        grad[self.pres_idx] = \
            -2.0 * self.cp * (values[self.pav_param] - x[self.pres_idx])
        grad[self.qres_idx] = 2.0 * self.cq * x[self.qres_idx]
        return grad

    def gradient_dt(self, x, t):
        _, rates = self.params(t)
        out = np.zeros(self.n)
        out[self.pres_idx] = -2.0 * self.cp * rates[self.pav_param]
        return out

    def hessian(self, x, t):
        return self._hessian

    def eq(self, x, t):
        values, _ = self.params(t)
        return self.eq_rows.value(x, values)

    def eq_dt(self, x, t):
        _, rates = self.params(t)
        return self.eq_rows.rate(rates)

    def eq_jacobian(self, x, t):
        return self.eq_rows.jacobian(x)

    def eq_hessian(self, x, y, t):
        return self.eq_rows.hessian(y)

    def ineq(self, x, t):
        values, _ = self.params(t)
        return self.ineq_rows.value(x, values) + self.branch_rows.value(x)

    def ineq_dt(self, x, t):
        _, rates = self.params(t)
        return self.ineq_rows.rate(rates)

    def ineq_jacobian(self, x, t):
        return (self.ineq_rows.jacobian(x) +
                self.branch_rows.jacobian(x)).tocsr()

    def ineq_hessian(self, x, v, t):
        return (self.ineq_rows.hessian(v) +
                self.branch_rows.hessian(x, v)).tocsr()

    def initial_point(self, t):
        '''
        Flat voltage, generators at mid range, RES at availability, ties at
        the coupled DS's net load.
        '''
        area = self.area
        values, _ = self.params(t)
        x = np.zeros(self.n)
        for bus in area.buses:
            x[self.e_idx[bus.id]] = 1.0
        for k, gen in enumerate(area.generators):
            x[self.pg_idx[k]] = 0.5 * (gen.p_min + gen.p_max)
        x[self.pres_idx] = values[self.pav_param]
        if self.boundary_root:
            p, q = self.tie_index[area.ds_id]
            x[p], x[q] = area_net_load(area, self.scenario, t)
        for ds_id, _, ds_area in self.ties:
            p, q = self.tie_index[ds_id]
            x[p], x[q] = area_net_load(ds_area, self.scenario, t)
        return x

    def unpack(self, x):
        'GridVariables of a local vector, buses in area order.'
        area = self.area
        return GridVariables(
            [x[self.e_idx[bus.id]] for bus in area.buses],
            [x[self.f_idx[bus.id]] for bus in area.buses],
            x[self.pg_idx], x[self.qg_idx], x[self.pres_idx], x[self.qres_idx]
        )

    def tie_injections(self, x):
        'Tie transfers as (P, Q) injections per bus id.'
        out = {}
        for bus, ties in self.tie_vars.items():
            p = sum(sign * x[pi] for pi, _, sign in ties)
            q = sum(sign * x[qi] for _, qi, sign in ties)
            out[bus] = (p, q)
        return out

    def voltage_magnitudes(self, x):
        return {bus.id: float(np.hypot(x[self.e_idx[bus.id]],
                                       x[self.f_idx[bus.id]]))
                for bus in self.area.buses}


def build_nlp(net, scenario, angle_reference=None):
    '''
    NlpProblem of an area, or of a whole coupled network.

    Arguments:
        net (Area or Network): an area is built stand-alone (with the
            reference-angle row unless angle_reference is False); a network
            is built as the centralized coupled problem
        scenario (Scenario): time-varying parameters

    Returns:
        NlpProblem
    '''
    if isinstance(net, Network):
        from .coordination import partition_network
        return partition_network(net, scenario).centralized

    if angle_reference is None:
        angle_reference = True

    return OpfProblem(net, scenario, angle_reference=angle_reference)
