'''
Shared test problems and finite-difference checks.
'''
import numpy as np
import scipy.sparse as sp

from gridtrack.grid import load_case, parse_case
from gridtrack.harness import resolve_case
from gridtrack.nlp import NlpProblem, PrimalDualState
from gridtrack.scenario import make_synthetic


def bundled(name, shape='flat', horizon=(0.0, 10.0), **kwargs):
    'A bundled case and a synthetic scenario for it.'
    net = load_case(resolve_case(name))
    return net, make_synthetic(net, shape, horizon=horizon, **kwargs)


class RandomNlp(NlpProblem):
    '''
    Dense problem with quadratic rows and parameters drifting linearly in t:

        f = 1/2 x'Qx + (c + t d)'x
        g_i = a_i'x + 1/2 x'B_i x - b_i - t e_i
        h_j = c_j'x + 1/2 x'D_j x + t k_j,   -2 <= h <= 2
    '''
    def __init__(self, n=6, m_eq=2, m_ineq=4, seed=0):
        rs = np.random.RandomState(seed)
        self.n, self.m_eq, self.m_ineq = n, m_eq, m_ineq

        def spd(scale):
            m = rs.normal(size=(n, n))
            return scale * (m @ m.T / n + np.eye(n))

        def sym(scale):
            m = rs.normal(size=(n, n)) * scale
            return 0.5 * (m + m.T)

        self.Q = spd(1.0)
        self.c = rs.normal(size=n)
        self.d = rs.normal(size=n)
        self.A = rs.normal(size=(m_eq, n))
        self.B = [sym(0.1) for _ in range(m_eq)]
        self.b = rs.normal(size=m_eq) * 0.1
        self.e = rs.normal(size=m_eq) * 0.1
        self.C = rs.normal(size=(m_ineq, n))
        self.D = [sym(0.1) for _ in range(m_ineq)]
        self.k = rs.normal(size=m_ineq) * 0.1
        self.h_lower = -2.0 * np.ones(m_ineq)
        self.h_upper = 2.0 * np.ones(m_ineq)

    def objective(self, x, t):
        return float(0.5 * x @ self.Q @ x + (self.c + t * self.d) @ x)

    def gradient(self, x, t):
        return self.Q @ x + self.c + t * self.d

    def gradient_dt(self, x, t):
        return self.d.copy()

    def hessian(self, x, t):
        return sp.csr_matrix(self.Q)

    def eq(self, x, t):
        quad = np.array([0.5 * x @ B @ x for B in self.B])
        return self.A @ x + quad - self.b - t * self.e

    def eq_dt(self, x, t):
        return -self.e.copy()

    def eq_jacobian(self, x, t):
        return sp.csr_matrix(self.A + np.array([B @ x for B in self.B]))

    def eq_hessian(self, x, y, t):
        return sp.csr_matrix(sum(yi * B for yi, B in zip(y, self.B)))

    def ineq(self, x, t):
        quad = np.array([0.5 * x @ D @ x for D in self.D])
        return self.C @ x + quad + t * self.k

    def ineq_dt(self, x, t):
        return self.k.copy()

    def ineq_jacobian(self, x, t):
        return sp.csr_matrix(self.C + np.array([D @ x for D in self.D]))

    def ineq_hessian(self, x, v, t):
        return sp.csr_matrix(sum(vi * D for vi, D in zip(v, self.D)))

    def initial_point(self, t):
        return np.zeros(self.n)


class ScalarTracking(NlpProblem):
    '''
    min (x - t)^2 with no constraints; the optimum moves at unit speed.
    '''
    n = 1

    def __init__(self):
        self.m_eq = 0
        self.m_ineq = 0
        self.h_lower = np.zeros(0)
        self.h_upper = np.zeros(0)

    def objective(self, x, t):
        return float((x[0] - t) ** 2)

    def gradient(self, x, t):
        return np.array([2.0 * (x[0] - t)])

    def gradient_dt(self, x, t):
        return np.array([-2.0])

    def hessian(self, x, t):
        return sp.csr_matrix([[2.0]])

    def eq(self, x, t):
        return np.zeros(0)

    def eq_dt(self, x, t):
        return np.zeros(0)

    def eq_jacobian(self, x, t):
        return sp.csr_matrix((0, 1))

    def eq_hessian(self, x, y, t):
        return sp.csr_matrix((1, 1))

    ineq = eq
    ineq_dt = eq_dt
    ineq_jacobian = eq_jacobian
    ineq_hessian = eq_hessian

    def initial_point(self, t):
        return np.array([t])


def random_interior(p, t, rs, mu=0.05):
    '''
    Strictly interior state around the problem's initial point.
    '''
    x = p.initial_point(t) + rs.uniform(-0.02, 0.02, p.n)
    h = p.ineq(x, t)
    u = np.maximum(p.h_upper - h, 0.1) * rs.uniform(0.5, 1.5, p.m_ineq)
    l = np.maximum(h - p.h_lower, 0.1) * rs.uniform(0.5, 1.5, p.m_ineq)
    return PrimalDualState(x, rs.normal(size=p.m_eq),
                           -rs.uniform(0.1, 1.0, p.m_ineq),
                           rs.uniform(0.1, 1.0, p.m_ineq), u, l, mu=mu)


def fd_directional(func, x, v, h=1e-6):
    'Central difference of func along v.'
    return (np.asarray(func(x + h * v)) - np.asarray(func(x - h * v))) / \
        (2.0 * h)


def fd_time(func, t, h=1e-5):
    return (np.asarray(func(t + h)) - np.asarray(func(t - h))) / (2.0 * h)


def relative_gap(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if not b.size:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1.0))


def two_bus_case(load=(0.5, 0.1)):
    'Stand-alone two-bus transmission system: a generator feeding one load.'
    return parse_case({
        'ts': {
            'ref_bus': 1,
            'buses': [
                {'id': 1, 'vmin': 0.95, 'vmax': 1.05},
                {'id': 2, 'vmin': 0.95, 'vmax': 1.05, 'pd': load[0],
                 'qd': load[1]}
            ],
            'branches': [{'from': 1, 'to': 2, 'g': 2.0, 'b': -10.0,
                          'smax': 2.0}],
            'generators': [{'bus': 1, 'pmin': 0.0, 'pmax': 2.0, 'c2': 10.0,
                            'c1': 5.0}]
        }
    })


def loads_only_case(with_load=True):
    '''
    Two-bus TS with one three-bus DS that carries loads but no RES;
    without load every demand is zero.
    '''
    pd = (0.5, 0.05, 0.04) if with_load else (0.0, 0.0, 0.0)
    qd = (0.1, 0.02, 0.01) if with_load else (0.0, 0.0, 0.0)
    return parse_case({
        'ts': {
            'ref_bus': 1,
            'buses': [
                {'id': 1, 'vmin': 0.95, 'vmax': 1.05},
                {'id': 2, 'vmin': 0.95, 'vmax': 1.05, 'pd': pd[0],
                 'qd': qd[0]}
            ],
            'branches': [{'from': 1, 'to': 2, 'g': 2.0, 'b': -10.0,
                          'smax': 2.0}],
            'generators': [{'bus': 1, 'pmin': 0.0, 'pmax': 2.0, 'c2': 10.0,
                            'c1': 5.0, 'c0': 1.0}]
        },
        'ds': [{
            'id': 1,
            'root_bus': 1,
            'buses': [
                {'id': 1, 'vmin': 0.9, 'vmax': 1.1},
                {'id': 2, 'vmin': 0.9, 'vmax': 1.1, 'pd': pd[1], 'qd': qd[1]},
                {'id': 3, 'vmin': 0.9, 'vmax': 1.1, 'pd': pd[2], 'qd': qd[2]}
            ],
            'branches': [
                {'from': 1, 'to': 2, 'g': 5.0, 'b': -10.0, 'smax': 1.0},
                {'from': 2, 'to': 3, 'g': 5.0, 'b': -10.0, 'smax': 1.0}
            ]
        }],
        'ties': [{'ts_bus': 2, 'ds_id': 1}]
    })

