'''
Generic time-varying NLP

    min f(x, t)  s.t.  g(x, t) = 0,  h_lower <= h(x, t) <= h_upper

its primal-dual state, and the KKT residual of the barrier Lagrangian

    L = f - y'g - w'(h + u - h_upper) - z'(h - l - h_lower)
        - mu (sum ln u + sum ln l)

with the residual convention used throughout the package:

    r_x = grad f - Jg'y - Jh'(w + z)     r_y = g
    r_w = h + u - h_upper                r_z = h - l - h_lower
    r_u = u * w + mu                     r_l = l * z - mu

so an interior point has u, l, z > 0 and w < 0. The time-derivative half
holds the partial derivatives of these blocks in t at fixed (x, y, w, z, u,
l, mu); mu is frozen within a step so the complementarity rows have none.
'''
import logging
import numpy as np
import scipy.sparse as sp

from .errors import DimensionError

logger = logging.getLogger(__name__)

BLOCKS = ('x', 'y', 'w', 'z', 'u', 'l')


class NlpProblem:
    '''
    Callback contract consumed by pdipm, tracker and coordination. Matrices
    are scipy.sparse; vectors are 1-D numpy arrays. Jacobians of g and h do
    not depend on t for the problems in this package, which keeps the
    time derivative of the stationarity block equal to d(grad f)/dt.
    '''
    n = 0
    m_eq = 0
    m_ineq = 0

    def __init__(self):
        self.h_lower = np.zeros(self.m_ineq)
        self.h_upper = np.zeros(self.m_ineq)

    def objective(self, x, t):
        raise NotImplementedError

    def gradient(self, x, t):
        raise NotImplementedError

    def hessian(self, x, t):
        raise NotImplementedError

    def gradient_dt(self, x, t):
        return np.zeros(self.n)

    def eq(self, x, t):
        return np.zeros(self.m_eq)

    def eq_jacobian(self, x, t):
        return sp.csr_matrix((self.m_eq, self.n))

    def eq_hessian(self, x, y, t):
        'Sum of y_m times the Hessian of g_m.'
        return sp.csr_matrix((self.n, self.n))

    def eq_dt(self, x, t):
        return np.zeros(self.m_eq)

    def ineq(self, x, t):
        return np.zeros(self.m_ineq)

    def ineq_jacobian(self, x, t):
        return sp.csr_matrix((self.m_ineq, self.n))

    def ineq_hessian(self, x, v, t):
        'Sum of v_m times the Hessian of h_m.'
        return sp.csr_matrix((self.n, self.n))

    def ineq_dt(self, x, t):
        return np.zeros(self.m_ineq)

    def initial_point(self, t):
        return np.zeros(self.n)


class QuadraticRows:
    '''
    Rows of the form

        row_r(x, p) = sum c x_a x_b + sum c x_a + const + sum c p_k

    where p is a parameter vector. Terms are registered one by one and
    frozen into index arrays; Hessians of such rows do not depend on x.
    '''
    def __init__(self, n_rows, n_vars):
        self.n_rows = n_rows
        self.n_vars = n_vars
        self._quad = []
        self._lin = []
        self._par = []
        self.const = np.zeros(n_rows)

    def add_quadratic(self, row, a, b, coef):
        self._quad.append((row, a, b, coef))

    def add_linear(self, row, a, coef):
        self._lin.append((row, a, coef))

    def add_param(self, row, k, coef):
        self._par.append((row, k, coef))

    def freeze(self):
        def arrays(terms, width):
            if not terms:
                return [np.zeros(0, dtype=int)] * (width - 1) + [np.zeros(0)]
            cols = list(zip(*terms))
            return [np.asarray(c, dtype=int) for c in cols[:-1]] + \
                [np.asarray(cols[-1], dtype=float)]

        self.q_row, self.q_a, self.q_b, self.q_c = arrays(self._quad, 4)
        self.l_row, self.l_a, self.l_c = arrays(self._lin, 3)
        self.p_row, self.p_k, self.p_c = arrays(self._par, 3)

        return self

    def value(self, x, params):
        out = self.const.copy()
        out += np.bincount(self.q_row, self.q_c * x[self.q_a] * x[self.q_b],
                           minlength=self.n_rows)
        out += np.bincount(self.l_row, self.l_c * x[self.l_a],
                           minlength=self.n_rows)
        out += np.bincount(self.p_row, self.p_c * params[self.p_k],
                           minlength=self.n_rows)
        return out

    def rate(self, param_rates):
        return np.bincount(self.p_row, self.p_c * param_rates[self.p_k],
                           minlength=self.n_rows).astype(float)

    def jacobian(self, x):
        rows = np.concatenate([self.q_row, self.q_row, self.l_row])
        cols = np.concatenate([self.q_a, self.q_b, self.l_a])
        data = np.concatenate([self.q_c * x[self.q_b], self.q_c * x[self.q_a],
                               self.l_c])
        return sp.csr_matrix((data, (rows, cols)),
                             shape=(self.n_rows, self.n_vars))

    def hessian(self, v):
        data = v[self.q_row] * self.q_c
        rows = np.concatenate([self.q_a, self.q_b])
        cols = np.concatenate([self.q_b, self.q_a])
        return sp.csr_matrix((np.concatenate([data, data]), (rows, cols)),
                             shape=(self.n_vars, self.n_vars))


class PrimalDualState:
    '''
    Aggregate primal-dual point [x; y; w; z; u; l] plus barrier parameter.
    mu is a scalar, or an array with one entry per inequality row when
    agents with their own barrier parameters are merged.
    '''
    def __init__(self, x, y, w, z, u, l, mu=0.0):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.z = np.asarray(z, dtype=float)
        self.u = np.asarray(u, dtype=float)
        self.l = np.asarray(l, dtype=float)
        self.mu = mu

    def blocks(self):
        return self.x, self.y, self.w, self.z, self.u, self.l

    def vector(self):
        return np.concatenate(self.blocks())

    def copy(self):
        mu = self.mu.copy() if isinstance(self.mu, np.ndarray) else self.mu
        return PrimalDualState(*(b.copy() for b in self.blocks()), mu=mu)

    @property
    def gap(self):
        return float(self.l @ self.z - self.u @ self.w)

    def is_interior(self):
        return bool(np.all(self.u > 0.0) and np.all(self.l > 0.0) and
                    np.all(self.z > 0.0) and np.all(self.w < 0.0))

    def check(self, p):
        expected = (p.n, p.m_eq, p.m_ineq, p.m_ineq, p.m_ineq, p.m_ineq)
        actual = tuple(b.size for b in self.blocks())
        if expected != actual:
            raise DimensionError('state blocks {} do not match problem {}'.format(
                actual, expected))


class ResidualBundle:
    '''
    KKT residual blocks and their partial time derivatives, each a tuple
    ordered as BLOCKS.
    '''
    def __init__(self, residual, derivative):
        self.residual = tuple(residual)
        self.derivative = tuple(derivative)

    def __getattr__(self, name):
        # rx, ry, ... and rxt, ryt, ...
        if name.startswith('r') and name[1:2] in BLOCKS:
            i = BLOCKS.index(name[1])
            if name[2:] == '':
                return self.residual[i]
            if name[2:] == 't':
                return self.derivative[i]
        raise AttributeError(name)

    def weighted(self, alpha):
        '''
        alpha * residual + time derivative, block by block.
        '''
        return tuple(alpha * r + rt
                     for r, rt in zip(self.residual, self.derivative))

    def without_derivative(self):
        return ResidualBundle(self.residual,
                              [np.zeros_like(r) for r in self.residual])

    def scaled(self, factor):
        return ResidualBundle([factor * r for r in self.residual],
                              [factor * r for r in self.derivative])


def _inf_norm(blocks):
    return max([float(np.max(np.abs(b))) for b in blocks if b.size] + [0.0])


def kkt_residual(p, s, t):
    '''
    Residual half of the KKT bundle at state s; the derivative half is zero.
    '''
    s.check(p)
    jg = p.eq_jacobian(s.x, t)
    jh = p.ineq_jacobian(s.x, t)
    h = p.ineq(s.x, t)

    rx = p.gradient(s.x, t) - jg.T @ s.y - jh.T @ (s.w + s.z)
    ry = p.eq(s.x, t)
    rw = h + s.u - p.h_upper
    rz = h - s.l - p.h_lower
    ru = s.u * s.w + s.mu
    rl = s.l * s.z - s.mu
    residual = (rx, ry, rw, rz, ru, rl)

    return ResidualBundle(residual, [np.zeros_like(r) for r in residual])


def kkt_time_derivative(p, s, t):
    '''
    Partial time derivative of each residual block at fixed state; the
    residual half is zero.
    '''
    s.check(p)
    ht = p.ineq_dt(s.x, t)
    derivative = (p.gradient_dt(s.x, t), p.eq_dt(s.x, t), ht, ht.copy(),
                  np.zeros(p.m_ineq), np.zeros(p.m_ineq))

    return ResidualBundle([np.zeros_like(d) for d in derivative], derivative)


def kkt_bundle(p, s, t, prediction=True):
    '''
    Both halves; the derivative half is zero when prediction is off.
    '''
    bundle = kkt_residual(p, s, t)
    if prediction:
        bundle.derivative = kkt_time_derivative(p, s, t).derivative
    return bundle


def kkt_error(p, s, t):
    'Infinity norm over all residual blocks.'
    return _inf_norm(kkt_residual(p, s, t).residual)


def lagrangian(p, s, t):
    '''
    Scalar barrier Lagrangian; its x-gradient is the stationarity block.
    '''
    h = p.ineq(s.x, t)
    mu = np.broadcast_to(s.mu, s.u.shape)
    return float(
        p.objective(s.x, t) - s.y @ p.eq(s.x, t) -
        s.w @ (h + s.u - p.h_upper) - s.z @ (h - s.l - p.h_lower) -
        mu @ np.log(s.u) - mu @ np.log(s.l)
    )


def _scatter(matrix, row_map, col_map, shape):
    coo = sp.coo_matrix(matrix)
    return sp.csr_matrix((coo.data, (row_map[coo.row], col_map[coo.col])),
                         shape=shape)


class StackedProblem(NlpProblem):
    '''
    Scatter composition of agent problems into one global problem.

    Each agent contributes its objective; its local variable j is global
    variable var_map[j]; its constraint rows are stacked in agent order.
    Shared variables (the boundary) appear in several agents' maps and
    their contributions add up.

    Arguments:
        agents (list): (NlpProblem, var_map) pairs
        n (int): global variable count
    '''
    def __init__(self, agents, n):
        self.agents = [(p, np.asarray(m, dtype=int)) for p, m in agents]
        self.n = n
        self.eq_offsets = np.cumsum([0] + [p.m_eq for p, _ in self.agents])
        self.ineq_offsets = np.cumsum([0] + [p.m_ineq for p, _ in self.agents])
        self.m_eq = int(self.eq_offsets[-1])
        self.m_ineq = int(self.ineq_offsets[-1])
        self.h_lower = np.concatenate(
            [p.h_lower for p, _ in self.agents] + [np.zeros(0)])
        self.h_upper = np.concatenate(
            [p.h_upper for p, _ in self.agents] + [np.zeros(0)])

        # The first agent that maps a variable owns it.
        self.owned = []
        seen = np.zeros(n, dtype=bool)
        for _, var_map in self.agents:
            own = ~seen[var_map]
            self.owned.append(own)
            seen[var_map] = True
        if not seen.all():
            raise DimensionError('global variables not covered by any agent')

    def _local(self, x):
        return [(p, m, x[m]) for p, m in self.agents]

    def _rows(self, offsets, k, size):
        return np.arange(offsets[k], offsets[k] + size)

    def _vector(self, parts, size):
        return np.concatenate(parts + [np.zeros(0)]) if parts else np.zeros(size)

    def objective(self, x, t):
        return sum(p.objective(xl, t) for p, _, xl in self._local(x))

    def gradient(self, x, t):
        out = np.zeros(self.n)
        for p, m, xl in self._local(x):
            np.add.at(out, m, p.gradient(xl, t))
        return out

    def gradient_dt(self, x, t):
        out = np.zeros(self.n)
        for p, m, xl in self._local(x):
            np.add.at(out, m, p.gradient_dt(xl, t))
        return out

    def hessian(self, x, t):
        out = sp.csr_matrix((self.n, self.n))
        for p, m, xl in self._local(x):
            out = out + _scatter(p.hessian(xl, t), m, m, (self.n, self.n))
        return out

    def eq(self, x, t):
        return self._vector([p.eq(xl, t) for p, _, xl in self._local(x)],
                            self.m_eq)

    def eq_dt(self, x, t):
        return self._vector([p.eq_dt(xl, t) for p, _, xl in self._local(x)],
                            self.m_eq)

    def ineq(self, x, t):
        return self._vector([p.ineq(xl, t) for p, _, xl in self._local(x)],
                            self.m_ineq)

    def ineq_dt(self, x, t):
        return self._vector([p.ineq_dt(xl, t) for p, _, xl in self._local(x)],
                            self.m_ineq)

    def _jacobian(self, x, t, name, offsets, m):
        blocks = []
        for k, (p, var_map, xl) in enumerate(self._local(x)):
            local = getattr(p, name)(xl, t)
            rows = self._rows(offsets, k, local.shape[0])
            blocks.append(_scatter(local, rows, var_map, (m, self.n)))
        return sum(blocks, sp.csr_matrix((m, self.n)))

    def eq_jacobian(self, x, t):
        return self._jacobian(x, t, 'eq_jacobian', self.eq_offsets, self.m_eq)

    def ineq_jacobian(self, x, t):
        return self._jacobian(x, t, 'ineq_jacobian', self.ineq_offsets,
                              self.m_ineq)

    def _constraint_hessian(self, x, v, t, name, offsets):
        out = sp.csr_matrix((self.n, self.n))
        for k, (p, m, xl) in enumerate(self._local(x)):
            vl = v[offsets[k]:offsets[k + 1]]
            out = out + _scatter(getattr(p, name)(xl, vl, t), m, m,
                                 (self.n, self.n))
        return out

    def eq_hessian(self, x, y, t):
        return self._constraint_hessian(x, y, t, 'eq_hessian', self.eq_offsets)

    def ineq_hessian(self, x, v, t):
        return self._constraint_hessian(x, v, t, 'ineq_hessian',
                                        self.ineq_offsets)

    def initial_point(self, t):
        x = np.zeros(self.n)
        for (p, m), own in zip(self.agents, self.owned):
            x[m[own]] = p.initial_point(t)[own]
        return x

    def split(self, s):
        '''
        Agent-local states of a global state; mu follows the row stacking.
        '''
        mu = np.broadcast_to(s.mu, (self.m_ineq,))
        states = []
        for k, (p, m) in enumerate(self.agents):
            eq = slice(self.eq_offsets[k], self.eq_offsets[k + 1])
            ineq = slice(self.ineq_offsets[k], self.ineq_offsets[k + 1])
            local_mu = mu[ineq]
            if local_mu.size and np.all(local_mu == local_mu[0]):
                local_mu = float(local_mu[0])
            else:
                local_mu = local_mu.copy()
            states.append(PrimalDualState(
                s.x[m], s.y[eq], s.w[ineq], s.z[ineq], s.u[ineq], s.l[ineq],
                mu=local_mu))
        return states

    def merge(self, states):
        '''
        Global state from agent-local states; owned variables win and each
        agent's mu is carried on its own inequality rows.
        '''
        x = np.zeros(self.n)
        for (p, m), own, s in zip(self.agents, self.owned, states):
            x[m[own]] = s.x[own]
        mu = np.concatenate(
            [np.broadcast_to(s.mu, (p.m_ineq,)).astype(float)
             for (p, _), s in zip(self.agents, states)] + [np.zeros(0)])

        def stack(name):
            return np.concatenate([getattr(s, name) for s in states] +
                                  [np.zeros(0)])

        return PrimalDualState(x, stack('y'), stack('w'), stack('z'),
                               stack('u'), stack('l'), mu=mu)


class PinnedProblem(NlpProblem):
    '''
    A problem with extra equality rows holding chosen variables at fixed
    values, and optionally bus voltage magnitudes (e^2 + f^2 = V^2).

    Arguments:
        base (NlpProblem): problem to extend
        fixed (dict): variable index -> value
        magnitudes (list): (e index, f index, V) triples
    '''
    def __init__(self, base, fixed=None, magnitudes=()):
        self.base = base
        self.fixed = dict(fixed or {})
        self.magnitudes = list(magnitudes)
        self.n = base.n
        self.m_ineq = base.m_ineq
        self.h_lower = base.h_lower
        self.h_upper = base.h_upper
        n_pins = len(self.fixed) + len(self.magnitudes)
        self.m_eq = base.m_eq + n_pins

        rows = QuadraticRows(n_pins, self.n)
        for r, (j, value) in enumerate(sorted(self.fixed.items())):
            rows.add_linear(r, j, 1.0)
            rows.const[r] = -value
        for r, (ie, jf, vm) in enumerate(self.magnitudes, len(self.fixed)):
            rows.add_quadratic(r, ie, ie, 1.0)
            rows.add_quadratic(r, jf, jf, 1.0)
            rows.const[r] = -vm ** 2
        self.pins = rows.freeze()
        self._no_params = np.zeros(0)

    def objective(self, x, t):
        return self.base.objective(x, t)

    def gradient(self, x, t):
        return self.base.gradient(x, t)

    def gradient_dt(self, x, t):
        return self.base.gradient_dt(x, t)

    def hessian(self, x, t):
        return self.base.hessian(x, t)

    def eq(self, x, t):
        return np.concatenate([self.base.eq(x, t),
                               self.pins.value(x, self._no_params)])

    def eq_dt(self, x, t):
        return np.concatenate([self.base.eq_dt(x, t),
                               np.zeros(self.pins.n_rows)])

    def eq_jacobian(self, x, t):
        return sp.vstack([self.base.eq_jacobian(x, t),
                          self.pins.jacobian(x)]).tocsr()

    def eq_hessian(self, x, y, t):
        m = self.base.m_eq
        return self.base.eq_hessian(x, y[:m], t) + self.pins.hessian(y[m:])

    def ineq(self, x, t):
        return self.base.ineq(x, t)

    def ineq_dt(self, x, t):
        return self.base.ineq_dt(x, t)

    def ineq_jacobian(self, x, t):
        return self.base.ineq_jacobian(x, t)

    def ineq_hessian(self, x, v, t):
        return self.base.ineq_hessian(x, v, t)

    def initial_point(self, t):
        x = self.base.initial_point(t)
        for j, value in self.fixed.items():
            x[j] = value
        for ie, jf, vm in self.magnitudes:
            scale = vm / max(np.hypot(x[ie], x[jf]), 1e-12)
            x[ie] *= scale
            x[jf] *= scale
        return x
