'''
Primal-dual interior-point machinery: the reduced Newton correction system,
its sparse bordered solve, increment recovery, step lengths, barrier update
and a fully converged solver used as the tracking oracle.

With R = alpha * residual + time derivative (block by block) the Newton
system J d = -R is reduced by eliminating (w, z, u, l) to

    [ H    -Jg' ] [dx]   [R_x]
    [ -Jg   0   ] [dy] = [R_y]

    H   = Hess(L) + Jh' diag(z / l - w / u) Jh
    R_x = -R~x - Jh' (R~u / u - w R~w / u + R~l / l + z R~z / l)
    R_y = R~y

and the remaining blocks are recovered as

    du = -R~w - Jh dx           dl = R~z + Jh dx
    dw = -(R~u + w du) / u      dz = -(R~l + z dl) / l
'''
import logging
import numpy as np
import scipy.linalg
import scipy.sparse as sp

from scipy.sparse.csgraph import reverse_cuthill_mckee, structural_rank
from scipy.sparse.linalg import splu

from .errors import MaxIterationsError, NotInteriorError, SingularSystemError
from .nlp import PrimalDualState, kkt_residual

logger = logging.getLogger(__name__)

GAMMA = 0.9995
SIGMA = 0.1
EPS = 1e-6
MAX_ITER = 100
MU0 = 1.0
REGULARIZATION = 1e-8
SETTLE_TOL = 1e-10
RECENTER_MU = 1e-4

# Slacks start no closer than this to their bound.
SLACK_FLOOR = 0.1


class ReducedSystem:
    '''
    Reduced correction system of one problem at one state.

    Attributes:
        H: condensed Hessian (sparse, symmetric)
        G: equality Jacobian
        R_x, R_y: right-hand sides of the bordered system
        Jh: inequality Jacobian, kept for recovery
        weighted: (R~x, R~y, R~w, R~z, R~u, R~l)
        i_u, i_w, i_l, i_z: diagonal scalings 1/u, w, 1/l, z
    '''
    def __init__(self, H, G, R_x, R_y, Jh, weighted, i_u, i_w, i_l, i_z):
        self.H = H
        self.G = G
        self.R_x = R_x
        self.R_y = R_y
        self.Jh = Jh
        self.weighted = weighted
        self.i_u = i_u
        self.i_w = i_w
        self.i_l = i_l
        self.i_z = i_z

    @property
    def n(self):
        return self.H.shape[0]

    @property
    def m(self):
        return self.G.shape[0]

    def bordered(self):
        return bordered_matrix(self.H, self.G)

    def recover(self, dx, dy):
        'Increment from the bordered solution (dx, dy).'
        _, _, rw, rz, ru, rl = self.weighted
        jdx = self.Jh @ dx
        du = -rw - jdx
        dl = rz + jdx
        dw = -(ru + self.i_w * du) * self.i_u
        dz = -(rl + self.i_z * dl) * self.i_l
        return Increment(dx, dy, dw, dz, du, dl)


class Increment:

    def __init__(self, dx, dy, dw, dz, du, dl):
        self.dx = np.asarray(dx, dtype=float)
        self.dy = np.asarray(dy, dtype=float)
        self.dw = np.asarray(dw, dtype=float)
        self.dz = np.asarray(dz, dtype=float)
        self.du = np.asarray(du, dtype=float)
        self.dl = np.asarray(dl, dtype=float)

    def blocks(self):
        return self.dx, self.dy, self.dw, self.dz, self.du, self.dl

    def vector(self):
        return np.concatenate(self.blocks())

    @classmethod
    def zeros_like(cls, s):
        return cls(*(np.zeros_like(b) for b in s.blocks()))


def bordered_matrix(H, G):
    m = G.shape[0]
    if m == 0:
        return sp.csc_matrix(H)
    return sp.bmat([[H, -G.T], [-G, sp.csr_matrix((m, m))]], format='csc')


def check_interior(s):
    if not s.is_interior():
        raise NotInteriorError(
            'state is not strictly interior (min u {:.3g}, min l {:.3g}, '
            'min z {:.3g}, max w {:.3g})'.format(
                *(np.min(b) if b.size else np.nan
                  for b in (s.u, s.l, s.z)),
                np.max(s.w) if s.w.size else np.nan)
        )


def lagrangian_hessian(p, s, t):
    return (p.hessian(s.x, t) - p.eq_hessian(s.x, s.y, t) -
            p.ineq_hessian(s.x, s.w + s.z, t)).tocsr()


def assemble_reduced(p, s, t, res, alpha):
    '''
    Reduced correction system with right-hand sides built from
    alpha * residual + time derivative.

    Arguments:
        p (NlpProblem): problem
        s (PrimalDualState): strictly interior state
        t (float): time
        res (ResidualBundle): residual bundle of s at t
        alpha (float): residual weight

    Returns:
        ReducedSystem
    '''
    check_interior(s)
    weighted = res.weighted(alpha)
    rx, ry, rw, rz, ru, rl = weighted
    G = p.eq_jacobian(s.x, t).tocsr()
    Jh = p.ineq_jacobian(s.x, t).tocsr()
    i_u = 1.0 / s.u
    i_l = 1.0 / s.l

    H = lagrangian_hessian(p, s, t)
    if p.m_ineq:
        with np.errstate(over='ignore', invalid='ignore'):
            scale = s.z * i_l - s.w * i_u
        if not np.all(np.isfinite(scale)):
            raise SingularSystemError(
                'slack scaling overflowed (min u {:.3g}, min l {:.3g})'.format(
                    np.min(s.u), np.min(s.l)))
        H = H + (Jh.T @ sp.diags(scale) @ Jh)
    # Exact symmetry; the sum of products can differ in the last bit.
    H = (0.5 * (H + H.T)).tocsr()

    R_x = -rx - Jh.T @ (ru * i_u - s.w * rw * i_u + rl * i_l +
                        s.z * rz * i_l)

    return ReducedSystem(H, G, R_x, ry.copy(), Jh, weighted, i_u, s.w, i_l,
                         s.z)


class BorderedFactor:

    def __init__(self, lu, perm, n):
        self.lu = lu
        self.perm = perm
        self.n = n

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        out = np.empty_like(rhs)
        out[self.perm] = self.lu.solve(rhs[self.perm])
        if not np.all(np.isfinite(out)):
            raise SingularSystemError('bordered solve produced non-finite values')
        return out


class BorderedSolver:
    '''
    Sparse LU of the symmetrically permuted bordered matrix. The reverse
    Cuthill-McKee ordering is computed once per shape and reused. A failed
    factorization is retried once with diagonal regularization unless the
    caller asks for the exact matrix only.
    '''
    def __init__(self, regularization=REGULARIZATION):
        self.regularization = regularization
        self._orderings = {}
        self.factorizations = 0

    def ordering(self, K, key):
        if key not in self._orderings:
            self._orderings[key] = reverse_cuthill_mckee(
                sp.csr_matrix(K), symmetric_mode=True)
        return self._orderings[key]

    def _factor(self, K, perm):
        lu = splu(K[perm][:, perm].tocsc(), permc_spec='NATURAL')
        diag = np.abs(lu.U.diagonal())
        if not np.all(np.isfinite(diag)) or diag.min() == 0.0:
            raise RuntimeError('Factor is exactly singular')
        return lu

    def factorize(self, H, G, regularize=True):
        n, m = H.shape[0], G.shape[0]
        K = bordered_matrix(H, G)
        if not regularize and structural_rank(sp.csr_matrix(K)) < n + m:
            raise SingularSystemError(
                'bordered system of size {} is structurally singular'.format(
                    n + m))
        perm = self.ordering(K, (n, m))
        self.factorizations += 1
        try:
            return BorderedFactor(self._factor(K, perm), perm, n)
        except RuntimeError:
            if not regularize:
                raise SingularSystemError(
                    'bordered system of size {} is singular'.format(n + m),
                    condition=_condition_estimate(K))
            logger.warning('singular bordered system of size %d, regularizing',
                           n + m)
        shift = np.concatenate([np.full(n, self.regularization),
                                np.full(m, -self.regularization)])
        K_reg = (K + sp.diags(shift)).tocsc()
        try:
            return BorderedFactor(self._factor(K_reg, perm), perm, n)
        except RuntimeError:
            raise SingularSystemError(
                'bordered system of size {} is singular'.format(n + m),
                condition=_condition_estimate(K))

    def solve(self, H, G, rhs):
        return self.factorize(H, G).solve(rhs)


def _condition_estimate(K):
    if K.shape[0] > 2000:
        return np.inf
    with np.errstate(all='ignore'):
        return float(np.linalg.cond(K.toarray()))


def solve_correction(rs, solver=None):
    '''
    Increment of a reduced system: (dx, dy) from the bordered solve, the
    other blocks by recovery.
    '''
    solver = solver or BorderedSolver()
    sol = solver.solve(rs.H, rs.G, np.concatenate([rs.R_x, rs.R_y]))
    return rs.recover(sol[:rs.n], sol[rs.n:])


def full_kkt_matrix(p, s, t):
    '''
    Dense Jacobian of the six residual blocks in the order (x, y, w, z, u, l).
    '''
    n, me, mi = p.n, p.m_eq, p.m_ineq
    Hl = lagrangian_hessian(p, s, t).toarray()
    Jg = p.eq_jacobian(s.x, t).toarray()
    Jh = p.ineq_jacobian(s.x, t).toarray()
    I = np.eye(mi)
    Z_ = np.zeros

    return np.block([
        [Hl, -Jg.T, -Jh.T, -Jh.T, Z_((n, mi)), Z_((n, mi))],
        [Jg, Z_((me, me)), Z_((me, mi)), Z_((me, mi)), Z_((me, mi)),
         Z_((me, mi))],
        [Jh, Z_((mi, me)), Z_((mi, mi)), Z_((mi, mi)), I, Z_((mi, mi))],
        [Jh, Z_((mi, me)), Z_((mi, mi)), Z_((mi, mi)), Z_((mi, mi)), -I],
        [Z_((mi, n)), Z_((mi, me)), np.diag(s.u), Z_((mi, mi)), np.diag(s.w),
         Z_((mi, mi))],
        [Z_((mi, n)), Z_((mi, me)), Z_((mi, mi)), np.diag(s.l), Z_((mi, mi)),
         np.diag(s.z)]
    ])


def full_kkt_solve(p, s, t, bundle, alpha):
    '''
    Dense solve of the unreduced Newton system J d = -(alpha r + r_t).
    '''
    J = full_kkt_matrix(p, s, t)
    rhs = -np.concatenate(bundle.weighted(alpha))
    # complementarity rows scaled by 1 / u and 1 / l
    rows = np.concatenate([np.ones(p.n + p.m_eq + 2 * p.m_ineq), 1.0 / s.u,
                           1.0 / s.l])
    J = rows[:, None] * J
    rhs = rows * rhs
    try:
        d = scipy.linalg.solve(J, rhs)
    except np.linalg.LinAlgError:
        raise SingularSystemError('full KKT matrix is singular',
                                  condition=float(np.linalg.cond(J)))
    cuts = np.cumsum([p.n, p.m_eq, p.m_ineq, p.m_ineq, p.m_ineq])
    return Increment(*np.split(d, cuts))


def _ratio(v, dv, mask):
    if not np.any(mask):
        return np.inf
    return float(np.min(-v[mask] / dv[mask]))


def step_lengths(s, inc, gamma=GAMMA, factor=1.0):
    '''
    Largest fractions of the increment keeping slacks and multipliers
    strictly interior once the update is applied with the given factor.

    Returns:
        (alpha_p, alpha_d), each in (0, 1]
    '''
    alpha_p = min(1.0,
                  gamma * _ratio(s.u, factor * inc.du, inc.du < 0.0),
                  gamma * _ratio(s.l, factor * inc.dl, inc.dl < 0.0))
    alpha_d = min(1.0,
                  gamma * _ratio(s.z, factor * inc.dz, inc.dz < 0.0),
                  gamma * _ratio(-s.w, -factor * inc.dw, inc.dw > 0.0))
    return alpha_p, alpha_d


def apply_increment(s, inc, alpha_p, alpha_d, factor=1.0):
    '''
    New state: primal blocks (x, u, l) move by factor * alpha_p, dual blocks
    (y, w, z) by factor * alpha_d.
    '''
    ap = factor * alpha_p
    ad = factor * alpha_d
    return PrimalDualState(
        s.x + ap * inc.dx, s.y + ad * inc.dy, s.w + ad * inc.dw,
        s.z + ad * inc.dz, s.u + ap * inc.du, s.l + ap * inc.dl,
        mu=s.mu.copy() if isinstance(s.mu, np.ndarray) else s.mu
    )


def barrier_update(s, sigma=SIGMA):
    '''
    sigma * (l'z - u'w) / (2 r) over r two-sided inequality rows.
    '''
    r = s.l.size
    if r == 0:
        return 0.0
    return sigma * s.gap / (2.0 * r)


def initial_state(p, t, mu0=MU0):
    '''
    Strictly interior start: the problem's initial point, slacks from the
    bound gaps floored at SLACK_FLOOR, z = mu0 / l, w = -mu0 / u, y = 0.
    '''
    x = p.initial_point(t)
    h = p.ineq(x, t)
    u = np.maximum(p.h_upper - h, SLACK_FLOOR)
    l = np.maximum(h - p.h_lower, SLACK_FLOOR)
    return PrimalDualState(x, np.zeros(p.m_eq), -mu0 / u, mu0 / l, u, l,
                           mu=mu0)


def recenter(s, mu=RECENTER_MU):
    '''
    Warm start pushed back from the boundary: slacks at least sqrt(mu) and
    multipliers at least mu / slack in magnitude. x and y are kept.
    '''
    s = s.copy()
    floor = np.sqrt(mu)
    s.u = np.maximum(s.u, floor)
    s.l = np.maximum(s.l, floor)
    s.w = np.minimum(s.w, -mu / s.u)
    s.z = np.maximum(s.z, mu / s.l)
    s.mu = mu
    return s


def settle(p, t, init, mu_min, gamma=GAMMA, sigma=SIGMA, tol=SETTLE_TOL,
           max_iter=MAX_ITER, solver=None):
    '''
    Newton steps at frozen parameters while the barrier parameter is driven
    down to mu_min and held there, until no entry of the state moves by
    more than tol * max(1, |entry|).

    Returns:
        (state, iterations, settled)
    '''
    solver = solver or BorderedSolver()
    s = init.copy()
    for it in range(max_iter):
        s.mu = max(barrier_update(s, sigma), mu_min)
        bundle = kkt_residual(p, s, t)
        inc = solve_correction(assemble_reduced(p, s, t, bundle, 1.0), solver)
        alpha_p, alpha_d = step_lengths(s, inc, gamma)
        new = apply_increment(s, inc, alpha_p, alpha_d)
        v = s.vector()
        still = np.all(np.abs(new.vector() - v) <=
                       tol * np.maximum(1.0, np.abs(v)))
        s = new
        if s.mu == mu_min and still:
            return s, it + 1, True
    return s, max_iter, False


def solve_converged(p, t, init, eps=EPS, gamma=GAMMA, sigma=SIGMA,
                    max_iter=MAX_ITER, solver=None, history=None):
    '''
    Full PDIPM at frozen parameters (alpha = 1, no time derivative).

    Arguments:
        p (NlpProblem): problem
        t (float): time the parameters are frozen at
        init (PrimalDualState): strictly interior start
        eps (float): tolerance on kkt_error and on the complementarity gap
        max_iter (int): Newton iterations allowed
        solver (BorderedSolver): reused across calls when given
        history (list): receives one dict per iteration when given

    Returns:
        converged PrimalDualState
    '''
    solver = solver or BorderedSolver()
    s = init.copy()
    check_interior(s)
    # the central gap 2 r mu stays an order below eps
    mu_floor = 0.1 * eps / max(2 * s.l.size, 1)

    for it in range(max_iter + 1):
        bundle = kkt_residual(p, s, t)
        err = max([float(np.max(np.abs(r))) for r in bundle.residual
                   if r.size] + [0.0])
        gap = s.gap
        if history is not None:
            history.append({'iteration': it, 'kkt_error': err, 'gap': gap,
                            'mu': np.max(s.mu)})
        if err <= eps and gap <= eps:
            logger.info('converged at t=%g in %d iterations (kkt %.3g)', t,
                        it, err)
            return s
        if it == max_iter:
            break

        rs = assemble_reduced(p, s, t, bundle, 1.0)
        inc = solve_correction(rs, solver)
        alpha_p, alpha_d = step_lengths(s, inc, gamma)
        s = apply_increment(s, inc, alpha_p, alpha_d)
        s.mu = max(barrier_update(s, sigma), mu_floor)
        logger.debug('it %d: kkt %.3e gap %.3e mu %.3e steps (%.3f, %.3f)',
                     it, err, gap, s.mu, alpha_p, alpha_d)

    raise MaxIterationsError(
        'no convergence in {} iterations (kkt error {:.3g})'.format(
            max_iter, err),
        state=s, kkt_error=err)
