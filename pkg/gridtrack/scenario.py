'''
Continuously time-varying parameters: load demand P_d(t), Q_d(t) per bus and
RES availability P_av(t), interpolated from knot sequences with monotone
piecewise-cubic Hermite curves so values and time derivatives are analytic.
'''
import json
import logging
import numpy as np
import os

from scipy.interpolate import PchipInterpolator

from .errors import ScenarioError

logger = logging.getLogger(__name__)

SHAPES = ('flat', 'ramp', 'noon-peak', 'cloud-transient')
QUANTITIES = ('pd', 'qd', 'pav')

# Queries this close outside the horizon are clamped onto it.
HORIZON_TOL = 1e-9

# Smallest synthetic RES availability, as a fraction of the rating.
AVAILABILITY_FLOOR = 1e-3


def _check_times(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ScenarioError('a profile needs at least two knots')
    if np.any(np.diff(times) <= 0.0):
        raise ScenarioError('knot times must be strictly increasing')
    return times


def _clamp(t, t_start, t_end):
    if t < t_start - HORIZON_TOL or t > t_end + HORIZON_TOL:
        raise ScenarioError('time {} outside horizon [{}, {}]'.format(
            t, t_start, t_end))
    return min(max(t, t_start), t_end)


class Profile:
    '''
    A single knot sequence and its Hermite interpolant.
    '''
    def __init__(self, times, values):
        self.times = _check_times(times)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != self.times.shape:
            raise ScenarioError('profile has {} times but {} values'.format(
                self.times.size, self.values.size))
        self._curve = PchipInterpolator(self.times, self.values)
        self._rate = self._curve.derivative()

    @property
    def slopes(self):
        return self._rate(self.times)

    def __call__(self, t):
        t = _clamp(t, self.times[0], self.times[-1])
        return float(self._curve(t)), float(self._rate(t))


def hermite_eval(profile, t):
    '''
    Value and analytic time derivative of a profile at t.

    Returns:
        (value, d_value_dt)
    '''
    return profile(t)


class ParamSnapshot:
    '''
    Parameters and their time derivatives at one instant, keyed by bus key.
    '''
    def __init__(self, t, pd, qd, pav, dpd, dqd, dpav):
        self.t = t
        self.pd = pd
        self.qd = qd
        self.pav = pav
        self.dpd = dpd
        self.dqd = dqd
        self.dpav = dpav


class Scenario:
    '''
    Bank of profiles sharing one knot grid, evaluated together.

    Arguments:
        times (array): knot times, seconds
        profiles (dict): bus key -> {quantity -> knot values}
        noise (dict): {'amplitude', 'seed'} the profiles were generated with
    '''
    def __init__(self, times, profiles, noise=None):
        self.times = _check_times(times)
        self.noise = dict(noise or {'amplitude': 0.0, 'seed': 0})
        self.columns = []
        data = []
        for key in sorted(profiles):
            for qty in QUANTITIES:
                if qty not in profiles[key]:
                    continue
                values = np.asarray(profiles[key][qty], dtype=float)
                if values.shape != self.times.shape:
                    raise ScenarioError(
                        'profile {} {} has {} knots, expected {}'.format(
                            key, qty, values.size, self.times.size))
                if qty == 'pav' and np.any(values < 0.0):
                    raise ScenarioError(
                        'availability of {} goes negative'.format(key))
                self.columns.append((key, qty))
                data.append(values)

        self._index = {col: i for i, col in enumerate(self.columns)}
        self.values = np.array(data).T if data else \
            np.zeros((self.times.size, 0))
        if data:
            self._curve = PchipInterpolator(self.times, self.values, axis=0)
            self._rate = self._curve.derivative()
        self._last = None

    @property
    def horizon(self):
        return float(self.times[0]), float(self.times[-1])

    @property
    def knot_dt(self):
        return float(self.times[1] - self.times[0])

    def has(self, key, qty):
        return (key, qty) in self._index

    def column(self, key, qty):
        try:
            return self._index[(key, qty)]
        except KeyError:
            raise ScenarioError('scenario has no {} profile for {}'.format(
                qty, key))

    def profile(self, key, qty):
        return Profile(self.times, self.values[:, self.column(key, qty)])

    def evaluate(self, t):
        '''
        Values and time derivatives of every column at t.
        '''
        t = _clamp(t, *self.horizon)
        last = self._last
        if last is not None and last[0] == t:
            return last[1], last[2]
        if self.columns:
            values = self._curve(t)
            rates = self._rate(t)
        else:
            values = rates = np.zeros(0)
        self._last = (t, values, rates)

        return values, rates

    def to_dict(self):
        profiles = {}
        for (key, qty), col in self._index.items():
            profiles.setdefault(key, {})[qty] = \
                [float(v) for v in self.values[:, col]]
        return {
            'horizon': list(self.horizon),
            'knot_dt': self.knot_dt,
            'profiles': profiles,
            'noise': self.noise
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            t0, t1 = (float(v) for v in doc['horizon'])
            knot_dt = float(doc['knot_dt'])
            profiles = doc['profiles']
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError('malformed scenario document: {}'.format(e))
        if knot_dt <= 0.0:
            raise ScenarioError('knot_dt must be positive')
        n_knots = int(round((t1 - t0) / knot_dt)) + 1
        times = t0 + knot_dt * np.arange(n_knots)
        if abs(times[-1] - t1) > 1e-6 * max(1.0, abs(t1)):
            raise ScenarioError('horizon is not a whole number of knots')

        return cls(times, profiles, doc.get('noise'))


def load_scenario(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioError('malformed scenario file {}: {}'.format(path, e))
    return Scenario.from_dict(doc)


def save_scenario(scenario, path):
    tmp_path = path + '.tmp'
    with open(tmp_path, 'w') as f:
        json.dump(scenario.to_dict(), f, sort_keys=True)
    os.replace(tmp_path, path)


def required_columns(net):
    '''
    (bus key, quantity) pairs a network needs from a scenario.
    '''
    required = []
    for area in net.areas:
        for bus in area.load_buses():
            required.append((area.key(bus.id), 'pd'))
            required.append((area.key(bus.id), 'qd'))
        for res in area.res_units:
            required.append((area.key(res.bus), 'pav'))
    return required


def sample_params(scenario, net, t):
    '''
    Parameter snapshot with time derivatives for every load bus and RES.
    '''
    values, rates = scenario.evaluate(t)
    snapshot = ParamSnapshot(t, {}, {}, {}, {}, {}, {})
    for key, qty in required_columns(net):
        col = scenario.column(key, qty)
        getattr(snapshot, qty)[key] = float(values[col])
        getattr(snapshot, 'd' + qty)[key] = float(rates[col])

    return snapshot


def _shape_curves(shape, times, start_hour):
    'Multipliers (load, pv, wt) at each knot.'
    t0, t1 = times[0], times[-1]
    elapsed = times - t0
    hours = start_hour + elapsed / 3600.0
    ones = np.ones_like(times)

    if shape == 'flat':
        return ones, 0.8 * ones, 0.6 * ones

    if shape == 'ramp':
        frac = elapsed / (t1 - t0)
        return 0.9 + 0.2 * frac, 0.5 + 0.3 * frac, 0.6 - 0.2 * frac

    # Day curves with minute-scale fluctuation on top.
    day = np.exp(-((hours - 12.5) / 3.0) ** 2)
    load = 0.8 + 0.2 * day + 0.02 * np.sin(2 * np.pi * elapsed / 60.0)
    pv = np.clip(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None) * \
        (1.0 + 0.03 * np.sin(2 * np.pi * elapsed / 90.0))
    pv = np.minimum(pv, 1.0)
    wt = 0.6 + 0.1 * np.sin(2 * np.pi * elapsed / 300.0)

    if shape == 'cloud-transient':
        # Raised-cosine dip of the PV output around mid-horizon.
        centre = 0.5 * (t0 + t1)
        width = min(120.0, 0.5 * (t1 - t0))
        phase = np.clip((times - centre) / width, -1.0, 1.0)
        pv = pv * (1.0 - 0.25 * (1.0 + np.cos(np.pi * phase)))

    return load, pv, wt


def make_synthetic(net, shape='noon-peak', noise=0.0, seed=0,
                   horizon=(0.0, 600.0), knot_dt=1.0, start_hour=12.0,
                   res_scale=1.0):
    '''
    Build a scenario from a named day shape plus seeded additive noise.

    Every profile is its base value (nominal bus demand, or RES rating times
    res_scale) times the shape curve; noise is drawn once per knot, uniform
    in +/- noise * |base|. RES availability is clipped from below at
    AVAILABILITY_FLOOR times the rating, so the unit keeps a nonempty box
    at night.

    Arguments:
        net (Network): network whose load buses and RES units get profiles
        shape (str): one of SHAPES
        noise (float): amplitude as a fraction of the base value
        seed (int): noise seed
        horizon (tuple): (t_start, t_end) in seconds
        knot_dt (float): knot spacing in seconds
        start_hour (float): hour of day at t_start
        res_scale (float): RES availability multiplier (high penetration)

    Returns:
        Scenario
    '''
    if shape not in SHAPES:
        raise ScenarioError('unknown shape {}; choose from {}'.format(
            shape, ', '.join(SHAPES)))
    if noise < 0.0:
        raise ScenarioError('noise amplitude must be nonnegative')

    t0, t1 = horizon
    n_knots = int(round((t1 - t0) / knot_dt)) + 1
    times = t0 + knot_dt * np.arange(n_knots)
    load, pv, wt = _shape_curves(shape, times, start_hour)
    rs = np.random.RandomState(seed)

    def noisy(base, curve):
        values = base * curve
        if noise > 0.0:
            values = values + rs.uniform(-noise, noise, n_knots) * abs(base)
        return values

    profiles = {}
    for area in net.areas:
        for bus in area.load_buses():
            profiles.setdefault(area.key(bus.id), {}).update({
                'pd': noisy(bus.pd, load),
                'qd': noisy(bus.qd, load)
            })
        for res in area.res_units:
            curve = pv if res.kind == 'pv' else wt
            pav = noisy(res.s_rated * res_scale, curve)
            profiles.setdefault(area.key(res.bus), {})['pav'] = \
                np.maximum(pav, AVAILABILITY_FLOOR * res.s_rated)

    logger.info('synthetic %s scenario: %d profiles, %d knots', shape,
                len(profiles), n_knots)

    return Scenario(times, profiles, {'amplitude': noise, 'seed': seed})
