'''
Network model of coupled transmission/distribution grids: static records,
case-file loading and validation, and the rectangular-coordinate power-flow
formulas every optimization problem in the package is built from.
'''
import json
import logging
import networkx as nx
import numpy as np

from .errors import CaseError, DimensionError

logger = logging.getLogger(__name__)

BUS_KINDS = ('transmission', 'distribution-root', 'distribution-internal')
RES_KINDS = ('pv', 'wt')


class Bus:

    def __init__(self, id, v_min=0.9, v_max=1.1, kind='transmission',
                 pd=0.0, qd=0.0):
        self.id = id
        self.v_min = v_min
        self.v_max = v_max
        self.kind = kind
        # Nominal demand, the base of synthetic scenarios.
        self.pd = pd
        self.qd = qd

    def __repr__(self):
        return 'Bus({}, kind={})'.format(self.id, self.kind)


class Branch:

    def __init__(self, from_bus, to_bus, g, b, s_max):
        self.from_bus = from_bus
        self.to_bus = to_bus
        self.g = g
        self.b = b
        self.s_max = s_max

    def __repr__(self):
        return 'Branch({}-{})'.format(self.from_bus, self.to_bus)


class Generator:

    def __init__(self, bus, p_min, p_max, c2=0.0, c1=0.0, c0=0.0):
        self.bus = bus
        self.p_min = p_min
        self.p_max = p_max
        self.c2 = c2
        self.c1 = c1
        self.c0 = c0


class ResUnit:

    def __init__(self, bus, s_rated, tan_theta, cp=0.0, cq=0.0, kind='pv'):
        self.bus = bus
        self.s_rated = s_rated
        self.tan_theta = tan_theta
        self.cp = cp
        self.cq = cq
        self.kind = kind


class Area:
    '''
    One separately operated subsystem: the transmission system or a single
    distribution system. Buses keep case-file order, which fixes the
    variable and constraint ordering of every problem built from the area.
    '''
    def __init__(self, name, buses, branches=(), generators=(), res_units=(),
                 ds_id=None, root_bus=None, ref_bus=None):
        self.name = name
        self.buses = list(buses)
        self.branches = list(branches)
        self.generators = list(generators)
        self.res_units = list(res_units)
        self.ds_id = ds_id
        self.root_bus = root_bus
        self.ref_bus = ref_bus
        self.bus_index = {bus.id: i for i, bus in enumerate(self.buses)}

    @property
    def is_distribution(self):
        return self.ds_id is not None

    def key(self, bus_id):
        'Scenario key of a bus, e.g. "ts:5" or "ds1:17".'
        return '{}:{}'.format(self.name, bus_id)

    def bus(self, bus_id):
        return self.buses[self.bus_index[bus_id]]

    def graph(self):
        graph = nx.Graph()
        graph.add_nodes_from(self.bus_index)
        graph.add_edges_from(
            (br.from_bus, br.to_bus) for br in self.branches
        )
        return graph

    def load_buses(self):
        return [bus for bus in self.buses if bus.pd != 0.0 or bus.qd != 0.0]


class Network:

    def __init__(self, ts, ds=(), tie_lines=(), base_mva=100.0):
        self.ts = ts
        self.ds = {area.ds_id: area for area in sorted(ds, key=lambda a: a.ds_id)}
        self.tie_lines = list(tie_lines)
        self.base_mva = base_mva

    @property
    def areas(self):
        return [self.ts] + [self.ds[k] for k in sorted(self.ds)]

    def area(self, name):
        for area in self.areas:
            if area.name == name:
                return area
        raise KeyError(name)


class GridVariables:
    '''
    Physical variables of one area, each an array in case-file order.
    '''
    def __init__(self, e, f, p_g, q_g, p_res, q_res):
        self.e = np.asarray(e, dtype=float)
        self.f = np.asarray(f, dtype=float)
        self.p_g = np.asarray(p_g, dtype=float)
        self.q_g = np.asarray(q_g, dtype=float)
        self.p_res = np.asarray(p_res, dtype=float)
        self.q_res = np.asarray(q_res, dtype=float)

    @classmethod
    def flat(cls, area):
        n_bus = len(area.buses)
        n_gen = len(area.generators)
        n_res = len(area.res_units)
        return cls(np.ones(n_bus), np.zeros(n_bus), np.zeros(n_gen),
                   np.zeros(n_gen), np.zeros(n_res), np.zeros(n_res))

    def check(self, area):
        expected = (len(area.buses), len(area.buses), len(area.generators),
                    len(area.generators), len(area.res_units),
                    len(area.res_units))
        actual = (self.e.size, self.f.size, self.p_g.size, self.q_g.size,
                  self.p_res.size, self.q_res.size)
        if expected != actual:
            raise DimensionError(
                'variables of shape {} do not match area {} {}'.format(
                    actual, area.name, expected)
            )


def branch_flow(e_i, f_i, e_j, f_j, g, b):
    '''
    Active and reactive power leaving bus i on a branch with series
    admittance g + jb, i.e. S = V_i conj(y (V_i - V_j)).

    Returns:
        (P_ij, Q_ij)
    '''
    de = e_i - e_j
    df = f_i - f_j
    a = g * de - b * df
    c = b * de + g * df

    return e_i * a + f_i * c, f_i * a - e_i * c


def flow_matrices(g, b):
    '''
    Symmetric matrices M_P, M_Q with P_ij = v' M_P v and Q_ij = v' M_Q v for
    the local vector v = [e_i, f_i, e_j, f_j].
    '''
    mp = np.array([
        [g, 0.0, -g / 2, b / 2],
        [0.0, g, -b / 2, -g / 2],
        [-g / 2, -b / 2, 0.0, 0.0],
        [b / 2, -g / 2, 0.0, 0.0]
    ])
    mq = np.array([
        [-b, 0.0, b / 2, g / 2],
        [0.0, -b, -g / 2, b / 2],
        [b / 2, -g / 2, 0.0, 0.0],
        [g / 2, b / 2, 0.0, 0.0]
    ])

    return mp, mq


def power_mismatch(area, gv, t_params, injections=None):
    '''
    Per-bus active and reactive balance residuals of an area.

    Arguments:
        area (Area): the subsystem
        gv (GridVariables): voltages and injections
        t_params: parameter snapshot with `pd`, `qd`, `pav` keyed by bus key
        injections (dict): extra (P, Q) injected at a bus id, e.g. a tie line

    Returns:
        array [P balance per bus, Q balance per bus]
    '''
    gv.check(area)
    n_bus = len(area.buses)
    p_bal = np.zeros(n_bus)
    q_bal = np.zeros(n_bus)

    for i, bus in enumerate(area.buses):
        key = area.key(bus.id)
        p_bal[i] -= t_params.pd.get(key, 0.0)
        q_bal[i] -= t_params.qd.get(key, 0.0)

    for k, gen in enumerate(area.generators):
        i = area.bus_index[gen.bus]
        p_bal[i] += gv.p_g[k]
        q_bal[i] += gv.q_g[k]

    for k, res in enumerate(area.res_units):
        i = area.bus_index[res.bus]
        p_bal[i] += gv.p_res[k]
        q_bal[i] += gv.q_res[k]

    for bus_id, (p, q) in (injections or {}).items():
        i = area.bus_index[bus_id]
        p_bal[i] += p
        q_bal[i] += q

    for br in area.branches:
        i = area.bus_index[br.from_bus]
        j = area.bus_index[br.to_bus]
        p_ij, q_ij = branch_flow(gv.e[i], gv.f[i], gv.e[j], gv.f[j], br.g, br.b)
        p_ji, q_ji = branch_flow(gv.e[j], gv.f[j], gv.e[i], gv.f[i], br.g, br.b)
        p_bal[i] -= p_ij
        q_bal[i] -= q_ij
        p_bal[j] -= p_ji
        q_bal[j] -= q_ji

    return np.concatenate([p_bal, q_bal])


def load_case(path):
    '''
    Read and validate a JSON case file.
    '''
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise CaseError('malformed case file {}: {}'.format(path, e))

    net = parse_case(doc)
    logger.info('loaded case %s: %d TS buses, %d DSs', path,
                len(net.ts.buses), len(net.ds))

    return net


def parse_case(doc):
    '''
    Build a validated Network from a case document (dict).
    '''
    def field(record, name, where, default=None):
        if name in record:
            return record[name]
        if default is not None:
            return default
        raise CaseError('{} is missing field "{}"'.format(where, name))

    def admittance(record, where):
        if 'g' in record and 'b' in record:
            return float(record['g']), float(record['b'])
        if 'r' in record and 'x' in record:
            y = 1.0 / complex(record['r'], record['x'])
            return y.real, y.imag
        raise CaseError('{} needs either (g, b) or (r, x)'.format(where))

    def parse_area(section, name, ds_id=None):
        root = section.get('root_bus') if ds_id is not None else None
        buses = []
        for i, rec in enumerate(field(section, 'buses', name)):
            where = '{} bus #{}'.format(name, i)
            bus_id = field(rec, 'id', where)
            if ds_id is None:
                kind = 'transmission'
            elif bus_id == root:
                kind = 'distribution-root'
            else:
                kind = 'distribution-internal'
            buses.append(Bus(bus_id, float(field(rec, 'vmin', where)),
                             float(field(rec, 'vmax', where)), kind,
                             float(rec.get('pd', 0.0)),
                             float(rec.get('qd', 0.0))))
        branches = []
        for i, rec in enumerate(section.get('branches', [])):
            where = '{} branch #{} ({}-{})'.format(
                name, i, rec.get('from'), rec.get('to'))
            g, b = admittance(rec, where)
            branches.append(Branch(field(rec, 'from', where),
                                   field(rec, 'to', where), g, b,
                                   float(field(rec, 'smax', where))))
        generators = []
        for i, rec in enumerate(section.get('generators', [])):
            where = '{} generator #{}'.format(name, i)
            generators.append(Generator(
                field(rec, 'bus', where), float(field(rec, 'pmin', where)),
                float(field(rec, 'pmax', where)), float(rec.get('c2', 0.0)),
                float(rec.get('c1', 0.0)), float(rec.get('c0', 0.0))
            ))
        res_units = []
        for i, rec in enumerate(section.get('res', [])):
            where = '{} RES #{}'.format(name, i)
            res_units.append(ResUnit(
                field(rec, 'bus', where), float(field(rec, 's_rated', where)),
                float(field(rec, 'tan_theta', where)),
                float(rec.get('cp', 0.0)), float(rec.get('cq', 0.0)),
                rec.get('kind', 'pv')
            ))
        ref_bus = section.get('ref_bus')
        if ds_id is None and ref_bus is None:
            ref_bus = generators[0].bus if generators else buses[0].id

        return Area(name, buses, branches, generators, res_units,
                    ds_id=ds_id, root_bus=root, ref_bus=ref_bus)

    if not isinstance(doc, dict) or 'ts' not in doc:
        raise CaseError('case document needs a "ts" section')

    ts = parse_area(doc['ts'], 'ts')
    ds_areas = []
    for i, section in enumerate(doc.get('ds', [])):
        ds_id = field(section, 'id', 'ds #{}'.format(i))
        field(section, 'root_bus', 'ds {}'.format(ds_id))
        ds_areas.append(parse_area(section, 'ds{}'.format(ds_id), ds_id))

    ties = []
    for i, rec in enumerate(doc.get('ties', [])):
        where = 'tie #{}'.format(i)
        ties.append((field(rec, 'ts_bus', where), field(rec, 'ds_id', where)))

    net = Network(ts, ds_areas, ties, float(doc.get('base_mva', 100.0)))
    validate_network(net, n_ds_declared=len(ds_areas))

    return net


def validate_network(net, n_ds_declared=None):
    '''
    Check every record invariant; each failure names the offending record.
    '''
    if n_ds_declared is not None and n_ds_declared != len(net.ds):
        raise CaseError('duplicate distribution system ids')

    for area in net.areas:
        if len(area.bus_index) != len(area.buses):
            seen = set()
            for bus in area.buses:
                if bus.id in seen:
                    raise CaseError(
                        '{} has duplicate bus id {}'.format(area.name, bus.id))
                seen.add(bus.id)
        for bus in area.buses:
            if not 0.0 < bus.v_min < bus.v_max:
                raise CaseError('{} bus {}: need 0 < vmin < vmax'.format(
                    area.name, bus.id))
        for br in area.branches:
            where = '{} branch {}-{}'.format(area.name, br.from_bus, br.to_bus)
            for end in (br.from_bus, br.to_bus):
                if end not in area.bus_index:
                    raise CaseError('{} references missing bus {}'.format(
                        where, end))
            if br.from_bus == br.to_bus:
                raise CaseError('{} is a self loop'.format(where))
            if br.s_max <= 0.0:
                raise CaseError('{}: smax must be positive'.format(where))
            if br.g < 0.0:
                raise CaseError('{}: g must be nonnegative'.format(where))
        for k, gen in enumerate(area.generators):
            where = '{} generator #{} at bus {}'.format(area.name, k, gen.bus)
            if gen.bus not in area.bus_index:
                raise CaseError('{} references a missing bus'.format(where))
            if gen.p_min > gen.p_max:
                raise CaseError('{}: pmin > pmax'.format(where))
            if gen.c2 < 0.0:
                raise CaseError('{}: c2 must be nonnegative'.format(where))
        res_buses = set()
        for k, res in enumerate(area.res_units):
            where = '{} RES #{} at bus {}'.format(area.name, k, res.bus)
            if res.bus not in area.bus_index:
                raise CaseError('{} references a missing bus'.format(where))
            if res.bus in res_buses:
                raise CaseError('{}: one RES per bus'.format(where))
            res_buses.add(res.bus)
            if res.s_rated <= 0.0:
                raise CaseError('{}: s_rated must be positive'.format(where))
            if res.tan_theta < 0.0 or res.cp < 0.0 or res.cq < 0.0:
                raise CaseError(
                    '{}: tan_theta, cp, cq must be nonnegative'.format(where))
            if res.kind not in RES_KINDS:
                raise CaseError('{}: unknown kind {}'.format(where, res.kind))
        if area.is_distribution and area.root_bus not in area.bus_index:
            raise CaseError('{} root bus {} does not exist'.format(
                area.name, area.root_bus))
        if not area.is_distribution and area.ref_bus not in area.bus_index:
            raise CaseError('ts reference bus {} does not exist'.format(
                area.ref_bus))
        if len(area.buses) > 0 and not nx.is_connected(area.graph()):
            raise CaseError('{} is not connected'.format(area.name))

    for ts_bus, ds_id in net.tie_lines:
        if ts_bus not in net.ts.bus_index:
            raise CaseError('tie ({}, {}) references missing TS bus {}'.format(
                ts_bus, ds_id, ts_bus))
        if ds_id not in net.ds:
            raise CaseError('tie ({}, {}) references missing DS {}'.format(
                ts_bus, ds_id, ds_id))
