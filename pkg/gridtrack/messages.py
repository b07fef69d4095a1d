'''
Coordination messages and their binary codec.

Every frame starts with a header (magic b'GTRK', u8 version, u8 tag)
followed by little-endian fields:

    SurrogateUp    tag 1: i32 ds_id, i64 sample_index, u32 n_b,
                          f64[n_b (n_b + 1) / 2] j2 lower triangle row-major,
                          f64[n_b] j1, f64 j0
    IncrementDown  tag 2: i32 ds_id, i64 sample_index, u32 n_b,
                          f64[n_b] dxb, f64 alpha_p

alpha_p is the transmission agent's primal step length, which the
distribution agent applies to its copy of the boundary variables.
'''
import numpy as np
import struct

from collections import Counter, deque

from .errors import ProtocolError

MAGIC = b'GTRK'
VERSION = 1
SURROGATE_UP = 1
INCREMENT_DOWN = 2

_HEADER = struct.Struct('<4sBB')
_ROUTING = struct.Struct('<iqI')
_F8 = np.dtype('<f8')


class QuadraticSurrogate:
    '''
    Phi(v) = 1/2 v' j2 v + j1' v + j0 over boundary increments v.
    '''
    def __init__(self, ds_id, j2, j1, j0):
        self.ds_id = ds_id
        self.j2 = np.array(j2, dtype=float)
        self.j1 = np.array(j1, dtype=float)
        self.j0 = float(j0)

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return float(0.5 * v @ self.j2 @ v + self.j1 @ v + self.j0)

    def minimizer(self):
        return np.linalg.solve(self.j2, -self.j1)


class SurrogateUp:

    tag = SURROGATE_UP

    def __init__(self, ds_id, sample_index, surrogate):
        self.ds_id = ds_id
        self.sample_index = sample_index
        self.surrogate = surrogate


class IncrementDown:

    tag = INCREMENT_DOWN

    def __init__(self, ds_id, sample_index, dxb, alpha_p=1.0):
        self.ds_id = ds_id
        self.sample_index = sample_index
        self.dxb = np.asarray(dxb, dtype=float)
        self.alpha_p = float(alpha_p)


def encode(msg):
    if isinstance(msg, SurrogateUp):
        j2 = msg.surrogate.j2
        n_b = j2.shape[0]
        body = np.concatenate([j2[np.tril_indices(n_b)], msg.surrogate.j1,
                               [msg.surrogate.j0]])
    elif isinstance(msg, IncrementDown):
        n_b = msg.dxb.size
        body = np.concatenate([msg.dxb, [msg.alpha_p]])
    else:
        raise ProtocolError('cannot encode {!r}'.format(msg))

    return _HEADER.pack(MAGIC, VERSION, msg.tag) + \
        _ROUTING.pack(msg.ds_id, msg.sample_index, n_b) + \
        body.astype(_F8).tobytes()


def _unpack(payload):
    if len(payload) < _HEADER.size + _ROUTING.size:
        raise ProtocolError('truncated frame of {} bytes'.format(len(payload)))
    magic, version, tag = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise ProtocolError('bad frame magic {!r}'.format(magic))
    if version != VERSION:
        raise ProtocolError('unsupported frame version {}'.format(version))
    ds_id, sample_index, n_b = _ROUTING.unpack_from(payload, _HEADER.size)
    try:
        body = np.frombuffer(payload, dtype=_F8,
                             offset=_HEADER.size + _ROUTING.size)
    except ValueError:
        raise ProtocolError('frame body is not a whole number of f64 values')
    return tag, ds_id, sample_index, n_b, body


def decode(payload):
    tag, ds_id, sample_index, n_b, body = _unpack(payload)
    if tag == SURROGATE_UP:
        n_tri = n_b * (n_b + 1) // 2
        if body.size != n_tri + n_b + 1:
            raise ProtocolError('surrogate frame has {} values, expected {}'
                                .format(body.size, n_tri + n_b + 1))
        j2 = np.zeros((n_b, n_b))
        j2[np.tril_indices(n_b)] = body[:n_tri]
        j2 = j2 + np.tril(j2, -1).T
        surrogate = QuadraticSurrogate(ds_id, j2,
                                       body[n_tri:n_tri + n_b].copy(),
                                       body[-1])
        return SurrogateUp(ds_id, sample_index, surrogate)
    if tag == INCREMENT_DOWN:
        if body.size != n_b + 1:
            raise ProtocolError('increment frame has {} values, expected {}'
                                .format(body.size, n_b + 1))
        return IncrementDown(ds_id, sample_index, body[:n_b].copy(), body[-1])
    raise ProtocolError('unknown message tag {}'.format(tag))


def field_inventory(payload):
    '''
    Names of the fields a frame carries, in wire order.
    '''
    tag = _unpack(payload)[0]
    routing = ['magic', 'version', 'tag', 'ds_id', 'sample_index', 'n_b']
    if tag == SURROGATE_UP:
        return routing + ['j2', 'j1', 'j0']
    if tag == INCREMENT_DOWN:
        return routing + ['dxb', 'alpha_p']
    raise ProtocolError('unknown message tag {}'.format(tag))


class MessageBus:
    '''
    In-process transport: frames are encoded on send and decoded on
    receive, so a socket transport can replace it without solver changes.
    '''
    def __init__(self, keep_frames=False):
        self._queues = {SURROGATE_UP: deque(), INCREMENT_DOWN: deque()}
        self.counts = Counter()
        self.keep_frames = keep_frames
        self.frames = []

    def send(self, msg):
        payload = encode(msg)
        self._queues[msg.tag].append(payload)
        self.counts[msg.tag] += 1
        self.counts['total'] += 1
        if self.keep_frames:
            self.frames.append(payload)
        return payload

    def receive_all(self, tag):
        queue = self._queues[tag]
        out = []
        while queue:
            out.append(decode(queue.popleft()))
        return out

    def pending(self):
        return sum(len(q) for q in self._queues.values())
