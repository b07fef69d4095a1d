'''
Run modes, metrics against the per-sample oracle, and result files.
'''
import json
import h5py
import logging
import numpy as np
import os
import pandas as pd
import time

from .baselines import independent_solve, nominal_assumption
from .coordination import Coordinator
from .errors import ValidationError
from .opf import build_nlp
from .tracker import (Trajectory, TrackerConfig, _progress, run_tracker,
                      sample_times)

logger = logging.getLogger(__name__)

MODES = ('oracle', 'centralized', 'decentralized', 'independent')

CSV_COLUMNS = ['t', 'objective', 'kkt_error', 'rel_err_vs_oracle', 'alpha_p',
               'alpha_d', 'wall_ms', 'msgs']

# Consecutive samples below TRACK_TOL that count as tracking.
SUSTAIN = 50
TRACK_TOL = 0.01

CASE_DIR = os.path.join(os.path.dirname(__file__), 'cases')


def resolve_case(name):
    '''
    Path of a case file, looking in the bundled cases when name is not an
    existing path.
    '''
    if os.path.exists(name):
        return name
    for candidate in (name, name + '.json'):
        path = os.path.join(CASE_DIR, candidate)
        if os.path.exists(path):
            return path
    raise ValidationError('no case file {}'.format(name))


def bundled_cases():
    return sorted(f[:-5] for f in os.listdir(CASE_DIR) if f.endswith('.json'))


def _independent_run(net, scenario, cfg, t0, t_end, verbose=False):
    times = sample_times(t0, t_end, cfg.tau)
    assumption = nominal_assumption(net, scenario, t0)
    traj = Trajectory()
    for t in _progress(times, verbose):
        start = time.perf_counter()
        result = independent_solve(net, scenario, t, assumption,
                                   eps=cfg.oracle_eps)
        traj.append(t, result.combined_objective, result.kkt_error,
                    wall_ms=1e3 * (time.perf_counter() - start))
    return traj


def run_mode(mode, net, scenario, cfg, t0=None, t_end=None, keep_states=0,
             verbose=False):
    '''
    Trajectory of one mode on the tau grid of [t0, t_end].

    Arguments:
        mode (str): one of MODES
        net (Network): coupled network
        scenario (Scenario): parameters
        cfg (TrackerConfig): constants

    Returns:
        Trajectory
    '''
    if mode not in MODES:
        raise ValidationError('unknown mode {}; choose from {}'.format(
            mode, ', '.join(MODES)))
    h0, h1 = scenario.horizon
    t0 = h0 if t0 is None else t0
    t_end = h1 if t_end is None else t_end

    logger.info('running %s over [%g, %g] with tau=%g', mode, t0, t_end,
                cfg.tau)
    if mode == 'decentralized':
        coord = Coordinator.from_network(net, scenario, cfg)
        return coord.run(scenario, t0, t_end, keep_states, verbose)
    if mode == 'independent':
        return _independent_run(net, scenario, cfg, t0, t_end, verbose)

    p = build_nlp(net, scenario)
    tracker_mode = 'oracle-resolve' if mode == 'oracle' else \
        'centralized-track'
    return run_tracker(p, scenario, cfg, tracker_mode, t0, t_end,
                       keep_states=keep_states, verbose=verbose)


def relative_errors(track, oracle):
    '''
    |J_track - J_oracle| / |J_oracle| per sample.
    '''
    t1, t2 = track.times, oracle.times
    if t1.shape != t2.shape or not np.allclose(t1, t2, rtol=0.0, atol=1e-9):
        raise ValidationError('trajectories are not on the same sample grid')
    ref = oracle.objectives
    return np.abs(track.objectives - ref) / np.maximum(np.abs(ref), 1e-12)


def time_to_track(times, errors, tol=TRACK_TOL, sustain=SUSTAIN):
    '''
    First time from which the error stays below tol for sustain samples
    (all remaining samples on shorter runs), or None.
    '''
    errors = np.asarray(errors)
    window = min(sustain, errors.size)
    if window == 0:
        return None
    below = errors < tol
    for i in range(errors.size - window + 1):
        if below[i:i + window].all():
            return float(times[i])
    return None


def summarize(frame):
    '''
    Summary block of a result table; recomputing it from the rows gives
    the same values.
    '''
    summary = {
        'n_samples': int(len(frame)),
        'final_objective': float(frame['objective'].iloc[-1]),
        'mean_kkt_error': float(frame['kkt_error'].mean()),
        'max_kkt_error': float(frame['kkt_error'].max()),
        'min_alpha_p': float(frame['alpha_p'].min()),
        'min_alpha_d': float(frame['alpha_d'].min()),
        'mean_wall_ms': float(frame['wall_ms'].mean()),
        'max_wall_ms': float(frame['wall_ms'].max()),
        'mean_msgs': float(frame['msgs'].mean()),
        'max_msgs': int(frame['msgs'].max()),
    }
    errors = frame['rel_err_vs_oracle']
    if errors.notna().all():
        summary['mean_rel_err'] = float(errors.mean())
        summary['max_rel_err'] = float(errors.max())
        summary['time_to_track'] = time_to_track(frame['t'].values,
                                                 errors.values)
    return summary


def compute_metrics(track, oracle):
    '''
    Relative objective errors of a trajectory against the oracle on the
    same grid, with mean, max and time-to-track.
    '''
    errors = relative_errors(track, oracle)
    return {
        'rel_err': errors,
        'mean_rel_err': float(errors.mean()),
        'max_rel_err': float(errors.max()),
        'time_to_track': time_to_track(track.times, errors),
    }


class RunRecord:
    '''
    Rows and summary of one run, plus the configuration echo.
    '''
    def __init__(self, mode, config, frame, counters=None, extra=None):
        self.mode = mode
        self.config = config
        self.frame = frame[CSV_COLUMNS]
        self.counters = dict(counters or {})
        self.extra = dict(extra or {})

    @classmethod
    def from_trajectory(cls, mode, cfg, traj, oracle=None, extra=None):
        frame = traj.to_frame()
        if oracle is not None:
            frame['rel_err_vs_oracle'] = relative_errors(traj, oracle)
        else:
            frame['rel_err_vs_oracle'] = np.nan
        return cls(mode, cfg.as_dict(), frame, traj.counters, extra)

    @property
    def summary(self):
        return summarize(self.frame)

    def to_json(self):
        return {
            'mode': self.mode,
            'config': self.config,
            'counters': {str(k): v for k, v in self.counters.items()},
            'summary': self.summary,
            **self.extra
        }

    def write(self, out_dir):
        '''
        Write <mode>.csv and <mode>.json into out_dir, each atomically.

        Returns:
            (csv path, json path)
        '''
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, self.mode + '.csv')
        json_path = os.path.join(out_dir, self.mode + '.json')

        tmp = csv_path + '.tmp'
        self.frame.to_csv(tmp, index=False, float_format='%.17g')
        os.replace(tmp, csv_path)

        tmp = json_path + '.tmp'
        with open(tmp, 'w') as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
        os.replace(tmp, json_path)

        logger.info('wrote %s and %s', csv_path, json_path)
        return csv_path, json_path


def read_run(csv_path):
    return pd.read_csv(csv_path, float_precision='round_trip')


def persist_trajectory(traj, hdf_filename, metadata=None):
    '''
    Persist the rows and the kept states of a trajectory to HDF5, with run
    metadata as root attributes.
    '''
    with h5py.File(hdf_filename, 'w') as hf:

        if metadata is not None:
            for key in metadata:
                value = metadata[key]
                hf.attrs[key] = 'none' if value is None else value

        frame = traj.to_frame()
        for column in frame.columns:
            hf.create_dataset('rows/' + column,
                              data=frame[column].values.astype(float),
                              compression='gzip')

        if traj.states:
            hf.create_dataset('states/t',
                              data=np.array([t for t, _ in traj.states]))
            for name in ('x', 'y', 'w', 'z', 'u', 'l'):
                hf.create_dataset(
                    'states/' + name,
                    data=np.array([getattr(s, name) for _, s in traj.states]),
                    compression='gzip'
                )
            hf.create_dataset(
                'states/mu',
                data=np.array([np.broadcast_to(s.mu, s.l.shape)
                               for _, s in traj.states]),
                compression='gzip'
            )


def sweep_tau(net, scenario, taus, t0=None, t_end=None, mode='centralized',
              **cfg_kwargs):
    '''
    Mean and max tracking error against the oracle for each sampling
    period.

    Returns:
        (pandas.DataFrame with columns tau, mean_rel_err, max_rel_err,
         nonincreasing flag as tau decreases, taus >= 0.5 exempt)
    '''
    rows = []
    for tau in sorted(taus):
        cfg = TrackerConfig(tau=tau, **cfg_kwargs)
        oracle = run_mode('oracle', net, scenario, cfg, t0, t_end)
        track = run_mode(mode, net, scenario, cfg, t0, t_end)
        metrics = compute_metrics(track, oracle)
        rows.append((tau, metrics['mean_rel_err'], metrics['max_rel_err']))
        logger.info('tau=%g: mean relative error %.3e', tau,
                    metrics['mean_rel_err'])

    frame = pd.DataFrame(rows, columns=['tau', 'mean_rel_err', 'max_rel_err'])
    checked = frame[frame['tau'] < 0.5]['mean_rel_err'].values
    monotone = bool(np.all(np.diff(checked) >= -1e-12))
    return frame, monotone
