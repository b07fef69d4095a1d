import click
import logging
import multiprocessing as mp
import os
import sys

from functools import partial

from gridtrack.errors import (GridTrackError, ProtocolError, SolverError,
                              ValidationError)
from gridtrack.grid import load_case
from gridtrack.harness import (MODES, RunRecord, persist_trajectory,
                               resolve_case, run_mode, sweep_tau)
from gridtrack.coordination import verify_equivalence
from gridtrack.scenario import (SHAPES, Scenario, load_scenario,
                                make_synthetic, save_scenario)
from gridtrack.tracker import TrackerConfig

LOG_LEVELS = {'error': logging.ERROR, 'info': logging.INFO,
              'debug': logging.DEBUG}


def _configure_logging():
    level = os.environ.get('GRIDTRACK_LOG', 'error').lower()
    logging.basicConfig(
        level=LOG_LEVELS.get(level, logging.ERROR),
        format='%(asctime)s %(name)s %(levelname)s: %(message)s'
    )


def _inputs(case, scenario, seed, t0, t_end):
    net = load_case(resolve_case(case))
    if scenario is not None:
        scen = load_scenario(scenario)
    else:
        scen = make_synthetic(net, 'noon-peak', seed=seed,
                              horizon=(0.0 if t0 is None else t0,
                                       60.0 if t_end is None else t_end))
    return net, scen


def _config(tau, alpha, no_prediction, step_mode):
    return TrackerConfig(tau=tau, alpha=alpha,
                         prediction_enabled=not no_prediction,
                         step_mode=step_mode)


def _run_job(mode, case=None, scenario_doc=None, cfg_kwargs=None, t0=None,
             t_end=None):
    # Runs in a pool worker, so everything arrives as plain data.
    net = load_case(case)
    scen = Scenario.from_dict(scenario_doc)
    cfg = TrackerConfig(**cfg_kwargs)
    return mode, run_mode(mode, net, scen, cfg, t0, t_end)


def _get_pool(processes):
    if processes is None or processes <= 0:
        processes = mp.cpu_count()
    return mp.Pool(processes)


def _float_list(ctx, param, value):
    try:
        return [float(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter('expected comma-separated numbers')


def _tracking_options(f):
    options = [
        click.option('--case', default='t9d33x3', show_default=True,
                     help='Case file, or the name of a bundled case.'),
        click.option('--scenario', type=click.Path(exists=True), default=None,
                     help='Scenario file; a seeded noon-peak scenario by '
                          'default.'),
        click.option('--tau', default=0.02, show_default=True),
        click.option('--alpha', type=float, default=None,
                     help='Residual weight, 1/tau by default.'),
        click.option('--t0', type=float, default=None),
        click.option('--t-end', 't_end', type=float, default=None),
        click.option('--seed', default=0, show_default=True),
        click.option('--no-prediction', is_flag=True),
        click.option('--step-mode', type=click.Choice(['per-agent',
                                                       'global-min']),
                     default='per-agent', show_default=True),
    ]
    for option in reversed(options):
        f = option(f)
    return f


@click.group()
@click.pass_context
def cli(ctx):
    ctx.obj = dict()


@cli.command('gen-scenario')
@click.option('--case', default='t9d33x3', show_default=True)
@click.option('--shape', type=click.Choice(SHAPES), default='noon-peak',
              show_default=True)
@click.option('--noise', default=0.0, show_default=True)
@click.option('--seed', default=0, show_default=True)
@click.option('--t0', default=0.0, show_default=True)
@click.option('--t-end', 't_end', default=600.0, show_default=True)
@click.option('--knot-dt', default=1.0, show_default=True)
@click.option('--start-hour', default=12.0, show_default=True)
@click.option('--res-scale', default=1.0, show_default=True,
              help='RES availability multiplier (high penetration > 1).')
@click.option('--out', required=True, type=click.Path())
@click.pass_context
def gen_scenario(ctx, case, shape, noise, seed, t0, t_end, knot_dt,
                 start_hour, res_scale, out):
    '''
    Write a synthetic scenario for CASE to OUT.
    '''
    net = load_case(resolve_case(case))
    scen = make_synthetic(net, shape, noise=noise, seed=seed,
                          horizon=(t0, t_end), knot_dt=knot_dt,
                          start_hour=start_hour, res_scale=res_scale)
    save_scenario(scen, out)
    click.echo('wrote {} ({} profiles, {} knots)'.format(
        out, len(scen.columns), len(scen.times)))


@cli.command()
@_tracking_options
@click.option('--mode', type=click.Choice(MODES), default='decentralized',
              show_default=True)
@click.option('--out', required=True, type=click.Path())
@click.option('--skip-oracle', is_flag=True,
              help='Do not compute the per-sample oracle.')
@click.option('--save-states', default=0,
              help='Keep every N-th state in <mode>.hdf5 (0 keeps none).')
@click.option('--verbose', is_flag=True)
@click.pass_context
def run(ctx, case, scenario, tau, alpha, t0, t_end, seed, no_prediction,
        step_mode, mode, out, skip_oracle, save_states, verbose):
    '''
    Run one mode and write <mode>.csv and <mode>.json to OUT.
    '''
    net, scen = _inputs(case, scenario, seed, t0, t_end)
    cfg = _config(tau, alpha, no_prediction, step_mode)

    traj = run_mode(mode, net, scen, cfg, t0, t_end, keep_states=save_states,
                    verbose=verbose)
    oracle = None
    if mode == 'oracle':
        oracle = traj
    elif not skip_oracle:
        oracle = run_mode('oracle', net, scen, cfg, t0, t_end)

    record = RunRecord.from_trajectory(mode, cfg, traj, oracle,
                                       extra={'case': case, 'seed': seed})
    record.write(out)
    if save_states:
        persist_trajectory(traj, os.path.join(out, mode + '.hdf5'),
                           metadata=dict(cfg.as_dict(), mode=mode, case=case))

    summary = record.summary
    click.echo('{}: {} samples, mean relative error {}'.format(
        mode, summary['n_samples'], summary.get('mean_rel_err', 'n/a')))


@cli.command()
@_tracking_options
@click.option('--modes', default='centralized,decentralized,independent',
              show_default=True)
@click.option('--out', required=True, type=click.Path())
@click.option('--processes', type=int, default=1, show_default=True,
              help='Pool size; 0 uses every CPU.')
@click.pass_context
def compare(ctx, case, scenario, tau, alpha, t0, t_end, seed, no_prediction,
            step_mode, modes, out, processes):
    '''
    Run the oracle and the listed modes on one grid and write each record.
    '''
    modes = [m.strip() for m in modes.split(',') if m.strip()]
    for m in modes:
        if m not in MODES:
            raise ValidationError('unknown mode {}'.format(m))
    net, scen = _inputs(case, scenario, seed, t0, t_end)
    cfg = _config(tau, alpha, no_prediction, step_mode)

    func = partial(_run_job, case=resolve_case(case),
                   scenario_doc=scen.to_dict(), cfg_kwargs=cfg.as_dict(),
                   t0=t0, t_end=t_end)
    jobs = ['oracle'] + [m for m in modes if m != 'oracle']
    if processes == 1:
        results = dict(map(func, jobs))
    else:
        pool = _get_pool(processes)
        try:
            results = dict(pool.map(func, jobs))
        finally:
            pool.close()
            pool.join()

    oracle = results['oracle']
    for mode in jobs:
        record = RunRecord.from_trajectory(mode, cfg, results[mode], oracle,
                                           extra={'case': case, 'seed': seed})
        record.write(out)
        summary = record.summary
        click.echo('{:>14}: mean relative error {:.3e}, max {:.3e}'.format(
            mode, summary['mean_rel_err'], summary['max_rel_err']))


@cli.command('verify-equivalence')
@click.option('--case', default='t2d3x1', show_default=True)
@click.option('--scenario', type=click.Path(exists=True), default=None)
@click.option('--seed', default=0, show_default=True)
@click.option('--trials', default=1, show_default=True)
@click.option('--t', 't', default=0.0, show_default=True)
@click.option('--alpha', default=1.0, show_default=True)
@click.option('--no-prediction', is_flag=True)
@click.option('--perturb', default=0.0, show_default=True,
              help='Added to one surrogate coefficient before accumulation.')
@click.pass_context
def verify_equivalence_cmd(ctx, case, scenario, seed, trials, t, alpha,
                           no_prediction, perturb):
    '''
    Compare decentralized increments with the dense centralized solve at
    seeded random interior states.
    '''
    net, scen = _inputs(case, scenario, seed, None, None)
    failed = 0
    for trial in range(trials):
        report = verify_equivalence(net, scen, t, seed + trial, alpha=alpha,
                                    prediction=not no_prediction,
                                    perturb=perturb)
        click.echo('seed {}: {}'.format(seed + trial, report))
        failed += not report.passed
    if failed:
        raise ProtocolError('{} of {} equivalence checks failed'.format(
            failed, trials))


@cli.command('sweep-tau')
@click.option('--case', default='t9d33x3', show_default=True)
@click.option('--scenario', type=click.Path(exists=True), default=None)
@click.option('--values', callback=_float_list,
              default='0.01,0.02,0.05,0.1,0.5', show_default=True)
@click.option('--mode', type=click.Choice(['centralized', 'decentralized']),
              default='centralized', show_default=True)
@click.option('--t0', type=float, default=None)
@click.option('--t-end', 't_end', type=float, default=None)
@click.option('--seed', default=0, show_default=True)
@click.option('--no-prediction', is_flag=True)
@click.option('--out', required=True, type=click.Path())
@click.pass_context
def sweep_tau_cmd(ctx, case, scenario, values, mode, t0, t_end, seed,
                  no_prediction, out):
    '''
    Mean tracking error against the oracle for each sampling period.
    '''
    net, scen = _inputs(case, scenario, seed, t0, t_end)
    frame, monotone = sweep_tau(net, scen, values, t0, t_end, mode=mode,
                                prediction_enabled=not no_prediction)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, 'sweep.csv')
    frame.to_csv(path + '.tmp', index=False, float_format='%.17g')
    os.replace(path + '.tmp', path)
    click.echo(frame.to_string(index=False))
    click.echo('nonincreasing as tau decreases: {}'.format(
        'yes' if monotone else 'no'))


def main(argv=None):
    '''
    Console entry point: 0 on success, 2 on invalid input, 1 on solver or
    protocol failure.
    '''
    _configure_logging()
    try:
        cli.main(args=argv, prog_name='gridtrack', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 2 if isinstance(e, click.UsageError) else e.exit_code
    except click.exceptions.Abort:
        return 1
    except ValidationError as e:
        click.echo('error: {}'.format(e), err=True)
        return 2
    except (SolverError, ProtocolError, GridTrackError) as e:
        click.echo('failed: {}'.format(e), err=True)
        return 1
    except OSError as e:
        click.echo('failed: {}'.format(e), err=True)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
