import argparse
import json
import logging
import os
import sys
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pandas as pd

import dataio
import odds_model
import simulate
import survival_core
from errors import BaselineMismatch, ClvError, EmptyCalibration
from proportional import Alpha, ProjectionConfig, project_batch, project_competing_batch, project_hazard
from survival_core import PoolingConfig, SmoothingConfig, TailConfig
from valuation import DiscountSpec, annual_to_monthly_rate, clv_batch

LOG_LEVELS = {'error': logging.ERROR, 'warn': logging.WARNING, 'info': logging.INFO, 'debug': logging.DEBUG}

# flags each command cannot run without (checked after the config file is merged in)
REQUIRED = {
    'baseline': ['out'],
    'score': ['baseline', 'scoring', 'out'],
    'curve': ['baseline', 'alpha', 't0', 'horizon', 'out'],
    'fit-odds': ['calibration', 'baseline', 'out'],
    'score-odds': ['model', 'baseline', 'scoring', 'out'],
    'simulate': ['spec', 'out_dir'],
}


def suffixed(path, suffix):
    root, ext = os.path.splitext(path)
    return root + suffix + (ext or '.json')


def _concat(frames, what):
    frames = list(frames)
    if not frames:
        raise EmptyCalibration(what)
    return pd.concat(frames, ignore_index=True)


def _count_chunk(chunk, competing):
    events, exposures = survival_core.count_by_tenure(chunk)
    if not competing:
        return events, exposures
    voluntary = chunk.assign(churned=(chunk['cause'] == 'V').astype(int))
    involuntary = chunk.assign(churned=(chunk['cause'] == 'I').astype(int))
    return events, exposures, survival_core.count_by_tenure(voluntary)[0], survival_core.count_by_tenure(involuntary)[0]


def parse_baseline(args):
    smoothing = SmoothingConfig(args.smoothing)
    if args.histories:
        histories = _concat(dataio.read_histories(args.histories), 'event histories')
        baseline = survival_core.baseline_from_histories(histories, smoothing, args.min_events)
        counts = None
    else:
        counts = [_count_chunk(chunk, args.competing)
                  for chunk in dataio.read_calibration(args.calibration, 'competing' if args.competing else 'single')]
        if not counts:
            raise EmptyCalibration()
        events, exposures = survival_core.merge_counts(*[(c[0], c[1]) for c in counts])
        baseline = survival_core.baseline_from_counts(events, exposures, smoothing, args.min_events)
    tail = None if args.auto_tail else args.tail_start
    baseline = survival_core.with_tail(baseline, tail, TailConfig(args.window, args.rel_tol))
    survival_core.save_baseline(baseline, args.out)
    if args.competing:
        # sub-baselines share the exposures and the tail start of the whole base
        for position, suffix in ((2, '_v'), (3, '_inv')):
            events, _ = survival_core.merge_counts(*[(c[position], c[1]) for c in counts])
            sub = survival_core.baseline_from_counts(events, baseline.exposures, smoothing, args.min_events)
            survival_core.save_baseline(survival_core.extrapolate_tail(sub, baseline.tail_start),
                                        suffixed(args.out, suffix))
    print('Done. Baseline saved at {}'.format(args.out), file=sys.stderr)


def _discount(args):
    if args.discount_annual is not None:
        return DiscountSpec(annual_to_monthly_rate(args.discount_annual))
    return DiscountSpec(args.discount_monthly or 0.0)


def scored_in_order(score_chunk, chunks, workers=1):
    """
    Yields score_chunk(chunk) for each chunk in input order. With several workers at most
    2 * workers chunks are read ahead, so memory stays bounded by the chunk size.
    """
    if workers <= 1:
        yield from map(score_chunk, chunks)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        for chunk in chunks:
            pending.append(pool.submit(score_chunk, chunk))
            if len(pending) >= 2 * workers:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def _write_scored(args, score_chunk, chunks, competing=False):
    return dataio.write_projections(args.out, scored_in_order(score_chunk, chunks, args.workers), competing)


def parse_score(args):
    config = ProjectionConfig(args.eps, args.max_horizon)
    discount = _discount(args)
    baseline = survival_core.load_baseline(args.baseline)
    pooling = PoolingConfig(args.min_events) if args.min_events is not None else None
    granular = args.competing and args.combine == 'granular'
    baseline_inv = survival_core.load_baseline(args.baseline_inv) if granular else None

    def score_chunk(chunk):
        ids = chunk['customer_id'].to_numpy()
        t0 = chunk['tenure'].to_numpy()
        out = pd.DataFrame({'customer_id': chunk['customer_id']})
        if granular:
            batch = project_competing_batch(chunk['score_v'], chunk['score_inv'], t0, baseline, baseline_inv,
                                            config, pooling, ids)
            out['alpha_v'] = batch.alpha
            out['alpha_inv'] = batch.alpha_inv
        else:
            scores = chunk['churn_score'] if not args.competing else \
                np.minimum(1.0, chunk['score_v'] + chunk['score_inv'])
            batch = project_batch(scores, t0, baseline, config, pooling, ids)
            out['alpha'] = batch.alpha
        out['ert_months'] = batch.ert
        out['clv'] = clv_batch(batch.survival, chunk['margin'].to_numpy(), discount)
        out['truncated_at'] = batch.truncated_at
        logging.debug('scored {} customers'.format(len(out)))
        return out

    chunks = dataio.read_scoring(args.scoring, 'competing' if args.competing else 'single', args.chunksize)
    _write_scored(args, score_chunk, chunks, competing=granular)


def parse_curve(args):
    baseline = survival_core.load_baseline(args.baseline)
    baseline_path = survival_core.hazard_table(baseline, args.t0 + args.horizon)[args.t0:]
    scaled = project_hazard(Alpha(args.alpha), baseline, args.t0, args.horizon)
    curve = pd.DataFrame({
        'tenure': np.arange(args.t0, args.t0 + args.horizon),
        'baseline_hazard': baseline_path,
        'scaled_hazard': scaled,
        'survival': survival_core.hazard_to_survival(scaled).values,
    })
    dataio.write_table(args.out, curve)


def _odds_baseline(path):
    baseline = survival_core.load_baseline(path)
    if baseline.smoothing != 'jeffreys':
        logging.warning('odds model offsets need a Jeffreys-smoothed baseline; re-smoothing {}'.format(path))
        baseline = survival_core.with_smoothing(baseline, SmoothingConfig('jeffreys'))
    return baseline


def parse_fit_odds(args):
    baseline = _odds_baseline(args.baseline)
    rows = _concat(dataio.read_calibration(args.calibration), 'person-period rows')
    model = odds_model.fit_odds_model(rows, baseline, args.ridge, args.tol, args.max_iter)
    odds_model.save_model(model, args.out)
    print('Done. Model saved at {}'.format(args.out), file=sys.stderr)


def parse_score_odds(args):
    config = ProjectionConfig(args.eps, args.max_horizon)
    discount = _discount(args)
    model = odds_model.load_model(args.model)
    baseline = _odds_baseline(args.baseline)
    if survival_core.baseline_sha(baseline) != model.baseline_sha:
        raise BaselineMismatch('{} is not the baseline the model was fitted against'.format(args.baseline))

    def score_chunk(chunk):
        covariates = chunk[odds_model.covariate_columns(chunk)].to_numpy()
        batch = odds_model.project_odds_batch(model, covariates, chunk['tenure'].to_numpy(), baseline, config)
        return pd.DataFrame({'customer_id': chunk['customer_id'], 'alpha': batch.alpha, 'ert_months': batch.ert,
                             'clv': clv_batch(batch.survival, chunk['margin'].to_numpy(), discount),
                             'truncated_at': batch.truncated_at})

    chunks = dataio.read_scoring(args.scoring, 'odds', args.chunksize)
    _write_scored(args, score_chunk, chunks)


def parse_simulate(args):
    spec = simulate.load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    calibration, scoring, truth = simulate.generate_cohort(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    dataio.write_table(os.path.join(args.out_dir, 'calibration.csv'), calibration)
    dataio.write_table(os.path.join(args.out_dir, 'scoring.csv'), scoring)
    dataio.write_table(os.path.join(args.out_dir, 'truth.csv'), truth.frame)
    if spec.odds_beta is not None:
        rows = simulate.generate_person_periods(spec.baseline_shape, spec.odds_beta, spec.odds_rows,
                                                spec.max_tenure, spec.seed)
        dataio.write_table(os.path.join(args.out_dir, 'odds_calibration.csv'), rows)
    print('Done. Cohort saved in {}'.format(args.out_dir), file=sys.stderr)


def _add_projection_flags(parser):
    parser.add_argument('--eps', type=float, default=1e-6, help='stop once survival drops below this, default = 1e-6')
    parser.add_argument('--max-horizon', type=int, default=1200, help='months to project at most, default = 1200')
    parser.add_argument('--discount-annual', type=float, help='annual discount rate, converted to monthly')
    parser.add_argument('--discount-monthly', type=float, help='monthly discount rate')
    parser.add_argument('--workers', type=int, default=1, help='score chunks on this many threads, default = 1')
    parser.add_argument('--chunksize', type=int, default=dataio.CHUNKSIZE,
                        help='customers per chunk, default = {}'.format(dataio.CHUNKSIZE))


def build_parser():
    parser = argparse.ArgumentParser(description='survival curves, expected remaining tenure and CLV '
                                                 'from a churn score and a baseline hazard')
    subparsers = parser.add_subparsers()

    def command(name, func, help):
        sub = subparsers.add_parser(name, help=help)
        sub.add_argument('--config', help='JSON file whose keys mirror the flags (flags win)')
        sub.set_defaults(func=func, command=name, subparser=sub)
        return sub

    baseline = command('baseline', parse_baseline, 'estimate the baseline hazard by tenure')
    baseline.add_argument('--calibration', help='snapshot CSV: customer_id,tenure,churned[,cause]')
    baseline.add_argument('--histories', help='event history CSV: customer_id,duration,churned (Kaplan-Meier)')
    baseline.add_argument('--out', help='where to write the baseline JSON')
    baseline.add_argument('--smoothing', choices=['none', 'jeffreys'], default='none')
    baseline.add_argument('--tail-start', type=int, help='tenure the hazard is flat from')
    baseline.add_argument('--auto-tail', action='store_true', help='detect the tail start (the default)')
    baseline.add_argument('--window', type=int, default=6, help='tail detection window, default = 6')
    baseline.add_argument('--rel-tol', type=float, default=0.10, help='tail detection tolerance, default = 0.1')
    baseline.add_argument('--min-events', type=int, default=5, help='pool sparse tenures up to this many churners')
    baseline.add_argument('--competing', action='store_true', help='also write _v and _inv sub-baselines')

    score = command('score', parse_score, 'project survival, E(RT) and CLV per customer')
    score.add_argument('--baseline', help='baseline JSON (the voluntary one with --competing)')
    score.add_argument('--baseline-inv', help='involuntary sub-baseline JSON')
    score.add_argument('--scoring', help='scoring CSV')
    score.add_argument('--out', help='where to write the projections CSV')
    score.add_argument('--competing', action='store_true', help='scoring file carries score_v,score_inv')
    score.add_argument('--combine', choices=['granular', 'sum'], default='granular',
                       help='competing risks per cause, or one summed score, default = granular')
    score.add_argument('--min-events', type=int, help='override the pooling rule stored in the baseline')
    _add_projection_flags(score)

    curve = command('curve', parse_curve, 'plot data for one scaled hazard curve')
    curve.add_argument('--baseline', help='baseline JSON')
    curve.add_argument('--alpha', type=float, help='proportionality coefficient')
    curve.add_argument('--t0', type=int, help='current tenure')
    curve.add_argument('--horizon', type=int, help='months to emit')
    curve.add_argument('--out', help='CSV to write, - for standard output')

    fit = command('fit-odds', parse_fit_odds, 'fit the proportional odds model')
    fit.add_argument('--calibration', help='calibration CSV with x_1..x_m covariates')
    fit.add_argument('--baseline', help='baseline JSON used as the log-odds offset')
    fit.add_argument('--out', help='where to write the model JSON')
    fit.add_argument('--ridge', type=float, default=1e-6)
    fit.add_argument('--tol', type=float, default=1e-8)
    fit.add_argument('--max-iter', type=int, default=50)

    score_odds = command('score-odds', parse_score_odds, 'project customers with a fitted odds model')
    score_odds.add_argument('--model', help='model JSON from fit-odds')
    score_odds.add_argument('--baseline', help='the baseline JSON the model was fitted against')
    score_odds.add_argument('--scoring', help='scoring CSV: customer_id,tenure,margin,x_1..x_m')
    score_odds.add_argument('--out', help='where to write the projections CSV')
    _add_projection_flags(score_odds)

    sim = command('simulate', parse_simulate, 'generate a synthetic cohort with known truth')
    sim.add_argument('--spec', help='simulation spec JSON')
    sim.add_argument('--out-dir', help='directory for calibration/scoring/truth CSVs')
    sim.add_argument('--seed', type=int, help='overrides the spec seed')

    return parser


def _apply_config(parser, args, argv):
    try:
        with open(args.config) as f:
            config = json.load(f)
    except (OSError, ValueError) as err:
        parser.error('cannot read config {}: {}'.format(args.config, err))
    if not isinstance(config, dict):
        parser.error('config {} must hold a JSON object'.format(args.config))
    sub = args.subparser
    known = {a.dest for a in sub._actions} - {'help', 'config'}
    values = {key.replace('-', '_'): value for key, value in config.items()}
    unknown = sorted(set(values) - known)
    if unknown:
        parser.error('unknown keys in config {}: {}'.format(args.config, ', '.join(unknown)))
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _check_usage(parser, args):
    missing = [name for name in REQUIRED[args.command] if getattr(args, name) is None]
    if missing:
        parser.error('{} needs {}'.format(args.command, ', '.join('--' + m.replace('_', '-') for m in missing)))
    if args.command == 'baseline':
        if bool(args.calibration) == bool(args.histories):
            parser.error('baseline needs exactly one of --calibration and --histories')
        if args.tail_start is not None and args.auto_tail:
            parser.error('--tail-start and --auto-tail are mutually exclusive')
        if args.histories and args.competing:
            parser.error('--competing needs a calibration file with causes')
    if args.command in ('score', 'score-odds'):
        if args.discount_annual is not None and args.discount_monthly is not None:
            parser.error('--discount-annual and --discount-monthly are mutually exclusive')
        if args.workers < 1 or args.chunksize < 1:
            parser.error('--workers and --chunksize must be >= 1')
    if args.command == 'score' and args.competing and args.combine == 'granular' and not args.baseline_inv:
        parser.error('--competing needs --baseline-inv (or --combine sum)')


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, 'func'):
        parser.print_help(sys.stderr)
        parser.exit(2)
    if args.config:
        args = _apply_config(parser, args, argv)
    _check_usage(parser, args)
    return args


def main(argv=None):
    level = os.environ.get('LOG_LEVEL', 'info').lower()
    if level not in LOG_LEVELS:
        print('LOG_LEVEL must be one of {}'.format(', '.join(LOG_LEVELS)), file=sys.stderr)
        return 2
    logging.basicConfig(stream=sys.stderr, level=LOG_LEVELS[level], format='%(asctime)s %(levelname)s %(message)s')
    logging.getLogger().setLevel(LOG_LEVELS[level])
    try:
        args = parse_args(argv)
    except SystemExit as exit:
        return exit.code
    try:
        args.func(args)
    except ClvError as err:
        logging.error(str(err))
        return 1
    except OSError as err:
        logging.error('{}: {}'.format(type(err).__name__, err))
        return 1
    logging.info('done')
    return 0


if __name__ == '__main__':
    sys.exit(main())
