"""
Script to run a named desk-scale experiment: replications are fanned out as
Celery tasks, rows are collected in replication order and written once
"""
import logging
import sys
from pathlib import Path

# Add the project root to Python path
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from config.bayesmg_config import OUTPUT_DIR  # noqa: E402
from modules.errors import BayesmgError, ConfigError  # noqa: E402
from modules.experiments import EXPERIMENTS, experiment_params, summarize  # noqa: E402
from modules.matrix_io import write_report, write_rows_csv  # noqa: E402

logger = logging.getLogger(__name__)

HELP = 'run a named experiment (' + ', '.join(EXPERIMENTS) + ')'


def add_arguments(parser):
    parser.add_argument('experiment', choices=list(EXPERIMENTS))
    parser.add_argument('--reps', type=int, help='number of replications')


def resolve_params(args, config):
    """Experiment defaults <- replicate.* config values <- --reps/--iters/--burn-in."""
    overrides = {
        'reps': args.reps if args.reps is not None else config.get('replicate.reps'),
        'iters': args.iters if args.iters is not None else config.get('replicate.iters'),
        'burn_in': args.burn_in if args.burn_in is not None else config.get('replicate.burn_in'),
    }
    params = experiment_params(args.experiment, overrides)
    if int(params['reps']) < 1:
        raise ConfigError(f"--reps must be at least 1, got {params['reps']}")
    return params


def run(args, config):
    from celery_app import dispatch_replications

    params = resolve_params(args, config)
    name, reps = args.experiment, int(params['reps'])
    out_dir = config.output_dir(OUTPUT_DIR / f'replicate_{name}')

    logger.info(f"⏳ ⏳ ⏳  {name}: {reps} replications, seed {config.seed}  ⏳ ⏳ ⏳")
    results = dispatch_replications(name, reps, config.seed, params)
    failed = [r for r in results if r['status'] != 'SUCCESS']
    if failed:
        first = failed[0]
        raise BayesmgError(f"{len(failed)}/{reps} replications failed; rep {first['rep']}: "
                           f"{first['error']}: {first['details']}")

    rows = [row for r in results for row in r['rows']]
    write_rows_csv(rows, out_dir / f'{name}.csv')
    summary = summarize(name, rows)
    summary['params'] = params
    write_report(summary, out_dir / f'{name}_summary.json')

    logger.info(f"⏳ ⏳ ⏳  {name} summary  ⏳ ⏳ ⏳")
    for key, value in summary.items():
        if key != 'params':
            logger.info(f"{key}: {value}")
    return summary


def main():
    from run_pipeline import run_subcommand
    run_subcommand('replicate', sys.argv[1:])


if __name__ == "__main__":
    main()
