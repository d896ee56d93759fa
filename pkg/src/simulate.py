"""
Script to generate an SMG ground truth, its frames and a noisy masked observation set
"""
import logging
import sys
from collections import OrderedDict
from pathlib import Path

# Add the project root to Python path
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from config.bayesmg_config import OUTPUT_DIR  # noqa: E402
from modules.errors import ConfigError  # noqa: E402
from modules.experiments import FRAME_RECIPES, simulate_problem  # noqa: E402
from modules.masking import MaskSpec  # noqa: E402
from modules.matrix_io import save_dense_csv, save_triplet_csv, write_report  # noqa: E402
from modules.samplers import RngStream  # noqa: E402

logger = logging.getLogger(__name__)

HELP = 'simulate an SMG ground truth and a masked noisy observation set'
DEFAULT_RANK = 2


def add_arguments(parser):
    parser.add_argument('--m', type=int, help='square grid size')
    parser.add_argument('--m1', type=int, help='rows (overrides --m)')
    parser.add_argument('--m2', type=int, help='columns (overrides --m)')
    parser.add_argument('--sigma2', type=float, default=1.0)
    parser.add_argument('--eta', type=float, default=0.0, help='observation noise std')
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--n-obs', type=int, help='observe exactly this many entries')
    group.add_argument('--p-obs', type=float, help='observation probability per entry')
    parser.add_argument('--mask', choices=['mcar', 'mnar'], default='mcar')
    parser.add_argument('--frames', choices=FRAME_RECIPES, default='uniform')


def mask_from_args(args):
    if args.mask == 'mnar':
        if args.n_obs is not None or args.p_obs is not None:
            raise ConfigError("--mask mnar takes its rates from the intensity bands; drop --n-obs/--p-obs")
        return MaskSpec.mnar_intensity()
    if args.n_obs is not None:
        return MaskSpec.count(args.n_obs)
    if args.p_obs is not None:
        return MaskSpec.mcar(args.p_obs)
    raise ConfigError("simulate needs --n-obs or --p-obs for an MCAR mask")


def run(args, config):
    m1 = args.m1 or args.m
    m2 = args.m2 or args.m
    if not m1 or not m2:
        raise ConfigError("simulate needs --m or both --m1 and --m2")
    rank = config.get('prior.rank') or DEFAULT_RANK
    out_dir = config.output_dir(OUTPUT_DIR / 'simulate')

    problem = simulate_problem(m1, m2, int(rank), args.sigma2, args.eta, mask_from_args(args),
                               RngStream(config.seed), frames=args.frames)
    save_dense_csv(problem.truth, out_dir / 'truth.csv')
    save_triplet_csv(problem.obs, out_dir / 'observations.csv')
    save_dense_csv(problem.params.U.columns, out_dir / 'frame_u.csv')
    save_dense_csv(problem.params.V.columns, out_dir / 'frame_v.csv')
    summary = OrderedDict([
        ('shape', [m1, m2]),
        ('rank', int(rank)),
        ('sigma2', args.sigma2),
        ('eta', args.eta),
        ('mask', args.mask),
        ('frames', args.frames),
        ('seed', config.seed),
        ('n_observed', problem.obs.n),
    ])
    write_report(summary, out_dir / 'simulation.json')
    return summary


def main():
    from run_pipeline import run_subcommand
    run_subcommand('simulate', sys.argv[1:])


if __name__ == "__main__":
    main()
