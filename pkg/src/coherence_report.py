"""
Script to report coherences, overall coherence and cross-coherence tables of a
row/column subspace, plus the row alignment ranking
"""
import logging
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np

# Add the project root to Python path
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from config.bayesmg_config import OUTPUT_DIR  # noqa: E402
from modules.errors import ConfigError  # noqa: E402
from modules.linalg import Frame, svd  # noqa: E402
from modules.matrix_io import load_dense_csv, save_dense_csv, write_report, write_table_csv  # noqa: E402
from modules.smg_model import coherence_vector, cross_coherence_matrix, overall_coherence  # noqa: E402

logger = logging.getLogger(__name__)

HELP = 'coherence and cross-coherence tables from a frame or a completed matrix'
TOP_ROWS = 10


def add_arguments(parser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--frame', help='dense CSV whose columns span the subspace')
    source.add_argument('--input', help='dense CSV matrix (e.g. a posterior mean); needs --rank')
    parser.add_argument('--top', type=int, default=TOP_ROWS, help='rows listed in the report summary')


def load_frames(args, config):
    """Named frames to report on: one for --frame, row and column spaces for --input."""
    if args.frame:
        return OrderedDict([('frame', Frame.orthonormalize(load_dense_csv(args.frame)))])
    rank = config.get('prior.rank')
    if rank is None:
        raise ConfigError("coherence from a matrix needs --rank")
    U, _, V = svd(load_dense_csv(args.input), rank=int(rank))
    return OrderedDict([('rows', U), ('cols', V)])


def alignment_table(F: Frame) -> np.ndarray:
    """(position, index, mu_i, mu_i * m / R) with rows sorted by decreasing coherence."""
    mu = coherence_vector(F)
    order = np.argsort(-mu, kind='stable')
    return np.column_stack([np.arange(1, F.m + 1), order, mu[order], mu[order] * F.m / F.rank])


def describe(name, F: Frame, out_dir: Path, top: int):
    mu = coherence_vector(F)
    write_table_csv(['index', 'coherence'], np.column_stack([np.arange(F.m), mu]),
                    out_dir / f'coherence_{name}.csv')
    save_dense_csv(cross_coherence_matrix(F), out_dir / f'cross_coherence_{name}.csv')
    ranking = alignment_table(F)
    write_table_csv(['position', 'index', 'coherence', 'relative'], ranking, out_dir / f'alignment_{name}.csv')
    mu_max = overall_coherence(F)
    logger.info(f"Overall coherence of {name}: {mu_max:.4g} (incoherent level R/m = {F.rank / F.m:.4g})")
    return OrderedDict([
        ('m', F.m),
        ('rank', F.rank),
        ('overall_coherence', mu_max),
        ('relative_coherence', mu_max * F.m / F.rank),
        ('top_rows', [int(i) for i in ranking[:top, 1]]),
    ])


def run(args, config):
    out_dir = config.output_dir(OUTPUT_DIR / 'coherence')
    report = OrderedDict((name, describe(name, F, out_dir, args.top))
                         for name, F in load_frames(args, config).items())
    write_report(report, out_dir / 'coherence.json')
    return report


def main():
    from run_pipeline import run_subcommand
    run_subcommand('coherence', sys.argv[1:])


if __name__ == "__main__":
    main()
