"""
Script to complete a partially observed matrix with the BayeSMG Gibbs sampler
and write the posterior artifacts (mean, HPD widths, heatmaps, traces, report)
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
from modules.diagnostics import MIN_HPD_SAMPLES, build_report, hpd_intervals, trace_table  # noqa: E402
from modules.errors import ConfigError, DimensionMismatchError  # noqa: E402
from modules.gibbs import run_chain  # noqa: E402
from modules.masking import MaskSpec, apply_mask  # noqa: E402
from modules.matrix_io import (FORMATS, NormalizedImage, list_artifacts, load_dense_csv,  # noqa: E402
                               load_matrix, render_heatmap, save_dense_csv, save_samples_binary,
                               write_pgm, write_report, write_table_csv)
from modules.samplers import RngStream  # noqa: E402
from modules.smg_model import ObservationSet  # noqa: E402

logger = logging.getLogger(__name__)

HELP = 'complete a matrix with the BayeSMG posterior sampler'


def add_arguments(parser):
    """Input flags shared by `complete` and `bpmf`."""
    parser.add_argument('--input', required=True, help='observations: triplet CSV, dense CSV or PGM image')
    parser.add_argument('--format', choices=FORMATS, help='input format (inferred from the file when omitted)')
    parser.add_argument('--shape', help='grid size m1,m2 for triplet files without a shape header')
    parser.add_argument('--truth', help='dense CSV ground truth for MFE, MSD and coverage')
    parser.add_argument('--mask', choices=['mcar', 'mnar'], help='hide entries of a dense input before completing')
    parser.add_argument('--p-obs', type=float, default=0.2, help='MCAR observation probability')
    parser.add_argument('--eta', type=float, default=0.0, help='noise std added to observed entries of a masked input')
    parser.add_argument('--save-samples', action='store_true', help='also write samples.bin')


def _parse_shape(text):
    if text is None:
        return None
    try:
        m1, m2 = (int(v) for v in text.split(','))
    except ValueError:
        raise ConfigError(f"--shape must look like m1,m2, got {text!r}") from None
    return m1, m2


def load_problem(args, config):
    """ObservationSet, optional truth and optional image normalization for a run."""
    loaded = load_matrix(args.input, args.format, _parse_shape(args.shape))
    image = loaded if isinstance(loaded, NormalizedImage) else None
    truth = None
    if isinstance(loaded, ObservationSet):
        obs = loaded
    else:
        dense = image.matrix if image is not None else loaded
        if args.mask is None:
            obs = ObservationSet.from_mask(dense, np.ones(dense.shape, dtype=bool))
        else:
            spec = MaskSpec.mcar(args.p_obs) if args.mask == 'mcar' else MaskSpec.mnar_intensity()
            obs = apply_mask(dense, spec, args.eta, RngStream(config.seed).derive(1))
            truth = dense
    logger.info(f"Loaded {obs.n} observed entries on a {obs.m1}x{obs.m2} grid from {args.input}")

    if args.truth:
        truth = load_dense_csv(args.truth)
    if truth is not None and truth.shape != obs.shape:
        raise DimensionMismatchError(f"truth is {truth.shape[0]}x{truth.shape[1]}, observations are {obs.m1}x{obs.m2}")
    return obs, truth, image


def emit_artifacts(samples, obs, truth, config, out_dir, method, image=None, save_samples=False):
    """Write every artifact of a completion run and return the report."""
    cfg = config.gibbs_config()
    level = float(config.get('run.level'))
    m1, m2 = obs.shape
    entries = [tuple(e) for e in config.get('run.trace_entries') if 0 <= e[0] < m1 and 0 <= e[1] < m2]

    mean = samples.posterior_mean()
    save_dense_csv(mean, out_dir / 'posterior_mean.csv')
    render_heatmap(mean, out_dir / 'posterior_mean.png', config.get('run.palette_mean'))
    if image is not None:
        pixels = np.clip(np.rint(image.invert(mean)), 0, 255).astype(np.uint8)
        write_pgm(pixels, out_dir / 'posterior_mean.pgm')

    if samples.n_samples >= MIN_HPD_SAMPLES:
        width = hpd_intervals(samples, level).width
        save_dense_csv(width, out_dir / 'hpd_width.csv')
        render_heatmap(width, out_dir / 'hpd_width.png', config.get('run.palette_width'))
    else:
        logger.warning(f"Only {samples.n_samples} retained draws; HPD widths need {MIN_HPD_SAMPLES}")

    for chain in range(samples.n_chains):
        header, rows = trace_table(samples, entries, chain)
        name = 'trace.csv' if samples.n_chains == 1 else f'trace_chain{chain}.csv'
        write_table_csv(header, rows, out_dir / name)

    if save_samples or config.get('run.save_samples'):
        save_samples_binary(samples.x_samples, out_dir / 'samples.bin')

    hidden = ~obs.mask()
    metrics = build_report(samples, truth, level, restrict=hidden if hidden.any() else None, entries=entries)
    if metrics.mfe is not None:
        logger.info(f"{method} MFE {metrics.mfe:.4g}, coverage {metrics.coverage}")

    rates = samples.acceptance_rates
    report = OrderedDict([
        ('method', method),
        ('shape', [m1, m2]),
        ('n_observed', obs.n),
        ('rank', samples.meta.get('rank')),
        ('seed', config.seed),
        ('iterations', cfg.total_iters),
        ('burn_in', cfg.burn),
        ('thin', cfg.thin),
        ('chains', cfg.n_chains),
        ('eta2_mode', config.get('gibbs.eta2_mode')),
        ('level', level),
        ('n_samples', samples.n_samples),
        ('acceptance_rate', float(np.mean(rates)) if rates else None),
        ('metrics', metrics.to_dict()),
        ('artifacts', [p.name for p in list_artifacts(out_dir) if p.name != 'report.json']),
    ])
    write_report(report, out_dir / 'report.json')
    return report


def run(args, config):
    obs, truth, image = load_problem(args, config)
    out_dir = config.output_dir(OUTPUT_DIR / 'complete')
    samples = run_chain(obs, config.hyperparams(), config.gibbs_config(), config.solver_config())
    return emit_artifacts(samples, obs, truth, config, out_dir, 'bayesmg', image, args.save_samples)


def main():
    from run_pipeline import run_subcommand
    run_subcommand('complete', sys.argv[1:])


if __name__ == "__main__":
    main()
