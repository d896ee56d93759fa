"""
Script to complete a matrix with the BPMF baseline; same inputs and artifacts as `complete`
"""
import sys
from pathlib import Path

# Add the project root to Python path
project_root = Path(__file__).parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from config.bayesmg_config import OUTPUT_DIR  # noqa: E402
from modules.bpmf import run_bpmf  # noqa: E402
from src.complete_matrix import add_arguments, emit_artifacts, load_problem  # noqa: E402,F401

HELP = 'complete a matrix with the BPMF baseline sampler'


def run(args, config):
    obs, truth, image = load_problem(args, config)
    out_dir = config.output_dir(OUTPUT_DIR / 'bpmf')
    samples = run_bpmf(obs, config.bpmf_hyper(), config.gibbs_config(), config.solver_config())
    return emit_artifacts(samples, obs, truth, config, out_dir, 'bpmf', image, args.save_samples)


def main():
    from run_pipeline import run_subcommand
    run_subcommand('bpmf', sys.argv[1:])


if __name__ == "__main__":
    main()
