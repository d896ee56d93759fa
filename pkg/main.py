"""Command-line entry point: python main.py <complete|bpmf|simulate|coherence|replicate> [flags]"""
import sys

from run_pipeline import cli_dispatch

if __name__ == "__main__":
    sys.exit(cli_dispatch(sys.argv[1:]))
