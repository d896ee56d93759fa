import argparse
import json
import logging
import re
import sys
from pathlib import Path

# Add the project root to Python path
PROJECT_ROOT = Path(__file__).parent.absolute()
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from config.bayesmg_config import CONFIG_PATH, LOG_FILE  # noqa: E402
from modules.errors import BayesmgError  # noqa: E402
from modules.run_config import FLAG_KEYS, load_run_config  # noqa: E402
from src import coherence_report, complete_matrix, replicate, run_bpmf, simulate  # noqa: E402

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

SUBCOMMANDS = {
    'complete': complete_matrix,
    'bpmf': run_bpmf,
    'simulate': simulate,
    'coherence': coherence_report,
    'replicate': replicate,
}


# Set up logging with UTF-8 encoding and emojis
class EmojiFormatter(logging.Formatter):
    # ANSI color codes
    COLORS = {
        'blue': '\033[94m',    # Chain start
        'green': '\033[92m',   # Chain completed
        'yellow': '\033[93m',  # Replication start
        'cyan': '\033[96m',    # Chain progress
        'reset': '\033[0m'     # Reset color
    }

    def format(self, record):
        message = str(record.msg)
        # Separator lines keep their own decoration
        if "⏳" in message or "⭐" in message:
            return super().format(record)

        if record.levelno >= logging.ERROR:
            record.msg = f"❌  {message}"
        elif record.levelno >= logging.WARNING:
            record.msg = f"⚠️  {message}"
        elif record.levelno >= logging.INFO:
            msg = message.lower()
            progress = re.search(r'iteration (\d+)/(\d+)', msg)
            if progress:
                done, total = int(progress.group(1)), int(progress.group(2))
                record.msg = f"{self.COLORS['cyan']}🔗  [{100 * done // total:3d}%] {message}{self.COLORS['reset']}"
            elif "completed" in msg and "chain" in msg:
                record.msg = f"{self.COLORS['green']}✅  {message}{self.COLORS['reset']}"
            elif "completed" in msg:
                if not message.startswith("✅"):
                    record.msg = f"✅  {message}"
            elif "starting" in msg and "chain" in msg:
                record.msg = f"{self.COLORS['blue']}🚀  {message}{self.COLORS['reset']}"
            elif "starting" in msg and "replication" in msg:
                record.msg = f"{self.COLORS['yellow']}🧪  {message}{self.COLORS['reset']}"
            elif "starting" in msg:
                record.msg = f"🚀  {message}"
            elif "estimated" in msg or "selected" in msg:
                record.msg = f"🎯  {message}"
            elif "masked" in msg:
                record.msg = f"🎭  {message}"
            elif "coverage" in msg or "mfe" in msg:
                record.msg = f"📊  {message}"
            elif "saved" in msg:
                record.msg = f"💾  {message}"
            elif "loaded" in msg or "found" in msg:
                record.msg = f"🔍  {message}"
        return super().format(record)


def setup_logging(log_file=LOG_FILE, level=logging.INFO):
    """Route every module logger to stdout and the log file through the EmojiFormatter."""
    handlers = [logging.StreamHandler(sys.stdout)]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)

    # Apply the emoji formatter to the root logger
    for handler in logging.getLogger().handlers:
        handler.setFormatter(EmojiFormatter(LOG_FORMAT))


logger = logging.getLogger(__name__)


def _common_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run config (default: config/master_config.json)')
    common.add_argument('--set', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help='override one config value; repeatable')
    common.add_argument('--seed', type=int)
    common.add_argument('--iters', type=int, help='total Gibbs iterations')
    common.add_argument('--burn-in', type=int)
    common.add_argument('--thin', type=int)
    common.add_argument('--rank', type=int, help='omit to estimate from the nuclear-norm fit')
    common.add_argument('--eta2', help="'sampled' or 'fixed:<value>'")
    common.add_argument('--chains', type=int)
    common.add_argument('--out-dir')
    common.add_argument('--log-file', default=str(LOG_FILE))
    return common


def build_parser():
    parser = argparse.ArgumentParser(
        prog='bayesmg',
        description='Bayesian low-rank matrix completion with posterior uncertainty',
    )
    common = _common_flags()
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)
    for name, module in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, parents=[common], help=module.HELP, description=module.HELP)
        module.add_arguments(sub)
    return parser


def _config_for(args):
    path = args.config
    if path is None and CONFIG_PATH.exists():
        path = CONFIG_PATH
    flags = {name: getattr(args, name, None) for name in FLAG_KEYS}
    return load_run_config(path, overrides=args.set, flags=flags)


def _report_error(e):
    print(f"error: kind={type(e).__name__} message={json.dumps(str(e))}", file=sys.stderr)
    return 1


def cli_dispatch(argv=None):
    """Parse argv, run one subcommand and return its exit code.

    0 on success, 1 with a single `error: kind=... message=...` line on stderr
    for any failure inside a subcommand, 2 for usage errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    setup_logging(args.log_file)
    try:
        config = _config_for(args)
        logger.info(f"Starting {args.command} (seed {config.seed})")
        SUBCOMMANDS[args.command].run(args, config)
    except (BayesmgError, OSError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return _report_error(e)
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {str(e)}")
        return _report_error(e)
    logger.info(f"⭐  {args.command} completed")
    return 0


def run_subcommand(name, argv):
    """Entry for the standalone src/ scripts: `python src/<script>.py ...`."""
    sys.exit(cli_dispatch([name] + list(argv)))


if __name__ == "__main__":
    sys.exit(cli_dispatch(sys.argv[1:]))
