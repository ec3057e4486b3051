"""
`dwlab <command> [flags]`. Each command is a `main(config)` in dwlab.main.<module>; flags and --config files are
parsed into its config dataclass.

Exit codes: 0 success, 2 usage, 3 pre-flight, 4 task failures, 5 check failures, 1 any other error.
"""
import importlib
import logging
import sys
from typing import List, Optional

from dwlab.config import config_class, parse_config
from dwlab.errors import DwlabError, UsageError
from dwlab.logging import init_logger


logger = logging.getLogger(__name__)

COMMANDS = {
    "gen-math": "dwlab.main.gen_math",
    "gen-writing": "dwlab.main.gen_writing",
    "verify": "dwlab.main.verify",
    "simulate": "dwlab.main.simulate",
    "run": "dwlab.main.run",
    "score": "dwlab.main.score",
    "analyze": "dwlab.main.analyze",
}

USAGE = "usage: dwlab {" + ",".join(COMMANDS) + "} [--config PATH] [--flag value ...]"


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0 if argv else UsageError.exit_code
    command, rest = argv[0], argv[1:]
    if command not in COMMANDS:
        print(f"unknown command {command!r}\n{USAGE}", file=sys.stderr)
        return UsageError.exit_code

    init_logger(None)
    module = importlib.import_module(COMMANDS[command])
    try:
        cfg = parse_config(config_class(module.main), rest)
    except SystemExit as e:
        # argparse exits 0 on --help and 2 on bad flags
        return e.code if isinstance(e.code, int) else UsageError.exit_code
    except Exception as e:
        logger.error(f"{command}: invalid configuration: {e}")
        return UsageError.exit_code

    try:
        module.main(cfg)
    except DwlabError as e:
        logger.error(f"{command}: {e}")
        return e.exit_code
    except (OSError, ValueError) as e:
        logger.exception(f"{command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
