"""
Environment defaults and flat key=value configuration files.
"""
import os
import logging
from typing import Any, Dict, Optional

from dotenv import load_dotenv, dotenv_values

# Load environment variables
load_dotenv()

LOG_LEVEL = os.environ.get('CHOQUARD_LOG_LEVEL', 'INFO')
OUTPUT_DIR = os.environ.get('CHOQUARD_OUTPUT_DIR', 'runs')
WORKERS = int(os.environ.get('CHOQUARD_WORKERS', '4'))

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Documented keys of the flat configuration file
CONFIG_KEYS = (
    'dim', 'n', 'box', 's', 'alpha', 'beta', 'p', 'q', 'lambda',
    'potential.family', 'potential.params', 'mode', 'tol', 'max_iter', 'seed',
)


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging for an entry point"""
    logging.basicConfig(level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
                        format=LOG_FORMAT)


def read_config_file(path: str) -> Dict[str, str]:
    """Read a flat key=value configuration file

    Args:
        path: Path of the file

    Returns:
        Dict[str, str]: Known keys mapped to their raw string values

    Raises:
        OSError: If the file cannot be read
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    values = dotenv_values(path)
    unknown = [key for key in values if key not in CONFIG_KEYS]
    if unknown:
        logging.getLogger('config').warning(f"Ignoring unknown config keys: {unknown}")
    return {key: value for key, value in values.items() if key in CONFIG_KEYS and value is not None}


def write_config_file(path: str, values: Dict[str, Any]) -> None:
    """Write a flat key=value configuration file with decimal floats"""
    with open(path, 'w') as handle:
        for key in CONFIG_KEYS:
            if key in values:
                value = values[key]
                handle.write(f"{key}={repr(value) if isinstance(value, float) else value}\n")


def config_from_params(params, grid, **extra: Any) -> Dict[str, Any]:
    """Flat configuration values for a ModelParams/GridSpec pair, the inverse of read_config_file"""
    values: Dict[str, Any] = {
        'dim': grid.dim, 'n': grid.n, 'box': float(grid.box_length),
        's': params.s, 'alpha': params.alpha, 'beta': params.beta, 'p': params.p, 'q': params.q,
        'lambda': params.lam, 'potential.family': params.potential.family,
        'potential.params': ','.join(repr(float(x)) for x in params.potential.params),
        'mode': params.mode,
    }
    values.update({key: value for key, value in extra.items() if key in CONFIG_KEYS})
    return values
