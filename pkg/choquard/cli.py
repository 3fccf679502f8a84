"""
Command-line entry point.

    python -m choquard solve-ground --dim 3 --n 32 --box 16 --s 0.5 --alpha 2 --beta 2 \
        --p 2.2 --q 1.8 --lambda 0.5 --V const:1 --out runs/ground

Every exit prints a `status=<name>` line (ok, validation, nonconv, collapse, io).
"""
import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from . import config as settings
from .models.errors import ParameterError
from .models.run_manager import EXIT_CODES, VERIFY_VERBS, RunConfig, Runner, build_config

logger = logging.getLogger('cli')

# flag dest -> configuration key
_FLAG_KEYS = {
    'dim': 'dim', 'n': 'n', 'box': 'box', 's': 's', 'alpha': 'alpha', 'beta': 'beta',
    'p': 'p', 'q': 'q', 'lam': 'lambda', 'V': 'potential', 'tol': 'tol', 'max_iter': 'max_iter',
    'seed': 'seed', 'out': 'out', 'field_out': 'field_out', 'count': 'count', 'lambdas': 'lambdas',
    'verb': 'verb',
}


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--config', help='flat key=value configuration file; flags override it')
    parent.add_argument('--dim', type=int, help='space dimension (1, 2 or 3)')
    parent.add_argument('--n', type=int, help='points per axis, a power of two >= 8')
    parent.add_argument('--box', type=float, help='box length L')
    parent.add_argument('--s', type=float, help='fractional order in (0, 1)')
    parent.add_argument('--alpha', type=float, help='Riesz order of the p-term')
    parent.add_argument('--beta', type=float, help='Riesz order of the q-term')
    parent.add_argument('--p', type=float, help='exponent of the alpha-term')
    parent.add_argument('--q', type=float, help='exponent of the beta-term')
    parent.add_argument('--lambda', dest='lam', type=float, help='coupling of the beta-term')
    parent.add_argument('--V', help="potential as family:params, e.g. const:1, radial:1,2,1, osc:1")
    parent.add_argument('--tol', type=float, help='solver tolerance in (0, 1e-2]')
    parent.add_argument('--max-iter', dest='max_iter', type=int, help='iteration cap')
    parent.add_argument('--seed', type=int, help='seed for random profiles (0 uses the default profile)')
    parent.add_argument('--out', help=f'output directory (default from CHOQUARD_OUTPUT_DIR, {settings.OUTPUT_DIR})')
    parent.add_argument('--field-out', dest='field_out', help='field dump path (.csv or CHQF binary)')
    parent.add_argument('--log-level', dest='log_level', help='logging level')
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _common_flags()
    parser = argparse.ArgumentParser(prog='choquard', description='Fractional Choquard variational solver')
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('solve-ground', parents=[parent], help='groundstate on the Nehari manifold')
    commands.add_parser('solve-nodal', parents=[parent], help='least-energy sign-changing solution')
    commands.add_parser('compare-levels', parents=[parent], help='compare m_lambda with the limit level m_J')
    verify = commands.add_parser('verify', parents=[parent], help='run one verification suite')
    verify.add_argument('verb', choices=VERIFY_VERBS)
    verify.add_argument('--count', type=int, help='number of random samples (hls, grad)')
    sweep = commands.add_parser('sweep', parents=[parent], help='groundstate solves over several lambda values')
    sweep.add_argument('--lambdas', type=float, nargs='+', help='lambda values of the sweep')
    return parser


def _fail_validation(messages: List[str]) -> None:
    for message in messages:
        print(f"error: {message}", file=sys.stderr)
    print("status=validation")
    sys.exit(EXIT_CODES['validation'])


def parse_args(argv: Optional[List[str]] = None) -> RunConfig:
    """Parse and fully validate a command line

    Exits with status 2 and prints each violated inequality when validation fails.
    """
    args = build_parser().parse_args(argv)
    values: Dict[str, Any] = {'command': args.command}
    if args.config:
        try:
            values.update(settings.read_config_file(args.config))
        except OSError as e:
            print(f"error: {e}", file=sys.stderr)
            print("status=io")
            sys.exit(EXIT_CODES['io'])
    if args.V is not None:
        values.pop('potential.family', None)
        values.pop('potential.params', None)
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[key] = value
    if args.log_level:
        logging.getLogger().setLevel(args.log_level.upper())
    try:
        return build_config(values)
    except ParameterError as e:
        _fail_validation(e.violations)


def run(config: RunConfig) -> int:
    """Execute a validated configuration; prints the status line and returns the exit code"""
    logger.info(f"Running {config.command} into {config.out}")
    result = Runner(config).execute()
    for path in result.artifacts:
        logger.info(f"Wrote {path}")
    if result.status != 'ok':
        print(f"error: {result.report.get('error')}", file=sys.stderr)
    print(f"status={result.status}")
    return result.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    settings.configure_logging()
    return run(parse_args(argv))


if __name__ == '__main__':
    sys.exit(main())
