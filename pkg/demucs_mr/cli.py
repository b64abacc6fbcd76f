import argparse
import contextlib
import logging
import sys

from .decorators import exit_codes, timed
from .utils.checks import ExperimentChecks
from .utils.control import ControlUtil
from .utils.dsp import RESOLUTION_PRESETS
from .utils.exceptions import InvalidArgument
from .utils.setup import ExperimentConfig, load_config, set_config, setup_logging
from .variants import VARIANT_CLASSES, get_variant

log = logging.getLogger(__name__)

LOSS_PRESETS = ('conventional', 'stationary', 'single-32ms')
MRE_PRESETS = ('encoder', 'encoder-nonstationary')


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        print(f'error: invalid-argument: {message}', file=sys.stderr)
        sys.exit(1)


def str2bool(value):
    lowered = str(value).lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise argparse.ArgumentTypeError(f'expected a boolean, got {value!r}')


def build_parser():
    parser = CliParser(prog='demucs-mr', description='Desk-scale DEMUCS speech enhancement with MRE/MRD.')
    parser.add_argument('-v', '--verbose', action='count', default=0)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON experiment config (schema_version 1)')
    common.add_argument('--seed', type=int)
    sub = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    synth = sub.add_parser('synth-data', parents=[common], help='write a synthetic corpus and manifest')
    synth.add_argument('--out-dir')
    synth.add_argument('--count', type=int)
    synth.add_argument('--duration', type=float)

    train = sub.add_parser('train', parents=[common], help='train a variant with Adam')
    train.add_argument('--variant', choices=sorted(VARIANT_CLASSES))
    train.add_argument('--mre', type=str2bool, nargs='?', const=True)
    train.add_argument('--mrd', type=str2bool, nargs='?', const=True)
    train.add_argument('--alpha', type=float)
    train.add_argument('--steps', type=int)
    train.add_argument('--loss-preset', choices=LOSS_PRESETS)
    train.add_argument('--mre-preset', choices=MRE_PRESETS)
    train.add_argument('--manifest')
    train.add_argument('--checkpoint')
    train.add_argument('--log')
    train.add_argument('--no-resume', action='store_true')

    enhance = sub.add_parser('enhance', parents=[common], help='enhance one WAV file')
    enhance.add_argument('checkpoint')
    enhance.add_argument('input')
    enhance.add_argument('output')
    enhance.add_argument('--emit-heads', action='store_true')

    evaluate = sub.add_parser('evaluate', help='objective metrics over paired directories')
    evaluate.add_argument('ref_dir')
    evaluate.add_argument('deg_dir')
    evaluate.add_argument('--pesq-sidecar')
    evaluate.add_argument('--composite', action='store_true', help='also report CSIG/CBAK/COVL')
    evaluate.add_argument('--jobs', type=int, default=1)
    evaluate.add_argument('--report', help='CSV output path (default stdout)')
    evaluate.add_argument('--config')
    return parser


def resolve_config(args):
    cfg = load_config(getattr(args, 'config', None))
    overrides = {
        'seed': getattr(args, 'seed', None),
        'data:out_dir': getattr(args, 'out_dir', None),
        'data:count': getattr(args, 'count', None),
        'data:duration_s': getattr(args, 'duration', None),
        'data:manifest': getattr(args, 'manifest', None),
        'loss:alpha': getattr(args, 'alpha', None),
        'optimizer:steps': getattr(args, 'steps', None),
        'checkpoint:path': getattr(args, 'checkpoint', None) if args.command == 'train' else None,
        'log_path': getattr(args, 'log', None),
        'model:mre_resolutions': getattr(args, 'mre_preset', None),
    }
    if getattr(args, 'variant', None):
        get_variant(args.variant).apply(cfg)
    for flag in ('mre', 'mrd'):
        if getattr(args, flag, None) is not None:
            set_config(cfg, f'model:{flag}_enabled', getattr(args, flag))
    preset = getattr(args, 'loss_preset', None)
    if preset:
        set_config(cfg, 'loss:resolutions', preset)
        if len(RESOLUTION_PRESETS[preset]) == 3:
            set_config(cfg, 'model:mrd_head_resolutions', preset)
    for key, value in overrides.items():
        if value is not None:
            set_config(cfg, key, value)
    errors = ExperimentChecks.perform(cfg)
    if errors:
        raise InvalidArgument('; '.join(errors))
    return cfg


@timed
def cmd_synth_data(args):
    exp = ExperimentConfig.from_dict(resolve_config(args))
    path = ControlUtil.synth_data(exp)
    print(path)


@timed
def cmd_train(args):
    exp = ExperimentConfig.from_dict(resolve_config(args))
    summary = ControlUtil.train(exp, resume=not args.no_resume)
    print(f'{summary.variant}: {summary.steps} steps, total {summary.first_total:.6g} -> '
          f'{summary.last_total:.6g}, checkpoint {summary.checkpoint}')


@timed
def cmd_enhance(args):
    expect = None
    if args.config:
        expect = ExperimentConfig.from_dict(resolve_config(args)).model
    for path in ControlUtil.enhance_file(args.checkpoint, args.input, args.output, args.emit_heads, expect):
        print(path)


@timed
def cmd_evaluate(args):
    coeffs = None
    if args.config:
        coeffs = ExperimentConfig.from_dict(load_config(args.config)).composite
    if args.jobs < 1:
        raise InvalidArgument(f'--jobs must be at least 1, got {args.jobs}')
    with contextlib.ExitStack() as stack:
        out = stack.enter_context(open(args.report, 'w', newline='')) if args.report else sys.stdout
        ok, msg = ControlUtil.evaluate_dirs(args.ref_dir, args.deg_dir, out, args.pesq_sidecar,
                                            args.composite, args.jobs, coeffs)
    if not ok:
        print(f'error: unpaired-files: {msg}', file=sys.stderr)
        return 2


COMMANDS = {
    'synth-data': cmd_synth_data,
    'train': cmd_train,
    'enhance': cmd_enhance,
    'evaluate': cmd_evaluate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1
    level = {0: None, 1: 'INFO'}.get(args.verbose, 'DEBUG')
    try:
        setup_logging(level)
    except InvalidArgument as e:
        print(e.line(), file=sys.stderr)
        return e.exit_code
    return exit_codes(COMMANDS[args.command])(args)
