#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# anchorflow/cli.py

"""Command line entry point: ``anchorflow <command> ...``.

Exit status is 0 on success, 1 for any :class:`AnchorFlowError` and 2 for
usage errors.
"""

from typing import Sequence

import argparse
import logging
import os
import sys

from anchorflow.checkpoint import load_checkpoint, save_checkpoint
from anchorflow.config import Config, SamplerConfig, load_config
from anchorflow.data import Corpus, make_benchmark, make_dataset
from anchorflow.decorators import Timed
from anchorflow.degrade import MAX_STRENGTH, degrade
from anchorflow.errors import AnchorFlowError, ReferenceCountError
from anchorflow.evaluate import MODES, evaluate, reference_gap, restore
from anchorflow.flow import MAX_REFERENCES
from anchorflow.identity import StubIdentityEncoder
from anchorflow.imageio import read_image, write_image
from anchorflow.train import train, write_loss_log

__all__ = ['build_parser', 'main']

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
EXIT_ERROR = 1
EXIT_USAGE = 2

logger = logging.getLogger(__name__)


def _config(args: argparse.Namespace) -> Config:
    return load_config(args.config) if args.config else Config()


def _sampler(args: argparse.Namespace, config: Config) -> SamplerConfig:
    base = config.sampler()
    return SamplerConfig(
        base.steps if args.steps is None else args.steps,
        base.guidance_scale if args.guidance is None else args.guidance,
        base.seed if args.seed is None else args.seed).validate()


@Timed('train')
def cmd_train(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.steps is not None:
        config = config.replace(train_steps=args.steps)
    result = train(config, progress=args.progress)
    curve = result.curve
    metadata = {'train_steps': len(curve)}
    if curve:
        metadata['final_l_fm'] = '{0:.6f}'.format(curve[-1]['l_fm'])
    save_checkpoint(args.out, result.model, metadata)
    write_loss_log(args.log or os.path.splitext(args.out)[0] + '.loss.csv',
                   curve)
    logger.info('saved checkpoint to %s', args.out)
    return 0


@Timed('restore')
def cmd_restore(args: argparse.Namespace) -> int:
    refs = args.ref or []
    if len(refs) > MAX_REFERENCES:
        raise ReferenceCountError('at most {0} --ref images are supported, got '
                                  '{1}'.format(MAX_REFERENCES, len(refs)))
    model, _ = load_checkpoint(args.ckpt)
    size = model.cfg.image_size
    degraded = read_image(args.deg, size)
    references = [read_image(path, size) for path in refs]
    restored = restore(model, degraded, references,
                       _sampler(args, model.config))
    write_image(args.out, restored)
    logger.info('restored %s with %d references into %s', args.deg,
                len(references), args.out)
    return 0


@Timed('degrade')
def cmd_degrade(args: argparse.Namespace) -> int:
    image = read_image(args.input)
    write_image(args.out, degrade(image, args.strength, args.seed,
                                  _config(args).degrade()))
    return 0


@Timed('eval')
def cmd_eval(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.ckpt)
    corpus = Corpus.load(args.corpus)
    report = evaluate(model, corpus, args.mode, _sampler(args, model.config),
                      progress=args.progress)
    report.write_csv(args.report)
    print('{0}: ref_cosine {1:.4f} gt_cosine {2:.4f} psnr {3:.2f} '
          '(skipped {4})'.format(report.mode, report.ref_cosine,
                                 report.gt_cosine, report.psnr,
                                 report.skipped))
    return 0


@Timed('make-data')
def cmd_make_data(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.clean:
        corpus = make_dataset(args.n, args.refs, args.seed, config.image_size,
                              args.progress)
    else:
        corpus = make_benchmark(args.n, args.refs, args.seed, args.strength,
                                args.base_seed, config.degrade(),
                                config.image_size, args.progress)
    corpus.save(args.out)
    return 0


@Timed('gap')
def cmd_gap(args: argparse.Namespace) -> int:
    config = _config(args)
    encoder = StubIdentityEncoder(
        (config.image_channels, config.image_size, config.image_size),
        config.id_dim, config.stub_grid, config.stub_seed)
    report = reference_gap(Corpus.load(args.corpus), encoder)
    report.write_csv(args.report)
    print('reference-target cosine {0:.4f} +- {1:.4f} over {2} identities'
          .format(report.mean, report.std, report.count))
    return 0


def _strength(text: str) -> int:
    value = int(text)
    if not 0 <= value <= MAX_STRENGTH:
        raise argparse.ArgumentTypeError('strength must lie in 0..{0}'
                                         .format(MAX_STRENGTH))
    return value


def _add_sampler_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--steps', type=int, help='sampling steps')
    parser.add_argument('--guidance', type=float, help='guidance scale')
    parser.add_argument('--seed', type=int, help='noise seed')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='anchorflow',
        description='Reference-aware flow-matching face restoration.')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true')
    verbosity.add_argument('-q', '--quiet', action='store_true')
    parser.add_argument('--progress', action='store_true',
                        help='show progress bars')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    sub = commands.add_parser('train', help='train a model from a config')
    sub.add_argument('--config', help='flat key = value config file')
    sub.add_argument('--out', required=True, help='checkpoint to write')
    sub.add_argument('--log', help='loss log CSV (default: next to --out)')
    sub.add_argument('--steps', type=int, help='override train_steps')
    sub.set_defaults(handler=cmd_train)

    sub = commands.add_parser('restore', help='restore one degraded image')
    sub.add_argument('--ckpt', required=True)
    sub.add_argument('--deg', required=True, help='degraded image')
    sub.add_argument('--ref', action='append', help='reference image, up to 3')
    sub.add_argument('--out', required=True)
    _add_sampler_flags(sub)
    sub.set_defaults(handler=cmd_restore)

    sub = commands.add_parser('degrade', help='apply the degradation chain')
    sub.add_argument('--in', dest='input', required=True)
    sub.add_argument('--strength', type=_strength, required=True)
    sub.add_argument('--seed', type=int, required=True)
    sub.add_argument('--out', required=True)
    sub.add_argument('--config')
    sub.set_defaults(handler=cmd_degrade)

    sub = commands.add_parser('eval', help='evaluate a checkpoint on a corpus')
    sub.add_argument('--ckpt', required=True)
    sub.add_argument('--corpus', required=True)
    sub.add_argument('--mode', choices=MODES, required=True)
    sub.add_argument('--report', required=True, help='CSV report to write')
    _add_sampler_flags(sub)
    sub.set_defaults(handler=cmd_eval)

    sub = commands.add_parser('make-data', help='generate a synthetic corpus')
    sub.add_argument('--n', type=int, required=True, help='identities')
    sub.add_argument('--refs', type=int, required=True,
                     help='references per identity')
    sub.add_argument('--seed', type=int, required=True)
    sub.add_argument('--out', required=True, help='corpus directory')
    sub.add_argument('--strength', type=_strength,
                     help='fixed degradation strength (default: bucket draw)')
    sub.add_argument('--base-seed', type=int, default=42,
                     help='degradation seed of identity 0')
    sub.add_argument('--clean', action='store_true',
                     help='skip the degraded images')
    sub.add_argument('--config')
    sub.set_defaults(handler=cmd_make_data)

    sub = commands.add_parser('gap', help='reference-target identity gap')
    sub.add_argument('--corpus', required=True)
    sub.add_argument('--report', required=True)
    sub.add_argument('--config')
    sub.set_defaults(handler=cmd_gap)
    return parser


def main(argv: Sequence[str] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.DEBUG if args.verbose
             else logging.WARNING if args.quiet else logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except ReferenceCountError as error:
        parser.print_usage(sys.stderr)
        print('anchorflow: error: {0}'.format(error), file=sys.stderr)
        return EXIT_USAGE
    except AnchorFlowError as error:
        print('anchorflow: error: {0}'.format(error), file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
