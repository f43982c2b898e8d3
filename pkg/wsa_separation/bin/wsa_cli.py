#!/usr/bin/env python
# coding: utf-8
import argparse
import json
import os
import logging
import sys

import torch

from wsa_separation import analysis, dsp, metrics
from wsa_separation.attention import WsaConfig, attention_flops
from wsa_separation.checkpoint import load_checkpoint, save_checkpoint
from wsa_separation.errors import (AudioIOError, CheckpointError, CheckpointTruncatedError,
                                   NonFiniteLossError)
from wsa_separation.model import ModelConfig, convert_to_wsa, init_toy_model, separate
from wsa_separation.storage import LocalStorage
from wsa_separation.training import (DEMO_TARGETS, check_gradients, distill_demo, distill_ratio,
                                     synthetic_pairs, tolerance)

LOGGER = logging.getLogger(__name__)

EXIT_FAILED_CHECK = 1
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NON_FINITE = 5

MIX_SUFFIX = '.mix.wav'
TARGET_SUFFIX = '.target.wav'


def even_window(value):
    window = int(value)
    if window < 0 or window % 2:
        raise argparse.ArgumentTypeError('window must be even and >= 0: %s' % value)
    return window


def window_list(value):
    try:
        return [even_window(w) for w in value.split(',') if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError('incorrect window list: %s' % value)


def _require(path):
    if not LocalStorage().exists(path):
        raise IOError('%s: no such file or directory' % path)
    return path


def _model_config(path):
    if path is None:
        return ModelConfig.toy()
    with open(_require(path)) as jsonf:
        return ModelConfig.from_dict(json.load(jsonf))


def _print_flops(report):
    print(report.describe())
    print('mode', report.mode)
    print('full_scores', report.seq_len * report.seq_len)
    print('scores', report.score_count)
    print('reduction %.1f' % report.reduction_vs_full)
    print('peak_scores', report.peak_scores)


def _eval_pairs(parser, eval_dir):
    storage = LocalStorage()
    _require(eval_dir)
    pairs = []
    for mix_path in storage.listdir(eval_dir, suffix=MIX_SUFFIX):
        target_path = mix_path[:-len(MIX_SUFFIX)] + TARGET_SUFFIX
        pairs.append((dsp.read_wav(mix_path), dsp.read_wav(_require(target_path))))
    if not pairs:
        parser.error('no *%s / *%s pairs in %s' % (MIX_SUFFIX, TARGET_SUFFIX, eval_dir))
    LOGGER.info('Found %d evaluation pair(s) in %s', len(pairs), eval_dir)
    return pairs


def cmd_separate(args):
    mix = dsp.read_wav(_require(args.input))
    model = load_checkpoint(_require(args.weights))
    if args.window is not None or args.sinks is not None:
        wsa = WsaConfig(window=10 if args.window is None else args.window,
                        sinks=8 if args.sinks is None else args.sinks)
        model = convert_to_wsa(model, wsa)
    with torch.no_grad():
        estimate, _ = separate(model, mix)
    dsp.write_wav(args.out, estimate)
    frames = model.config.stft.num_frames(mix.length)
    if model.config.attention_mode == 'wsa':
        _print_flops(attention_flops(frames, model.config.wsa))
    else:
        _print_flops(attention_flops(frames))


def cmd_sweep(parser, args):
    model = load_checkpoint(_require(args.weights))
    pairs = _eval_pairs(parser, args.eval_dir)
    rows = analysis.zero_shot_sweep(model, pairs, args.windows, seq_len=args.seq_len)
    analysis.export_sweep(rows, args.out)
    print(analysis.sweep_frame(rows).to_csv(index=False, float_format=analysis.FLOAT_FORMAT),
          end='')


def cmd_analyze(args):
    mix = dsp.read_wav(_require(args.input))
    model = load_checkpoint(_require(args.weights))
    records = analysis.capture_attention(model, mix)
    storage = LocalStorage(args.out_dir)
    for record in records:
        name = 'layer%d_%s' % (record.layer_index, record.axis)
        analysis.export_map(record.map, '%s.csv' % name, storage)
        if record.seq_len >= args.crop:
            analysis.export_map(analysis.diagonal_crop(record.map, args.crop),
                                '%s_crop%d.csv' % (name, args.crop), storage)
        else:
            LOGGER.warning('%s map (%d x %d) is smaller than the %d crop', name,
                           record.seq_len, record.seq_len, args.crop)
    stats = analysis.locality_table(records, analysis.LOCALITY_WINDOWS)
    analysis.export_locality(stats, 'locality.csv', storage)
    for s in stats:
        print(s.axis, s.window, '%.6g' % s.in_band_mass)


def cmd_flops(args):
    mode = args.mode or 'wsa'
    cfg = None if mode == 'full' else WsaConfig(window=args.window, sinks=args.sinks)
    _print_flops(attention_flops(args.seq, cfg, mode=mode))


def cmd_gradcheck(args):
    report = check_gradients(seed=args.seed, precision=args.precision, samples=args.samples)
    limit = tolerance(args.precision)
    passed = report.passed(limit) and report.checked > 0
    print('max_rel_error %.3e' % report.max_rel_error)
    print('checked %d skipped %d' % (report.checked, report.skipped))
    print('PASS' if passed else 'FAIL', '(tolerance %g)' % limit)
    return 0 if passed else EXIT_FAILED_CHECK


def cmd_distill_demo(args):
    config = _model_config(args.model_config)
    result = distill_demo(seed=args.seed, steps=args.steps, pretrain_steps=args.pretrain_steps,
                          lr=args.lr, window=args.window, sinks=args.sinks, seconds=args.seconds,
                          pool=args.pool, targets=args.targets, config=config)
    analysis.export_history(result.history, args.out)
    if args.save_student:
        save_checkpoint(result.student, args.save_student)
    mix, target = next(synthetic_pairs(args.seed + 2, sample_rate=config.stft.sample_rate,
                                       seconds=args.seconds))
    with torch.no_grad():
        teacher_estimate, _ = separate(result.teacher, mix)
        student_estimate, _ = separate(result.student, mix)
    print('distill_ratio %.4f' % distill_ratio(result.history))
    print('teacher_sdr_db %.2f' % metrics.sdr(teacher_estimate, target))
    print('student_sdr_db %.2f' % metrics.sdr(student_estimate, target))


def cmd_evaluate(parser, args):
    if args.est and args.ref:
        pairs = [(dsp.read_wav(_require(args.est)), dsp.read_wav(_require(args.ref)))]
    elif args.est_dir and args.ref_dir:
        storage = LocalStorage()
        pairs = []
        for est_path in storage.listdir(_require(args.est_dir), suffix='.wav'):
            ref_path = os.path.join(args.ref_dir, os.path.basename(est_path))
            pairs.append((dsp.read_wav(est_path), dsp.read_wav(_require(ref_path))))
        if not pairs:
            parser.error('no WAV file in %s' % args.est_dir)
    else:
        parser.error('evaluate needs --est/--ref or --est-dir/--ref-dir')
    report = metrics.evaluate_pairs(pairs)
    if args.out:
        analysis.export_metrics(report, args.out)
    for metric, value in report.items():
        print(metric, '%.6g' % value)


def cmd_init(args):
    model = init_toy_model(_model_config(args.model_config), args.seed)
    print(save_checkpoint(model, args.out))


def cmd_convert(args):
    model = convert_to_wsa(load_checkpoint(_require(args.weights)),
                           WsaConfig(window=args.window, sinks=args.sinks))
    print(save_checkpoint(model, args.out))


def build_parser():
    parser = argparse.ArgumentParser(prog='wsa-separation-cli')

    parser.add_argument('--info', '-v', action='store_true', help='info mode')
    parser.add_argument('--verbose', '-vv', action='store_true', help='verbose mode')

    subparsers = parser.add_subparsers(help='command help', dest='cmd')
    subparsers.required = True

    parser_sep = subparsers.add_parser('separate', help='separate a mixture WAV')
    parser_sep.add_argument('--input', required=True, help='mixture WAV')
    parser_sep.add_argument('--weights', required=True, help='checkpoint')
    parser_sep.add_argument('--out', required=True, help='separated WAV')
    parser_sep.add_argument('--window', type=even_window, default=None,
                            help='convert time attention to WSA with this window')
    parser_sep.add_argument('--sinks', type=int, default=None, help='number of sink tokens')

    parser_sweep = subparsers.add_parser('sweep', help='zero-shot window sweep')
    parser_sweep.add_argument('--weights', required=True, help='full-attention checkpoint')
    parser_sweep.add_argument('--eval-dir', required=True,
                              help='directory of NAME%s / NAME%s pairs' % (MIX_SUFFIX, TARGET_SUFFIX))
    parser_sweep.add_argument('--windows', type=window_list,
                              default=list(analysis.SWEEP_WINDOWS), help='comma-separated windows')
    parser_sweep.add_argument('--seq-len', type=int, default=None,
                              help='sequence length of the FLOPs column (default: first mixture)')
    parser_sweep.add_argument('--out', required=True, help='sweep CSV')

    parser_analyze = subparsers.add_parser('analyze', help='attention maps and locality')
    parser_analyze.add_argument('--weights', required=True, help='full-attention checkpoint')
    parser_analyze.add_argument('--input', required=True, help='mixture WAV')
    parser_analyze.add_argument('--out-dir', required=True, help='directory of CSV outputs')
    parser_analyze.add_argument('--crop', type=int, default=30, help='diagonal crop size')

    parser_flops = subparsers.add_parser('flops', help='attention score counts')
    parser_flops.add_argument('--seq', type=int, required=True, help='sequence length')
    parser_flops.add_argument('--window', type=even_window, default=10, help='window W')
    parser_flops.add_argument('--sinks', type=int, default=8, help='sinks S')
    parser_flops.add_argument('--mode', choices=['full', 'wsa', 'window-only'], default=None,
                              help='cost model (default wsa)')

    parser_grad = subparsers.add_parser('gradcheck', help='finite-difference gradient check')
    parser_grad.add_argument('--seed', type=int, default=0)
    parser_grad.add_argument('--precision', choices=['f32', 'f64'], default='f32')
    parser_grad.add_argument('--samples', type=int, default=50)

    parser_demo = subparsers.add_parser('distill-demo', help='toy distillation run')
    parser_demo.add_argument('--model-config', default=None, help='ModelConfig JSON')
    parser_demo.add_argument('--steps', type=int, default=500)
    parser_demo.add_argument('--pretrain-steps', type=int, default=1500,
                             help='reconstruction-only steps fitting the full-attention teacher')
    parser_demo.add_argument('--pool', type=int, default=4, help='number of synthetic clips')
    parser_demo.add_argument('--seed', type=int, default=0)
    parser_demo.add_argument('--lr', type=float, default=1e-3)
    parser_demo.add_argument('--window', type=even_window, default=10)
    parser_demo.add_argument('--sinks', type=int, default=8)
    parser_demo.add_argument('--seconds', type=float, default=0.5, help='clip duration')
    parser_demo.add_argument('--targets', choices=DEMO_TARGETS, default='reference',
                             help='reconstruction targets: synthetic sources or teacher estimates')
    parser_demo.add_argument('--save-student', default=None, help='student checkpoint')
    parser_demo.add_argument('--out', required=True, help='loss history CSV')

    parser_eval = subparsers.add_parser('evaluate', help='SDR, cSDR, Fullness, Bleedless')
    parser_eval.add_argument('--est', default=None, help='estimate WAV')
    parser_eval.add_argument('--ref', default=None, help='reference WAV')
    parser_eval.add_argument('--est-dir', default=None, help='directory of estimates')
    parser_eval.add_argument('--ref-dir', default=None, help='references with matching names')
    parser_eval.add_argument('--out', default=None, help='metric,value CSV')

    parser_init = subparsers.add_parser('init', help='write a randomly initialized checkpoint')
    parser_init.add_argument('--model-config', default=None, help='ModelConfig JSON')
    parser_init.add_argument('--seed', type=int, default=0)
    parser_init.add_argument('--out', required=True, help='checkpoint')

    parser_convert = subparsers.add_parser('convert', help='convert a checkpoint to WSA')
    parser_convert.add_argument('--weights', required=True, help='full-attention checkpoint')
    parser_convert.add_argument('--window', type=even_window, default=10)
    parser_convert.add_argument('--sinks', type=int, default=8)
    parser_convert.add_argument('--out', required=True, help='WSA checkpoint')

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.info:
        logging.basicConfig(level=logging.INFO)
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG)

    threads = int(os.getenv('WSA_THREADS', '0'))
    if threads > 0:
        torch.set_num_threads(threads)

    commands = {
        'separate': cmd_separate,
        'analyze': cmd_analyze,
        'flops': cmd_flops,
        'gradcheck': cmd_gradcheck,
        'distill-demo': cmd_distill_demo,
        'init': cmd_init,
        'convert': cmd_convert,
    }
    try:
        if args.cmd == 'sweep':
            code = cmd_sweep(parser, args)
        elif args.cmd == 'evaluate':
            code = cmd_evaluate(parser, args)
        else:
            code = commands[args.cmd](args)
    except NonFiniteLossError as e:
        print('error: %s' % e, file=sys.stderr)
        return EXIT_NON_FINITE
    except (CheckpointTruncatedError, AudioIOError, IOError) as e:
        print('error: %s' % e, file=sys.stderr)
        return EXIT_IO
    except (CheckpointError, ValueError) as e:
        print('error: %s' % e, file=sys.stderr)
        return EXIT_CONFIG
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
