import csv
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass

from ..models import Demucs, load_model, save_model
from .autograd import Graph
from .data import SegmentBatches, plan_mixtures, synthesize_corpus, wav_read, wav_write
from .exceptions import DemucsWarning, InvalidArgument, NumericFailure, StorageError, UnsupportedFormat
from .loss import l_demucs
from .manifest import CorpusManifest
from .metrics import REPORT_COLUMNS, corpus_mean, evaluate_pairs
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class TrainSummary:
    variant: str
    steps: int
    first_total: float
    last_total: float
    checkpoint: str


def _format(value):
    return '' if value is None else repr(float(value))


class ControlUtil:
    @staticmethod
    def synth_data(exp):
        data = exp.data
        specs = plan_mixtures(
            int(data['count']), exp.seed, float(data['duration_s']), tuple(data['snr_db']),
            tuple(data['clean_kinds']), tuple(data['noise_kinds']))
        try:
            return synthesize_corpus(data['out_dir'], specs, os.path.basename(data['manifest']))
        except OSError as e:
            raise StorageError(f'cannot write corpus under {data["out_dir"]} ({e})') from None

    @staticmethod
    def try_save_checkpoint(model, optimizer, path, step):
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            save_model(model, path, step, optimizer)
        except OSError as e:
            log.error('checkpoint write to %s failed: %s', path, e)
            return False, f'Checkpoint write failed ({e})'
        return True, f'Checkpoint written at step {step}'

    @staticmethod
    def _open_log(exp, model, start_step):
        """Loss log positioned after ``start_step``; earlier records are kept verbatim."""
        os.makedirs(os.path.dirname(os.path.abspath(exp.log_path)), exist_ok=True)
        kept = []
        if start_step > 0 and os.path.exists(exp.log_path):
            with open(exp.log_path) as f:
                for line in f:
                    record = json.loads(line)
                    if 'step' not in record or record['step'] <= start_step:
                        kept.append(line)
        if not kept:
            kept = [json.dumps({'variant': model.variant, 'schema_version': 1, 'seed': exp.seed,
                                'parameters': model.parameter_count()}, sort_keys=True) + '\n']
        handle = open(exp.log_path, 'w')
        handle.writelines(kept)
        return handle

    @staticmethod
    def train(exp, resume=True, corpus=None):
        """Adam on l_demucs; checkpoints every ``checkpoint_every`` steps and at the end."""
        path = exp.checkpoint_path
        start_step = 0
        if resume and os.path.exists(path):
            model, manifest, optimizer_state = load_model(path, expect_cfg=exp.model)
            optimizer = Adam(model.named_parameters(), exp.optimizer.lr, exp.optimizer.betas, exp.optimizer.eps)
            optimizer.load_state_dict(optimizer_state)
            start_step = int(manifest.get('step', 0))
            log.info('resuming %s from step %d', path, start_step)
        else:
            model = Demucs(exp.model, seed=exp.seed)
            optimizer = Adam(model.named_parameters(), exp.optimizer.lr, exp.optimizer.betas, exp.optimizer.eps)
        model.train()

        totals = []
        handle = ControlUtil._open_log(exp, model, start_step)
        try:
            if start_step < exp.optimizer.steps:
                batches = corpus if corpus is not None else SegmentBatches.from_entries(
                    CorpusManifest.read(exp.data['manifest']), exp.optimizer.segment_s,
                    exp.optimizer.batch, exp.seed)
                stream = batches.iterate(start_step, exp.optimizer.prefetch)
                for step in range(start_step, exp.optimizer.steps):
                    noisy, clean = next(stream)
                    optimizer.zero_grad()
                    with Graph(name=f'step-{step + 1}') as graph:
                        report = l_demucs(model(noisy), clean, exp.loss)
                    if not math.isfinite(report.total):
                        raise NumericFailure(
                            f'loss is {report.total} at step {step + 1}; last good checkpoint kept at {path}')
                    graph.backward(output=report.loss)
                    optimizer.step()
                    totals.append(report.total)
                    handle.write(json.dumps(report.record(step + 1), sort_keys=True) + '\n')
                    handle.flush()
                    if (step + 1) % exp.checkpoint_every == 0:
                        ok, msg = ControlUtil.try_save_checkpoint(model, optimizer, path, step + 1)
                        if not ok:
                            warnings.warn(msg, DemucsWarning)
                stream.close()
        finally:
            handle.close()

        steps = max(exp.optimizer.steps, start_step)
        ok, msg = ControlUtil.try_save_checkpoint(model, optimizer, path, steps)
        if not ok:
            raise StorageError(msg)
        return TrainSummary(model.variant, steps, totals[0] if totals else float('nan'),
                            totals[-1] if totals else float('nan'), path)

    @staticmethod
    def enhance_file(checkpoint, in_path, out_path, emit_heads=False, expect_cfg=None):
        model, _, _ = load_model(checkpoint, expect_cfg)
        model.eval()
        average, heads = model.enhance(wav_read(in_path))
        wav_write(out_path, average)
        written = [out_path]
        if emit_heads:
            if not heads:
                raise InvalidArgument(f'--emit-heads needs an MRD checkpoint, {checkpoint} is {model.variant}')
            stem, ext = os.path.splitext(out_path)
            for label, buf in heads.items():
                head_path = f'{stem}_{label}{ext or ".wav"}'
                wav_write(head_path, buf)
                written.append(head_path)
        return written

    @staticmethod
    def read_pesq_sidecar(path):
        scores = {}
        with open(path, newline='') as f:
            reader = csv.DictReader(f)
            if not reader.fieldnames or set(reader.fieldnames) != {'filename', 'pesq'}:
                raise UnsupportedFormat(f'{path}: PESQ sidecar needs columns filename,pesq')
            for row in reader:
                scores[row['filename']] = float(row['pesq'])
        return scores

    @staticmethod
    def pair_files(ref_dir, deg_dir):
        refs = {n for n in os.listdir(ref_dir) if n.lower().endswith('.wav')}
        degs = {n for n in os.listdir(deg_dir) if n.lower().endswith('.wav')}
        return sorted(refs & degs), sorted(refs ^ degs)

    @staticmethod
    def evaluate_dirs(ref_dir, deg_dir, out, pesq_sidecar=None, composite=False, jobs=1, coeffs=None):
        """Writes the CSV report to ``out``; returns (ok, message)."""
        if composite and not pesq_sidecar:
            raise InvalidArgument('composite measures need a PESQ sidecar (--pesq-sidecar)')
        scores = ControlUtil.read_pesq_sidecar(pesq_sidecar) if pesq_sidecar else {}
        paired, unpaired = ControlUtil.pair_files(ref_dir, deg_dir)
        for name in unpaired:
            warnings.warn(f'unpaired file skipped: {name}', DemucsWarning)
        if composite:
            missing = [n for n in paired if n not in scores]
            if missing:
                raise InvalidArgument(f'PESQ sidecar has no score for {", ".join(missing[:5])}')
        pairs = [(wav_read(os.path.join(ref_dir, n)), wav_read(os.path.join(deg_dir, n)), scores.get(n))
                 for n in paired]
        reports = evaluate_pairs(pairs, coeffs, jobs)
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(REPORT_COLUMNS)
        for name, report in zip(paired, reports):
            row = report.row(os.path.join(ref_dir, name), os.path.join(deg_dir, name))
            writer.writerow(row[:2] + [_format(v) for v in row[2:]])
        if reports:
            mean = corpus_mean(reports).row('MEAN', '')
            writer.writerow(mean[:2] + [_format(v) for v in mean[2:]])
        if unpaired:
            return False, f'{len(unpaired)} unpaired files skipped: {", ".join(unpaired)}'
        return True, f'{len(reports)} pairs evaluated'
