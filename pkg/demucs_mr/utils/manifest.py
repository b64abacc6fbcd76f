import csv
import os
from dataclasses import dataclass

from .exceptions import InvalidArgument, UnsupportedFormat

MANIFEST_COLUMNS = ('clean', 'noisy', 'snr_db', 'seed', 'clean_kind', 'noise_kind', 'duration_s')


@dataclass(frozen=True)
class CorpusEntry:
    clean: str
    noisy: str
    snr_db: float
    seed: int
    clean_kind: str
    noise_kind: str
    duration_s: float


class CorpusManifest:
    """CSV listing of (clean, noisy) pairs; paths are stored relative to the manifest."""

    @staticmethod
    def write(path, entries):
        base = os.path.dirname(os.path.abspath(path))
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(MANIFEST_COLUMNS)
            for e in entries:
                writer.writerow([
                    os.path.relpath(e.clean, base).replace(os.sep, '/'),
                    os.path.relpath(e.noisy, base).replace(os.sep, '/'),
                    repr(float(e.snr_db)), e.seed, e.clean_kind, e.noise_kind, repr(float(e.duration_s)),
                ])

    @staticmethod
    def read(path):
        """Entries with absolute paths."""
        if not os.path.exists(path):
            raise InvalidArgument(f'corpus manifest {path} does not exist')
        base = os.path.dirname(os.path.abspath(path))
        with open(path, newline='') as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
                raise UnsupportedFormat(f'{path}: expected columns {",".join(MANIFEST_COLUMNS)}')
            entries = []
            for row in reader:
                entries.append(CorpusEntry(
                    clean=os.path.join(base, row['clean']),
                    noisy=os.path.join(base, row['noisy']),
                    snr_db=float(row['snr_db']),
                    seed=int(row['seed']),
                    clean_kind=row['clean_kind'],
                    noise_kind=row['noise_kind'],
                    duration_s=float(row['duration_s']),
                ))
        if not entries:
            raise InvalidArgument(f'corpus manifest {path} lists no files')
        return entries

    @staticmethod
    def get_missing_files(entries):
        return [p for e in entries for p in (e.clean, e.noisy) if not os.path.exists(p)]
