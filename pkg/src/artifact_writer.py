import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from src.errors import DomainError

FLOAT_FORMAT = '%.17g'


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    if hasattr(value, 'value') and isinstance(getattr(value, 'value'), str):
        return value.value
    return value


class ArtifactWriter:
    """Writes tables and reports to a file or stdout.

    CSV: comma separated, one header line, 17 significant digits, LF.
    JSON: two-space indent, keys in insertion order, NaN written as null.
    """

    def __init__(self, output_path=None):
        self.logger = logging.getLogger('ArtifactWriter')
        self.output_path = None if output_path in (None, '-') else Path(output_path)

    def _emit(self, text):
        if self.output_path is None:
            sys.stdout.write(text)
            sys.stdout.flush()
            return '-'
        self.output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.output_path, 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(text)
        self.logger.info(f"Wrote {self.output_path}")
        return str(self.output_path)

    def csv_text(self, frame):
        return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n')

    def write_csv(self, frame):
        return self._emit(self.csv_text(frame))

    def json_text(self, payload):
        return json.dumps(_jsonable(payload), indent=2, allow_nan=False) + '\n'

    def write_json(self, payload):
        return self._emit(self.json_text(payload))

    @staticmethod
    def read_csv(path):
        try:
            return pd.read_csv(path, float_precision='round_trip')
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DomainError(f"Cannot parse {path}: {str(e)}", module='cli')
