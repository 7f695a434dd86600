import copy
import logging
import os
from pathlib import Path

import yaml

from src.errors import DomainError

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / 'config' / 'config.yaml'
THREADS_ENV = 'TRILINEAR_THREADS'


class ConfigLoader:
    def __init__(self, path=None):
        self.logger = logging.getLogger('ConfigLoader')
        self.path = Path(path) if path else DEFAULT_CONFIG_PATH
        with open(self.path, 'r', encoding='utf-8') as handle:
            self.config = yaml.safe_load(handle) or {}

    def section(self, name):
        """Copy of one module's defaults, empty if the section is absent"""
        return copy.deepcopy(self.config.get(name, {}))

    def get(self, key, default=None):
        return self.config.get(key, default)

    def load_run_config(self, path):
        """Read a flat `key: value` run file; keys mirror the CLI flags."""
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                values = yaml.safe_load(handle) or {}
        except (OSError, yaml.YAMLError) as e:
            raise DomainError(f"Cannot read run config {path}: {str(e)}", module='cli')

        if not isinstance(values, dict):
            raise DomainError(f"Run config {path} must be a mapping of key: value pairs", module='cli')
        nested = [key for key, value in values.items() if isinstance(value, (dict, list))]
        if nested:
            raise DomainError(f"Run config keys must be scalars: {', '.join(nested)}", module='cli')

        self.logger.debug(f"Loaded run config {path} with keys {sorted(values)}")
        return {str(key).replace('-', '_'): value for key, value in values.items()}


def thread_limit():
    """Worker cap from TRILINEAR_THREADS, else min(4, cpu count)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == '':
        return max(1, min(4, os.cpu_count() or 1))
    try:
        value = int(raw)
    except ValueError:
        raise DomainError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", module='cli')
    if value < 1:
        raise DomainError(f"{THREADS_ENV} must be a positive integer, got {raw!r}", module='cli')
    return value
