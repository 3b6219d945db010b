"""Configuration management for sdht-lab using environment variables and an optional .env file."""
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

_TRUE_VALUES = {'1', 'true', 'yes', 'on'}


class Config:
    """Lab configuration read from the environment (populated from .env when present)."""

    # Exact enumeration refuses beyond this many histograms / (input, key) pairs
    ENUMERATION_BUDGET = 10 ** 7

    # Monte Carlo trials are processed in fixed-size blocks, one RNG stream per block
    MC_BLOCK_SIZE = 4096

    # Family-wise significance for sampled PSM privacy tests
    PSM_SIGNIFICANCE = 0.01

    # Default values
    _defaults = {
        'SDHT_LAB_THREADS': '1',
        'SDHT_LAB_OUTPUT_DIR': './output',
        'SDHT_LAB_DATABASE_URL': 'sqlite:///sdht_lab_runs.db',
        'SDHT_LAB_RECORD_RUNS': 'true',
        'SDHT_LAB_LOG_LEVEL': 'WARNING',
        'SDHT_LAB_MC_TRIALS': '100000',
    }

    @classmethod
    def _get_value(cls, name, default=None):
        """Get a value from the environment."""
        value = os.environ.get(name)
        if value is None or value == '':
            return default
        return value

    @property
    def THREADS(self) -> int:
        return int(self._get_value('SDHT_LAB_THREADS', self._defaults['SDHT_LAB_THREADS']))

    @property
    def OUTPUT_DIR(self) -> Path:
        return Path(self._get_value('SDHT_LAB_OUTPUT_DIR', self._defaults['SDHT_LAB_OUTPUT_DIR']))

    @property
    def DATABASE_URL(self) -> str:
        return self._get_value('SDHT_LAB_DATABASE_URL', self._defaults['SDHT_LAB_DATABASE_URL'])

    @property
    def RECORD_RUNS(self) -> bool:
        raw = self._get_value('SDHT_LAB_RECORD_RUNS', self._defaults['SDHT_LAB_RECORD_RUNS'])
        return str(raw).strip().lower() in _TRUE_VALUES

    @property
    def LOG_LEVEL(self) -> str:
        return str(self._get_value('SDHT_LAB_LOG_LEVEL', self._defaults['SDHT_LAB_LOG_LEVEL'])).upper()

    @property
    def MC_TRIALS(self) -> int:
        return int(self._get_value('SDHT_LAB_MC_TRIALS', self._defaults['SDHT_LAB_MC_TRIALS']))

    @classmethod
    def validate(cls):
        """Validate that numeric settings are usable."""
        instance = cls()
        problems = []
        try:
            if instance.THREADS < 1:
                problems.append('SDHT_LAB_THREADS must be >= 1')
        except ValueError:
            problems.append('SDHT_LAB_THREADS must be an integer')
        try:
            if instance.MC_TRIALS < 1:
                problems.append('SDHT_LAB_MC_TRIALS must be >= 1')
        except ValueError:
            problems.append('SDHT_LAB_MC_TRIALS must be an integer')

        if problems:
            raise ValueError(f"Invalid configuration: {', '.join(problems)}")
        return True


# Create singleton instance
Config = Config()
