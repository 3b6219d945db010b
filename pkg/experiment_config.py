"""Experiment config files: one JSON document per run, validated per command."""
import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Type

from pydantic import BaseModel, ConfigDict, Field, FilePath, field_validator, model_validator

from prob_core import FiniteDistribution
from sdht_engine import KeyedScheme

COMMANDS = ('evaluate-scheme', 'sweep-n', 'verify-psm', 'hellinger-sup', 'tradeoff-audit', 'reduce-channel')

U64_MAX = 2 ** 64 - 1


def _distributions(vectors: List[List[float]]) -> List[FiniteDistribution]:
    return [FiniteDistribution(v) for v in vectors]


class Bounds(BaseModel):
    """Declared acceptance bounds; a violated bound fails the run with exit code 3."""
    model_config = ConfigDict(extra='forbid')

    delta_max: Optional[float] = Field(default=None, ge=0)
    epsilon_max: Optional[float] = Field(default=None, ge=0)
    ratio_max: Optional[float] = Field(default=None, gt=0)


class Params(BaseModel):
    model_config = ConfigDict(extra='forbid')


class HypothesisParams(Params):
    H0: List[List[float]] = Field(min_length=1)
    H1: List[List[float]] = Field(min_length=1)
    channel: Optional[FilePath] = None
    trials: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode='after')
    def check_classes(self):
        dists = _distributions(self.H0 + self.H1)
        sizes = {d.size for d in dists}
        if len(sizes) != 1:
            raise ValueError(f"All distributions must share one alphabet, got sizes {sorted(sizes)}")
        return self

    def classes(self):
        return _distributions(self.H0), _distributions(self.H1)

    def check_construction(self):
        if self.channel is None and (len(self.H0) != 2 or len(self.H1) != 1):
            raise ValueError("Without a channel file the one-bit construction needs |H0| = 2 and |H1| = 1")


class EvaluateSchemeParams(HypothesisParams):
    n: Optional[int] = Field(default=None, ge=1)
    scheme: Optional[FilePath] = None

    @model_validator(mode='after')
    def check_source(self):
        if self.scheme is not None and self.channel is not None:
            raise ValueError("Give either a scheme file or a channel file, not both")
        if self.scheme is None:
            if self.n is None:
                raise ValueError("n is required unless a scheme file is given")
            self.check_construction()
        return self


class SweepNParams(HypothesisParams):
    n_values: List[int] = Field(min_length=1)

    @field_validator('n_values')
    @classmethod
    def check_n_values(cls, values):
        if any(n < 1 for n in values):
            raise ValueError("Every n must be >= 1")
        if len(set(values)) != len(values):
            raise ValueError("n values must be distinct")
        return values

    @model_validator(mode='after')
    def check_source(self):
        self.check_construction()
        return self


class VerifyPsmParams(Params):
    protocol: Literal['fkn', 'barrington', 'counter']
    function: Optional[Literal['majority', 'parity', 'and', 'or', 'constant0', 'constant1']] = None
    truth_table: Optional[list] = None
    clients: int = Field(default=2, ge=1)
    alphabet_size: int = Field(default=2, ge=1)
    modulus: Optional[int] = Field(default=None, ge=2)
    residues: Optional[List[int]] = None
    defect: Optional[str] = None
    verification: Literal['auto', 'exhaustive', 'sampled'] = 'auto'
    trials: int = Field(default=10000, ge=2)
    H0: Optional[List[List[float]]] = None
    H1: Optional[List[List[float]]] = None

    @model_validator(mode='after')
    def check_protocol(self):
        if self.protocol == 'counter':
            if self.modulus is None or not self.residues:
                raise ValueError("The counter protocol needs modulus and residues")
            if self.alphabet_size != 2:
                raise ValueError("The counter protocol reads one bit per client")
        elif (self.function is None) == (self.truth_table is None):
            raise ValueError("Give exactly one of function or truth_table")
        if self.protocol == 'fkn' and self.clients != 2:
            raise ValueError("The fkn protocol has exactly two clients")
        if (self.H0 is None) != (self.H1 is None):
            raise ValueError("H0 and H1 must be given together")
        if self.H0 is not None:
            if not self.H0 or not self.H1:
                raise ValueError("Hypothesis classes must be non-empty")
            for d in _distributions(self.H0 + self.H1):
                if d.size != self.alphabet_size:
                    raise ValueError(f"Distribution has {d.size} symbols, alphabet_size is {self.alphabet_size}")
        return self

    def classes(self):
        return _distributions(self.H0), _distributions(self.H1)


class HellingerSupParams(Params):
    thetas: List[float] = Field(min_length=1)
    grid_resolution: int = Field(default=1000, ge=100)

    @field_validator('thetas')
    @classmethod
    def check_thetas(cls, values):
        if any(not 0.0 < t < 1.0 for t in values):
            raise ValueError("Every theta must lie in (0, 1)")
        return values


class ChannelSource(Params):
    channels: List[FilePath] = Field(default_factory=list)
    random_count: int = Field(default=0, ge=0)
    random_outputs: List[int] = Field(default_factory=lambda: [2])

    @field_validator('random_outputs')
    @classmethod
    def check_outputs(cls, values):
        if not values or any(m < 2 for m in values):
            raise ValueError("random_outputs must list output sizes >= 2")
        return values

    @model_validator(mode='after')
    def check_some_channel(self):
        if not self.channels and self.random_count == 0:
            raise ValueError("Give channel files or a positive random_count")
        return self


class TradeoffAuditParams(ChannelSource):
    theta: float = Field(gt=0.0, lt=1.0)
    n_values: List[int] = Field(min_length=1)
    grid_resolution: int = Field(default=1000, ge=100)

    @field_validator('n_values')
    @classmethod
    def check_n_values(cls, values):
        if any(n < 1 for n in values):
            raise ValueError("Every n must be >= 1")
        return values


class ReduceChannelParams(ChannelSource):
    theta: float = Field(gt=0.0, lt=1.0)
    random_outputs: List[int] = Field(default_factory=lambda: [3, 4])


PARAMS_BY_COMMAND: Dict[str, Type[Params]] = {
    'evaluate-scheme': EvaluateSchemeParams,
    'sweep-n': SweepNParams,
    'verify-psm': VerifyPsmParams,
    'hellinger-sup': HellingerSupParams,
    'tradeoff-audit': TradeoffAuditParams,
    'reduce-channel': ReduceChannelParams,
}


class ExperimentConfig(BaseModel):
    """Top-level config. `parameters` is validated against the command's model."""
    model_config = ConfigDict(extra='forbid')

    command: Literal['evaluate-scheme', 'sweep-n', 'verify-psm', 'hellinger-sup', 'tradeoff-audit',
                     'reduce-channel']
    parameters: dict = Field(default_factory=dict)
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    mode: Literal['exact', 'mc'] = 'exact'
    output: Optional[Path] = None
    bounds: Bounds = Field(default_factory=Bounds)

    @model_validator(mode='after')
    def check_parameters(self):
        # ValidationError from the nested model propagates as a validation failure of this config
        PARAMS_BY_COMMAND[self.command].model_validate(self.parameters)
        return self

    @property
    def params(self) -> Params:
        return PARAMS_BY_COMMAND[self.command].model_validate(self.parameters)


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON config. Relative file paths inside it resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file {path} not found")
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError("Config must be a JSON object")
    params = data.get('parameters')
    if isinstance(params, dict):
        data['parameters'] = _resolve_paths(params, path.parent)
    return ExperimentConfig.model_validate(data)


def _resolve_paths(params: dict, base: Path) -> dict:
    resolved = dict(params)
    for key in ('channel', 'scheme'):
        if isinstance(resolved.get(key), str) and not Path(resolved[key]).is_absolute():
            resolved[key] = str(base / resolved[key])
    if isinstance(resolved.get('channels'), list):
        resolved['channels'] = [
            str(base / p) if isinstance(p, str) and not Path(p).is_absolute() else p
            for p in resolved['channels']
        ]
    return resolved


class DetectorDocument(BaseModel):
    name: str
    n: int = Field(ge=1)
    alphabet_size: int = Field(ge=1)
    params: dict = Field(default_factory=dict)


class SchemeDocument(BaseModel):
    """Shape of a scheme file written by `KeyedScheme.to_json`."""
    model_config = ConfigDict(extra='ignore')

    n: int = Field(ge=1)
    key_count: int = Field(ge=1)
    channels: List[dict] = Field(min_length=1)
    detector: DetectorDocument
    client_channels: Optional[List[List[dict]]] = None


def load_scheme(path) -> KeyedScheme:
    """Read a scheme file, validating its structure before building the scheme."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Scheme file {path} not found")
    with open(path, 'r', encoding='utf-8') as f:
        document = SchemeDocument.model_validate(json.load(f))
    return KeyedScheme.from_json(document.model_dump())
