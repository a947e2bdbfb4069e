"""Latent-geometry diagnostics: probes, campaigns and statistics."""

import json
from pathlib import Path

from . import _core
from ._core import (
    ConfigError,
    ConnectionError,
    ContractError,
    DimensionError,
    DisconnectError,
    Error,
    EvaluationError,
    Generator,
    MalformedFrameError,
    PairingError,
    RemoteError,
    TimeoutError,
    TransportError,
    UndefinedError,
    VersionMismatchError,
    auroc,
    builtin_kinds,
    laplacian,
    latent_from_seed,
    monte_carlo_ratio,
    phfe,
    quantile,
    spearman,
    topk_share,
    trajectory_metrics,
)

__version__ = _core.__version__


def _text(config):
    if config is None:
        return _core.default_config()
    if isinstance(config, (str, Path)) and Path(config).is_file():
        return Path(config).read_text()
    if isinstance(config, str):
        return config
    return json.dumps(config)


def default_config():
    return json.loads(_core.default_config())


def load_config(config):
    """Parses, validates and fills defaults. Accepts a dict, JSON text or a path."""
    return json.loads(_core.normalize_config(_text(config)))


def config_hash(config=None):
    return _core.config_hash(_text(config))


def builtin(kind, params=None, seed=0):
    return _core.builtin(kind, json.dumps(params or {}), seed)


def connect(endpoint, timeout=30.0, pool_size=1):
    return _core.connect(endpoint, timeout, pool_size)


def probe(generator, z, config=None, basis_seed=0, neighbor_seed=0):
    """Geometric record for one latent point, as a dict."""
    return json.loads(_core.probe(generator, z, _text(config), basis_seed, neighbor_seed))


def _records(records, config):
    if records is not None:
        return str(records)
    return str(Path(load_config(config)["execution"]["output_dir"]) / "records.jsonl")


def diagnose(config=None):
    return _core.diagnose(_text(config))


def correlate(records=None, config=None, pairs=None):
    return _core.correlate(_records(records, config), _text(config), pairs)


def ood(records=None, config=None, positive=""):
    return _core.ood(_records(records, config), _text(config), positive)


def trajectory(config=None):
    return _core.trajectory(_text(config))


def heatmap(seed, condition, prefix, config=None):
    return _core.heatmap(_text(config), seed, condition, str(prefix))


def hf_transfer(records=None, config=None):
    return _core.hf_transfer(_records(records, config), _text(config))


def read_records(path):
    """Geometric records and error lines from a records.jsonl file."""
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
