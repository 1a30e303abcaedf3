"""Resolved run configuration.

Values come from, in increasing precedence: built-in defaults, a key-value
config file (``key = value`` per line, ``#`` comments), environment
variables named ``HCTREE_<KEY>`` and command-line flags.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from hctree.embed import EmbedderConfig
from hctree.ingest import DEFAULT_SEPARATORS, ChunkConfig
from hctree.querytransform import TransformConfig, load_template
from hctree.search import SearchOptions

ENV_PREFIX = "HCTREE_"


def _default_cache_dir() -> str:
    base = os.environ.get("XDG_CACHE_HOME") or str(Path.home() / ".cache")
    return str(Path(base) / "hctree")


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _separators(v) -> tuple[str, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(v)
    # comma-separated, with \n escapes; an empty item means per-character
    return tuple(item.encode("utf-8").decode("unicode_escape") if "\\" in item else item
                 for item in str(v).split(","))


@dataclass
class CliConfig:
    chunk_size: int = 200
    chunk_overlap: int = 40
    separators: tuple = DEFAULT_SEPARATORS
    embed_provider: str = "deterministic_test"
    embed_model: str = "hash-embed-v1"
    embed_endpoint: str = ""
    embed_dim: int = 64
    embed_batch_size: int = 32
    embed_seed: int = 0
    embed_api_key_env: str = ""
    embed_max_in_flight: int = 4
    document_prefix: str = ""
    query_prefix: str = ""
    cache_dir: str = ""
    no_cache: bool = False
    representative: str = "leaf_mean"
    mips_m: int = 0
    exclude_root: bool = False
    qe_endpoint: str = ""
    qe_model: str = ""
    qe_api_key_env: str = ""
    qe_template: str = "query-extraction"
    qe_timeout: float = 60.0
    qe_fallback_identity: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["separators"] = list(self.separators)
        return d

    def chunk_config(self) -> ChunkConfig:
        return ChunkConfig(self.chunk_size, self.chunk_overlap, self.separators)

    def embedder_config(self) -> EmbedderConfig:
        return EmbedderConfig(provider=self.embed_provider, model_id=self.embed_model,
                              endpoint_url=self.embed_endpoint, dim=self.embed_dim,
                              batch_size=self.embed_batch_size, document_prefix=self.document_prefix,
                              query_prefix=self.query_prefix, api_key_env=self.embed_api_key_env,
                              seed=self.embed_seed, max_in_flight=self.embed_max_in_flight)

    def search_options(self) -> SearchOptions:
        return SearchOptions(mips_refine=self.mips_m or None, exclude_root=self.exclude_root)

    def transform_config(self, mode: str) -> TransformConfig:
        template = load_template(self.qe_template) if mode == "llm_extract" else None
        return TransformConfig(mode=mode, template=template, endpoint_url=self.qe_endpoint,
                               model=self.qe_model, api_key_env=self.qe_api_key_env,
                               timeout=self.qe_timeout)

    def resolved_cache_dir(self) -> str | None:
        if self.no_cache:
            return None
        return self.cache_dir or _default_cache_dir()


_TYPES = {f.name: f.type for f in fields(CliConfig)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        return _bool(value)
    if kind == "tuple":
        return _separators(value)
    return str(value)


def read_config_file(path: str | Path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve(flags: dict, config_path: str | None = None, environ=None) -> CliConfig:
    """Merge defaults < config file < environment < flags (``None`` = unset)."""
    environ = os.environ if environ is None else environ
    merged: dict = {}
    config_path = config_path or environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        merged.update(read_config_file(config_path))
    for key in _TYPES:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            merged[key] = environ[env_key]
    for key, value in flags.items():
        if key in _TYPES and value is not None:
            merged[key] = value
    return CliConfig(**{k: _coerce(k, v) for k, v in merged.items()})
