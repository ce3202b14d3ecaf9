"""Pipeline configuration.

One YAML file describes a whole review run: the brief, the export files to
ingest, model assignments per phase, the chat provider, and enrichment
providers. The file is only ever read, never rewritten, so reviewer comments
in it survive every command.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .enrich import ProviderSpec
from .gateway import ModelRef
from .promptforge import ReviewBrief

SOURCE_FORMATS = ("ris", "bib", "csv")
PROVIDER_TYPES = ("scripted", "cassette", "http")

# every phase that talks to a model must have its roles assigned up front
REQUIRED_MODELS = (
    ("prompt_generation", "assistant"),
    ("prompt_generation", "evaluator"),
    ("quality_control", "assistant"),
    ("screening", "assistant"),
    ("screening", "evaluator"),
    ("relevance", "assistant"),
    ("relevance", "evaluator"),
)

DEFAULT_SEED = 17
DEFAULT_CONCURRENCY = 4


class ConfigError(ValueError):
    """Bad or incomplete pipeline configuration."""


@dataclass(frozen=True)
class SourceSpec:
    name: str
    format: str
    path: Path

    def __post_init__(self):
        if self.format not in SOURCE_FORMATS:
            raise ConfigError(f"source {self.name!r}: unknown format {self.format!r}")


@dataclass(frozen=True)
class PipelineConfig:
    config_path: Path
    base_dir: Path
    brief: ReviewBrief
    sources: tuple
    provider: dict
    models: dict
    checkpoint_dir: Path
    enrichment: tuple = ()
    enrichment_scripts: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    concurrency: int = DEFAULT_CONCURRENCY
    allow_same_models: bool = False

    def model_for(self, phase: str, role: str) -> ModelRef:
        try:
            return self.models[phase][role]
        except KeyError:
            raise ConfigError(f"no model assigned for {phase}/{role}")


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return mapping[key]


def _resolve(base: Path, value: str, where: str, must_exist: bool = True) -> Path:
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if must_exist and not path.exists():
        raise ConfigError(f"{where}: file not found: {path}")
    return path


def _load_brief(raw, base: Path) -> ReviewBrief:
    if isinstance(raw, str):
        path = _resolve(base, raw, "brief")
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("brief: expected a mapping or a path to one")
    try:
        return ReviewBrief.from_dict(raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"brief: {exc}")


def _load_models(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("models: expected a mapping of phase to role assignments")
    models: dict = {}
    for phase, roles in raw.items():
        if not isinstance(roles, dict):
            raise ConfigError(f"models.{phase}: expected role mappings")
        models[phase] = {}
        for role, spec in roles.items():
            where = f"models.{phase}.{role}"
            if not isinstance(spec, dict):
                raise ConfigError(f"{where}: expected endpoint/model mapping")
            kwargs = {
                "endpoint": _require(spec, "endpoint", where),
                "model": _require(spec, "model", where),
            }
            if "temperature" in spec:
                kwargs["temperature"] = float(spec["temperature"])
            if "seed" in spec:
                kwargs["seed"] = int(spec["seed"])
            models[phase][role] = ModelRef(**kwargs)
    missing = [f"{p}.{r}" for p, r in REQUIRED_MODELS if r not in models.get(p, {})]
    if missing:
        raise ConfigError("models: missing assignments: " + ", ".join(missing))
    return models


def _load_provider(raw: dict, base: Path) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("provider: expected a mapping")
    kind = _require(raw, "type", "provider")
    if kind not in PROVIDER_TYPES:
        raise ConfigError(f"provider: unknown type {kind!r}")
    provider = dict(raw)
    if kind == "scripted":
        provider["script"] = str(_resolve(base, _require(raw, "script", "provider"), "provider.script"))
        if "call_log" in raw:
            provider["call_log"] = str(_resolve(base, raw["call_log"], "provider.call_log", must_exist=False))
    elif kind == "cassette":
        provider["path"] = str(_resolve(base, _require(raw, "path", "provider"), "provider.path"))
    else:
        _require(raw, "url", "provider")
    return provider


def _load_enrichment(raw, base: Path):
    if raw is None:
        return (), {}
    entries = raw.get("providers", []) if isinstance(raw, dict) else raw
    specs = []
    scripts: dict = {}
    for entry in entries:
        where = f"enrichment provider {entry.get('id', '?')!r}"
        kwargs = {
            "id": _require(entry, "id", where),
            "kind": _require(entry, "kind", where),
            "endpoint": entry.get("endpoint", ""),
        }
        if "rate_limit" in entry:
            kwargs["rate_limit"] = float(entry["rate_limit"])
        if "auth_env" in entry:
            kwargs["auth_env"] = entry["auth_env"]
        try:
            spec = ProviderSpec(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}")
        specs.append(spec)
        if spec.kind == "scripted":
            scripts[spec.id] = _resolve(base, _require(entry, "script", where), f"{where} script")
    return tuple(specs), scripts


def load_config(
    path,
    *,
    checkpoint_dir: Optional[str] = None,
    seed: Optional[int] = None,
    concurrency: Optional[int] = None,
    provider_cassette: Optional[str] = None,
    allow_same_models: Optional[bool] = None,
) -> PipelineConfig:
    """Parse and validate a config file; keyword overrides win over file values.

    Credentials never live in the file: provider specs name environment
    variables and the values come from the process environment.
    """
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    base = config_path.resolve().parent
    with open(config_path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{config_path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{config_path}: top level must be a mapping")

    sources = []
    for entry in _require(raw, "sources", str(config_path)):
        where = f"source {entry.get('name', '?')!r}"
        sources.append(
            SourceSpec(
                name=_require(entry, "name", where),
                format=_require(entry, "format", where),
                path=_resolve(base, _require(entry, "path", where), where),
            )
        )
    if not sources:
        raise ConfigError("sources: at least one export file is required")

    if provider_cassette is not None:
        provider = {"type": "cassette", "path": str(_resolve(base, provider_cassette, "provider.path"))}
    else:
        provider = _load_provider(_require(raw, "provider", str(config_path)), base)

    enrichment, enrichment_scripts = _load_enrichment(raw.get("enrichment"), base)

    ckpt = checkpoint_dir if checkpoint_dir is not None else raw.get("checkpoint_dir", "checkpoint")
    effective_seed = seed if seed is not None else int(raw.get("seed", DEFAULT_SEED))
    effective_conc = concurrency if concurrency is not None else int(raw.get("concurrency", DEFAULT_CONCURRENCY))
    if effective_conc < 1:
        raise ConfigError("concurrency must be >= 1")
    waiver = allow_same_models if allow_same_models is not None else bool(raw.get("allow_same_models", False))

    return PipelineConfig(
        config_path=config_path,
        base_dir=base,
        brief=_load_brief(_require(raw, "brief", str(config_path)), base),
        sources=tuple(sources),
        provider=provider,
        models=_load_models(_require(raw, "models", str(config_path))),
        checkpoint_dir=_resolve(base, str(ckpt), "checkpoint_dir", must_exist=False),
        enrichment=enrichment,
        enrichment_scripts=enrichment_scripts,
        seed=effective_seed,
        concurrency=effective_conc,
        allow_same_models=waiver,
    )


def credential_for(spec: ProviderSpec, env=None) -> Optional[str]:
    env = env if env is not None else os.environ
    return env.get(spec.auth_env) if spec.auth_env else None
