"""Outcome-model backends: synthetic oracle, recorded replay, remote LLM."""

from __future__ import annotations

from typing import Any, Mapping

from ..errors import ConfigError
from .base import OutcomeModel
from .oracle import (
    AnalyteSpec,
    AnchoredOracleModel,
    InterventionEffect,
    LabelRule,
    OracleConfig,
    OracleModel,
    default_oracle_config,
    default_reference_ranges,
    latents_at,
    oracle_latent,
    oracle_predict,
)
from .remote import (
    RemoteConfig,
    RemoteModel,
    first_json_block,
    parse_model_reply,
    remote_predict,
    render_prompt,
)
from .replay import ReplayModel

__all__ = [
    "AnalyteSpec",
    "AnchoredOracleModel",
    "InterventionEffect",
    "LabelRule",
    "OracleConfig",
    "OracleModel",
    "OutcomeModel",
    "RemoteConfig",
    "RemoteModel",
    "ReplayModel",
    "build_backend",
    "build_registry",
    "default_oracle_config",
    "default_reference_ranges",
    "first_json_block",
    "latents_at",
    "oracle_latent",
    "oracle_predict",
    "parse_model_reply",
    "remote_predict",
    "render_prompt",
]


def _oracle_config_from_spec(spec: Mapping[str, Any]) -> OracleConfig:
    if "config" in spec:
        payload = dict(spec["config"])
        payload.setdefault("noise_sigma", spec.get("noise_sigma", 0.0))
        payload.setdefault("seed", spec.get("seed", 0))
        return OracleConfig.from_dict(payload)
    return default_oracle_config(
        noise_sigma=float(spec.get("noise_sigma", 0.0)),
        seed=int(spec.get("seed", 0)),
    )


def build_backend(spec: Mapping[str, Any], model_id: str = "") -> OutcomeModel:
    """Construct a backend from a config mapping with a 'type' discriminator."""
    kind = spec.get("type")
    if kind == "oracle":
        return OracleModel(_oracle_config_from_spec(spec), model_id or "oracle")
    if kind == "anchored":
        return AnchoredOracleModel(
            _oracle_config_from_spec(spec),
            intervention_response=float(spec.get("intervention_response", 0.35)),
            model_id=model_id or "anchored-oracle",
        )
    if kind == "replay":
        from ..corpus import read_corpus

        path = spec.get("corpus")
        if not path:
            raise ConfigError("replay backend needs a 'corpus' path")
        episodes = read_corpus(path)
        index = int(spec.get("index", 0))
        if not (0 <= index < len(episodes)):
            raise ConfigError(
                f"replay index {index} out of range for {len(episodes)} episodes"
            )
        return ReplayModel(episodes[index], model_id or "replay")
    if kind == "remote":
        fields = {k: v for k, v in spec.items() if k != "type"}
        return RemoteModel(RemoteConfig.from_dict(fields), model_id=model_id)
    raise ConfigError(f"unknown backend type {kind!r}")


def build_registry(specs: Mapping[str, Mapping[str, Any]]) -> dict[str, OutcomeModel]:
    """Build a name -> backend map; each model's id is its registry name."""
    return {name: build_backend(spec, model_id=name) for name, spec in specs.items()}
