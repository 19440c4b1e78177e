"""Run configuration: one JSON document, every field overridable by a flag.

Credentials never live in config files; endpoints read their API keys from
environment variables (TRIVIEW_LLM_API_KEY, TRIVIEW_JUDGE_API_KEY,
TRIVIEW_EMBED_API_KEY).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError, ParseError
from .fusion import (
    ALPHA_PRESETS,
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_K_FINAL,
    DEFAULT_K_VIEW,
    DEFAULT_LAMBDA,
    VIEW_FLAGS,
    FusionConfig,
)
from .gateway import HashEmbedder, HTTPChatProvider, HTTPEmbeddingProvider, ScriptedChatProvider
from .graph import DEFAULT_SCHEMA_LABELS

ENV_LLM_URL = "TRIVIEW_LLM_URL"
ENV_LLM_MODEL = "TRIVIEW_LLM_MODEL"
ENV_LLM_KEY = "TRIVIEW_LLM_API_KEY"
ENV_JUDGE_URL = "TRIVIEW_JUDGE_URL"
ENV_JUDGE_MODEL = "TRIVIEW_JUDGE_MODEL"
ENV_JUDGE_KEY = "TRIVIEW_JUDGE_API_KEY"
ENV_EMBED_URL = "TRIVIEW_EMBED_URL"
ENV_EMBED_MODEL = "TRIVIEW_EMBED_MODEL"
ENV_EMBED_KEY = "TRIVIEW_EMBED_API_KEY"


@dataclass(frozen=True)
class ProviderSpec:
    kind: str
    options: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "options": dict(self.options)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProviderSpec":
        if not isinstance(data, dict) or "kind" not in data:
            raise ConfigError(f"provider spec needs a 'kind': {data!r}")
        return cls(kind=data["kind"], options=dict(data.get("options", {})))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ProviderSpec) and self.kind == other.kind and self.options == other.options

    def __hash__(self) -> int:
        return hash((self.kind, json.dumps(self.options, sort_keys=True)))


@dataclass(frozen=True)
class RunConfig:
    dataset_name: str = ""
    benchmark_path: str | None = None
    benchmark_format: str | None = None
    corpus_path: str | None = None
    out_dir: str = "out"
    seed: int = 0
    alpha: tuple[float, float, float] | None = None
    beta: float = DEFAULT_BETA
    lambda_: float = DEFAULT_LAMBDA
    k_final: int = DEFAULT_K_FINAL
    k_view: int = DEFAULT_K_VIEW
    views: tuple[str, ...] = ("r", "a", "t")
    consensus: bool = True
    slot_binding: bool = True
    max_steps: int = 8
    max_in_flight: int = 4
    max_anchor_edges: int = 10
    schema_labels: tuple[str, ...] = tuple(DEFAULT_SCHEMA_LABELS)
    chat_provider: ProviderSpec = field(default_factory=lambda: ProviderSpec("http"))
    embed_provider: ProviderSpec = field(default_factory=lambda: ProviderSpec("hash"))
    judge_provider: ProviderSpec | None = None

    def __post_init__(self) -> None:
        unknown = set(self.views) - set(VIEW_FLAGS)
        if unknown:
            raise ConfigError(f"unknown view flags {sorted(unknown)}; valid: r, a, t")
        if not self.views:
            raise ConfigError("at least one view must be enabled")

    # -- derived values ------------------------------------------------------

    def resolved_alpha(self) -> tuple[float, float, float]:
        if self.alpha is not None:
            return self.alpha
        return ALPHA_PRESETS.get(self.dataset_name.strip().lower(), DEFAULT_ALPHA)

    def effective_lambda(self) -> float:
        """Consensus-off and lambda=0 canonicalize to the same value."""
        return self.lambda_ if self.consensus else 0.0

    def fusion_config(self) -> FusionConfig:
        try:
            return FusionConfig(
                alpha=self.resolved_alpha(),
                beta=self.beta,
                lambda_=self.effective_lambda(),
                k_final=self.k_final,
                k_view=self.k_view,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def view_names(self) -> tuple[str, ...]:
        return tuple(VIEW_FLAGS[flag] for flag in ("r", "a", "t") if flag in self.views)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        data = {
            "dataset_name": self.dataset_name,
            "benchmark_path": self.benchmark_path,
            "benchmark_format": self.benchmark_format,
            "corpus_path": self.corpus_path,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "alpha": list(self.alpha) if self.alpha is not None else None,
            "beta": self.beta,
            "lambda": self.lambda_,
            "k_final": self.k_final,
            "k_view": self.k_view,
            "views": list(self.views),
            "consensus": self.consensus,
            "slot_binding": self.slot_binding,
            "max_steps": self.max_steps,
            "max_in_flight": self.max_in_flight,
            "max_anchor_edges": self.max_anchor_edges,
            "schema_labels": list(self.schema_labels),
            "chat_provider": self.chat_provider.to_dict(),
            "embed_provider": self.embed_provider.to_dict(),
            "judge_provider": self.judge_provider.to_dict() if self.judge_provider else None,
        }
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {
            "dataset_name", "benchmark_path", "benchmark_format", "corpus_path", "out_dir",
            "seed", "alpha", "beta", "lambda", "k_final", "k_view", "views", "consensus",
            "slot_binding", "max_steps", "max_in_flight", "max_anchor_edges", "schema_labels",
            "chat_provider", "embed_provider", "judge_provider",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for key in ("dataset_name", "benchmark_path", "benchmark_format", "corpus_path", "out_dir"):
            if key in data:
                kwargs[key] = data[key]
        for key in ("seed", "k_final", "k_view", "max_steps", "max_in_flight", "max_anchor_edges"):
            if key in data:
                kwargs[key] = int(data[key])
        for key in ("beta",):
            if key in data:
                kwargs[key] = float(data[key])
        if "lambda" in data:
            kwargs["lambda_"] = float(data["lambda"])
        if "alpha" in data and data["alpha"] is not None:
            alpha = data["alpha"]
            if not (isinstance(alpha, list) and len(alpha) == 3):
                raise ConfigError(f"alpha must be a list of three weights, got {alpha!r}")
            kwargs["alpha"] = tuple(float(a) for a in alpha)
        if "views" in data:
            kwargs["views"] = tuple(data["views"])
        for key in ("consensus", "slot_binding"):
            if key in data:
                kwargs[key] = bool(data[key])
        if "schema_labels" in data:
            kwargs["schema_labels"] = tuple(str(s) for s in data["schema_labels"])
        if "chat_provider" in data:
            kwargs["chat_provider"] = ProviderSpec.from_dict(data["chat_provider"])
        if "embed_provider" in data:
            kwargs["embed_provider"] = ProviderSpec.from_dict(data["embed_provider"])
        if data.get("judge_provider"):
            kwargs["judge_provider"] = ProviderSpec.from_dict(data["judge_provider"])
        return cls(**kwargs)

    def effective_dict(self) -> dict[str, Any]:
        """Canonical resolved configuration, echoed into reports.

        Ablations that are equivalent produce identical dictionaries: the
        consensus flag is true iff the effective lambda is positive.
        """
        lam = self.effective_lambda()
        return {
            "dataset_name": self.dataset_name,
            "alpha": list(self.resolved_alpha()),
            "beta": self.beta,
            "lambda": lam,
            "consensus": lam > 0.0,
            "k_final": self.k_final,
            "k_view": self.k_view,
            "views": list(self.views),
            "slot_binding": self.slot_binding,
            "max_steps": self.max_steps,
            "max_anchor_edges": self.max_anchor_edges,
            "seed": self.seed,
        }


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def replace(config: RunConfig, **changes: Any) -> RunConfig:
    return dataclasses.replace(config, **changes)


def _required(options: dict[str, Any], key: str, env_var: str) -> str:
    value = options.get(key) or os.environ.get(env_var)
    if not value:
        raise ConfigError(f"provider needs {key!r} in options or ${env_var}")
    return str(value)


def make_chat_provider(spec: ProviderSpec, role: str = "llm"):
    if spec.kind == "scripted":
        if "script_path" in spec.options:
            return ScriptedChatProvider.from_file(spec.options["script_path"])
        if "entries" in spec.options:
            return ScriptedChatProvider(spec.options["entries"])
        raise ConfigError("scripted provider needs 'script_path' or 'entries'")
    if spec.kind == "http":
        env_url, env_model, env_key = {
            "llm": (ENV_LLM_URL, ENV_LLM_MODEL, ENV_LLM_KEY),
            "judge": (ENV_JUDGE_URL, ENV_JUDGE_MODEL, ENV_JUDGE_KEY),
        }[role]
        return HTTPChatProvider(
            endpoint=_required(spec.options, "endpoint", env_url),
            model=_required(spec.options, "model", env_model),
            api_key=os.environ.get(env_key),
            timeout=float(spec.options.get("timeout", 60.0)),
        )
    raise ConfigError(f"unknown chat provider kind: {spec.kind!r}")


def make_embedding_provider(spec: ProviderSpec):
    if spec.kind == "hash":
        return HashEmbedder(
            dimension=int(spec.options.get("dimension", 64)),
            seed=int(spec.options.get("seed", 0)),
        )
    if spec.kind == "http":
        return HTTPEmbeddingProvider(
            endpoint=_required(spec.options, "endpoint", ENV_EMBED_URL),
            model=_required(spec.options, "model", ENV_EMBED_MODEL),
            api_key=os.environ.get(ENV_EMBED_KEY),
            timeout=float(spec.options.get("timeout", 60.0)),
        )
    raise ConfigError(f"unknown embedding provider kind: {spec.kind!r}")
