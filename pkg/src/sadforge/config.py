"""Run configuration: one JSON file, env-var overrides for secrets only.

The file holds everything reproducibility needs (seed, agent settings,
provider choice, stage knobs) so it can live in version control; API keys
come exclusively from the environment.
"""

from __future__ import annotations

import dataclasses
import json
import os
from pathlib import Path
from typing import Optional

from .cassette import MockProvider
from .gateway import (
    AgentConfig,
    EndpointProfile,
    Gateway,
    HttpProvider,
    LocalHashEmbedder,
    RateLimiter,
    RetryPolicy,
)
from .prompts import ROLES, default_agent_configs

ENV_API_KEY = "SADFORGE_API_KEY"
ENV_BASE_URL = "SADFORGE_BASE_URL"

REVIEW_MODES = ("auto", "cli", "web")
PROVIDER_KINDS = ("http", "cassette")


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class PipelineConfig:
    workspace: Path
    seed: int = 0
    parallelism: int = 4
    review_mode: str = "auto"
    reviewer_enabled: bool = False
    split_ratio: float = 0.8
    select_k: int = 5
    max_rounds: int = 10
    json_retry_budget: int = 2
    provider_kind: str = "http"
    cassette_path: Optional[Path] = None
    base_url: Optional[str] = None
    api_key: Optional[str] = None
    timeout_s: float = 60.0
    penalty_offset: float = -1.0
    requests_per_second: Optional[float] = None
    review_token: Optional[str] = None
    ui_dir: Optional[Path] = None
    objects_path: Optional[Path] = None
    relations_path: Optional[Path] = None
    agent_overrides: dict = dataclasses.field(default_factory=dict)
    training_overrides: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.review_mode not in REVIEW_MODES:
            raise ConfigError(f"review mode must be one of {REVIEW_MODES}, got {self.review_mode!r}")
        if self.provider_kind not in PROVIDER_KINDS:
            raise ConfigError(f"provider kind must be one of {PROVIDER_KINDS}, got {self.provider_kind!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split ratio must be strictly between 0 and 1")
        if self.select_k < 1:
            raise ConfigError("select_k must be >= 1")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.provider_kind == "cassette" and self.cassette_path is None:
            raise ConfigError("cassette provider requires a cassette path")

    def agents(self) -> dict:
        """Role to AgentConfig map: published defaults plus per-role overrides."""
        configs = default_agent_configs()
        for role, override in self.agent_overrides.items():
            if role not in configs:
                raise ConfigError(f"unknown agent role {role!r}; known roles: {sorted(ROLES)}")
            if not isinstance(override, dict):
                raise ConfigError(f"agent override for {role!r} must be an object")
            allowed = {"model", "temperature", "repetition_penalty", "max_tokens"}
            unknown = set(override) - allowed
            if unknown:
                raise ConfigError(f"agent override for {role!r} has unknown fields {sorted(unknown)}")
            base = configs[role]
            try:
                configs[role] = AgentConfig(
                    role_name=base.role_name,
                    model=override.get("model", base.model),
                    temperature=override.get("temperature", base.temperature),
                    repetition_penalty=override.get("repetition_penalty", base.repetition_penalty),
                    max_tokens=override.get("max_tokens", base.max_tokens),
                    system_prompt=base.system_prompt,
                )
            except ValueError as exc:
                raise ConfigError(f"agent override for {role!r} invalid: {exc}") from exc
        return configs

    def build_gateway(self, log_path: Optional[Path] = None) -> Gateway:
        if self.provider_kind == "cassette":
            chat_provider = MockProvider.from_file(self.cassette_path)
        else:
            profile = EndpointProfile(
                name="default",
                base_url=self.base_url or "",
                api_key=self.api_key,
                timeout_s=self.timeout_s,
                penalty_offset=self.penalty_offset,
            )
            if not profile.base_url:
                raise ConfigError(f"http provider requires a base_url (config or ${ENV_BASE_URL})")
            chat_provider = HttpProvider(profile)
        limiter = RateLimiter(max_concurrency=self.parallelism, requests_per_second=self.requests_per_second)
        return Gateway(
            chat_provider=chat_provider,
            embed_provider=LocalHashEmbedder(),
            retry=RetryPolicy(),
            limiter=limiter,
            penalty_offset=self.penalty_offset,
            transcript_path=log_path,
        )


def _expect(doc: dict, key: str, kind, default):
    value = doc.get(key, default)
    if value is not None and not isinstance(value, kind):
        raise ConfigError(f"config field {key!r} has wrong type {type(value).__name__}")
    return value


def load_config(
    path,
    workspace: Optional[Path] = None,
    seed: Optional[int] = None,
    review_mode: Optional[str] = None,
    parallelism: Optional[int] = None,
    reviewer: Optional[bool] = None,
    env: Optional[dict] = None,
) -> PipelineConfig:
    """Read the JSON config; CLI flags and env vars override file values."""
    env = os.environ if env is None else env
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")

    provider = _expect(doc, "provider", dict, {}) or {}
    review = _expect(doc, "review", dict, {}) or {}
    sources = _expect(doc, "sources", dict, {}) or {}
    dialogue = _expect(doc, "dialogue", dict, {}) or {}
    scenarios = _expect(doc, "scenarios", dict, {}) or {}
    split = _expect(doc, "split", dict, {}) or {}

    ws = workspace if workspace is not None else doc.get("workspace")
    if ws is None:
        raise ConfigError("workspace path required (config 'workspace' or --workspace)")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else path.parent / p

    base_url = env.get(ENV_BASE_URL) or provider.get("base_url")
    api_key = env.get(ENV_API_KEY) or provider.get("api_key")

    try:
        return PipelineConfig(
            workspace=Path(ws),
            seed=seed if seed is not None else int(doc.get("seed", 0)),
            parallelism=parallelism if parallelism is not None else int(doc.get("parallelism", 4)),
            review_mode=review_mode or review.get("mode", "auto"),
            reviewer_enabled=reviewer if reviewer is not None else bool(doc.get("reviewer_enabled", False)),
            split_ratio=float(split.get("ratio", 0.8)),
            select_k=int(scenarios.get("select_k", 5)),
            max_rounds=int(dialogue.get("max_rounds", 10)),
            json_retry_budget=int(dialogue.get("json_retry_budget", 2)),
            provider_kind=provider.get("kind", "http"),
            cassette_path=resolve(provider["cassette"]) if "cassette" in provider else None,
            base_url=base_url,
            api_key=api_key,
            timeout_s=float(provider.get("timeout_s", 60.0)),
            penalty_offset=float(provider.get("penalty_offset", -1.0)),
            requests_per_second=(
                float(provider["requests_per_second"]) if "requests_per_second" in provider else None
            ),
            review_token=review.get("token"),
            ui_dir=resolve(review["ui_dir"]) if "ui_dir" in review else None,
            objects_path=resolve(sources["objects"]) if "objects" in sources else None,
            relations_path=resolve(sources["relations"]) if "relations" in sources else None,
            agent_overrides=_expect(doc, "agents", dict, {}) or {},
            training_overrides=_expect(doc, "training", dict, {}) or {},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
