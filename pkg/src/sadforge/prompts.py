"""Versioned prompt fixtures and the default agent configurations.

Prompt texts live as files under ``sadforge/prompts/`` and are loaded
verbatim; code never embeds or edits them. Role names double as cassette
script keys.
"""

from __future__ import annotations

from importlib import resources

from .gateway import AgentConfig

HUMANOID = "humanoid"
ORACLE = "oracle"
SUMMARIZER = "summarizer"
REVIEWER = "reviewer"
SCENARIO = "scenario"
PRUNER = "pruner"

ROLES = (HUMANOID, ORACLE, SUMMARIZER, REVIEWER, SCENARIO, PRUNER)

PROMPT_VERSION = 1


def load_prompt(role: str, version: int = PROMPT_VERSION) -> str:
    """Return the fixture text for a role, byte-for-byte as shipped."""
    if role not in ROLES:
        raise KeyError(f"unknown prompt role {role!r}; expected one of {ROLES}")
    name = f"{role}_v{version}.txt"
    return (resources.files(__package__) / "prompts" / name).read_text(encoding="utf-8")


def default_agent_configs(version: int = PROMPT_VERSION) -> dict:
    """Agent configs with the published sampling parameters per role.

    The reviewer and scenario-generator settings are local defaults; only
    humanoid, oracle, and summarizer have externally fixed parameters.
    """
    return {
        HUMANOID: AgentConfig(
            role_name=HUMANOID,
            model="llama3-8b-8192",
            temperature=1.0,
            repetition_penalty=1.2,
            max_tokens=128,
            system_prompt=load_prompt(HUMANOID, version),
        ),
        ORACLE: AgentConfig(
            role_name=ORACLE,
            model="mixtral-8x7b-32768",
            temperature=0.7,
            repetition_penalty=1.2,
            max_tokens=512,
            system_prompt=load_prompt(ORACLE, version),
        ),
        SUMMARIZER: AgentConfig(
            role_name=SUMMARIZER,
            model="llama3-8b-8192",
            temperature=0.1,
            repetition_penalty=1.2,
            max_tokens=1024,
            system_prompt=load_prompt(SUMMARIZER, version),
        ),
        REVIEWER: AgentConfig(
            role_name=REVIEWER,
            model="mixtral-8x7b-32768",
            temperature=0.1,
            repetition_penalty=1.2,
            max_tokens=256,
            system_prompt=load_prompt(REVIEWER, version),
        ),
        SCENARIO: AgentConfig(
            role_name=SCENARIO,
            model="gpt-3.5-turbo",
            temperature=0.7,
            repetition_penalty=1.0,
            max_tokens=1024,
            system_prompt=load_prompt(SCENARIO, version),
        ),
        PRUNER: AgentConfig(
            role_name=PRUNER,
            model="gpt-3.5-turbo",
            temperature=0.2,
            repetition_penalty=1.0,
            max_tokens=512,
            system_prompt=load_prompt(PRUNER, version),
        ),
    }
