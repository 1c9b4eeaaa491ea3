"""Humanoid-Oracle-Summarizer dialogue protocol over a pruned scene graph.

The Oracle opens with instructions grounded in the pruned graph; the
Humanoid, which never sees the graph, asks questions until it writes
'done'; the Summarizer condenses the whole conversation into the final
instruction set. An optional Reviewer checks that set against the full
graph and may trigger exactly one Oracle revision plus re-summarization.

Oracle and Summarizer replies must carry a JSON object mapping "1".."n"
to instruction strings; parse failures get a bounded number of corrective
re-prompts before the dialogue is abandoned.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Optional

from .gateway import AgentConfig, Gateway
from .jsontools import first_json_object
from .prompts import HUMANOID, ORACLE, REVIEWER, SUMMARIZER
from .scenarios import Scenario
from .sgl import SceneGraph, serialize_sgl

logger = logging.getLogger(__name__)

DONE_PATTERN = re.compile(r"\bdone\b", re.IGNORECASE)
JSON_REPROMPT = (
    "Respond only with a single JSON object mapping instruction indices to "
    "instructions. Do not output anything else."
)

VERDICT_ACCEPT = "accept"
VERDICT_REVISE = "revise"


class InstructionParseError(ValueError):
    """A single reply could not be read as an instruction set."""


class NoJsonFound(InstructionParseError):
    pass


class NotFlatObject(InstructionParseError):
    pass


class NonContiguousIndices(InstructionParseError):
    pass


class EmptyInstruction(InstructionParseError):
    pass


class InstructionParseFailure(RuntimeError):
    """An agent kept producing unparseable replies until the retry budget ran out."""

    def __init__(self, role: str, attempts: int, last: InstructionParseError):
        super().__init__(f"{role} produced no parseable instruction set in {attempts} attempts (last: {last})")
        self.role = role
        self.attempts = attempts
        self.last = last


@dataclass(frozen=True)
class InstructionSet:
    """Ordered instruction steps; step i carries key str(i+1) on the wire."""

    entries: tuple

    def __post_init__(self):
        if not self.entries:
            raise EmptyInstruction("instruction set must contain at least one step")
        if any(not isinstance(e, str) or not e for e in self.entries):
            raise EmptyInstruction("every instruction must be a non-empty string")

    def __len__(self):
        return len(self.entries)

    def as_numbered_lines(self) -> str:
        """One "i. text" line per step; inner whitespace runs collapse so a
        step never spans lines."""
        return "\n".join(f"{i}. {' '.join(text.split())}" for i, text in enumerate(self.entries, start=1))

    def to_doc(self) -> dict:
        return {str(i): text for i, text in enumerate(self.entries, start=1)}

    @classmethod
    def from_doc(cls, doc: dict) -> "InstructionSet":
        return _from_mapping(doc)


def _from_mapping(document: dict) -> InstructionSet:
    if not document:
        raise EmptyInstruction("JSON object contained no instructions")
    indices = []
    for key, value in document.items():
        if not isinstance(value, str):
            raise NotFlatObject(f"value for key {key!r} is not a string")
        if not key.isdigit():
            raise NonContiguousIndices(f"key {key!r} is not a decimal index")
        indices.append(int(key))
    ordered = sorted(indices)
    if len(set(ordered)) != len(ordered):
        raise NonContiguousIndices(f"duplicate numeric keys after normalization: {ordered}")
    if ordered != list(range(ordered[0], ordered[0] + len(ordered))):
        raise NonContiguousIndices(f"keys {ordered} are not contiguous")
    if ordered[0] != 1:
        logger.warning("instruction keys start at %d; re-indexing from 1", ordered[0])
    by_index = {int(key): value for key, value in document.items()}
    entries = tuple(by_index[i].strip() for i in ordered)
    if any(not e for e in entries):
        raise EmptyInstruction("instruction text must be non-empty")
    return InstructionSet(entries=entries)


def parse_instruction_json(text: str) -> InstructionSet:
    """Instruction set from the first balanced JSON object in a reply."""
    document = first_json_object(text)
    if document is None:
        raise NoJsonFound(f"no JSON object in reply: {text[:120]!r}")
    return _from_mapping(document)


def detect_done(message: str) -> bool:
    """True when the message contains the standalone word 'done' and asks
    nothing; 'done' next to a question mark does not end the dialogue."""
    return bool(DONE_PATTERN.search(message)) and "?" not in message


@dataclass
class DialogueTurn:
    role: str
    content: str
    turn_index: int
    parsed_instructions: Optional[InstructionSet] = None

    def to_doc(self) -> dict:
        return {
            "role": self.role,
            "content": self.content,
            "turn_index": self.turn_index,
            "instructions": self.parsed_instructions.to_doc() if self.parsed_instructions else None,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "DialogueTurn":
        instructions = doc.get("instructions")
        return cls(
            role=doc["role"],
            content=doc["content"],
            turn_index=doc["turn_index"],
            parsed_instructions=InstructionSet.from_doc(instructions) if instructions else None,
        )


@dataclass
class Transcript:
    turns: list = field(default_factory=list)
    rounds: int = 0
    truncated: bool = False
    reviewer_used: bool = False
    reviewer_verdict: Optional[str] = None

    def add(self, role: str, content: str, parsed: Optional[InstructionSet] = None) -> DialogueTurn:
        turn = DialogueTurn(role=role, content=content, turn_index=len(self.turns), parsed_instructions=parsed)
        self.turns.append(turn)
        return turn

    def conversation(self) -> list:
        """Humanoid and Oracle turns only, in order."""
        return [t for t in self.turns if t.role in (HUMANOID, ORACLE)]

    def to_doc(self) -> dict:
        return {
            "turns": [t.to_doc() for t in self.turns],
            "rounds": self.rounds,
            "truncated": self.truncated,
            "reviewer_used": self.reviewer_used,
            "reviewer_verdict": self.reviewer_verdict,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Transcript":
        return cls(
            turns=[DialogueTurn.from_doc(t) for t in doc["turns"]],
            rounds=doc["rounds"],
            truncated=doc["truncated"],
            reviewer_used=doc["reviewer_used"],
            reviewer_verdict=doc.get("reviewer_verdict"),
        )


@dataclass
class DialogueConfig:
    agents: dict
    max_rounds: int = 10
    json_retry_budget: int = 2
    reviewer_enabled: bool = False

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.json_retry_budget < 0:
            raise ValueError("json_retry_budget must be >= 0")
        required = {HUMANOID, ORACLE, SUMMARIZER}
        if self.reviewer_enabled:
            required.add(REVIEWER)
        missing = required - set(self.agents)
        if missing:
            raise ValueError(f"missing agent configs for: {sorted(missing)}")


def _instruction_chat(
    gateway: Gateway,
    config: AgentConfig,
    messages: list,
    budget: int,
    session: Optional[str],
) -> tuple:
    """Chat expecting an instruction-set reply; re-prompts on parse failure."""
    work = list(messages)
    last: Optional[InstructionParseError] = None
    for attempt in range(budget + 1):
        reply = gateway.chat(config, work, session=session)
        try:
            return reply, parse_instruction_json(reply)
        except InstructionParseError as err:
            last = err
            logger.warning("%s reply attempt %d unparseable: %s", config.role_name, attempt + 1, err)
            work = work + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": JSON_REPROMPT},
            ]
    raise InstructionParseFailure(config.role_name, budget + 1, last)


def _summarize(gateway, config, transcript, budget, session) -> tuple:
    lines = ["Conversation:"]
    for turn in transcript.conversation():
        if turn.role == ORACLE and turn.parsed_instructions is not None:
            lines.append(f"Oracle: {turn.parsed_instructions.as_numbered_lines()}")
        else:
            lines.append(f"Humanoid: {turn.content}")
    request = [{"role": "user", "content": "\n".join(lines)}]
    return _instruction_chat(gateway, config, request, budget, session)


def review_instructions(
    final_set: InstructionSet,
    full_graph: SceneGraph,
    gateway: Gateway,
    config: AgentConfig,
    session: Optional[str] = None,
) -> tuple:
    """Reviewer verdict ("accept", None) or ("revise", feedback).

    The reviewer is advisory: replies that fail to parse count as accept.
    """
    request = (
        f"Instructions:\n{final_set.as_numbered_lines()}\n\n"
        f"Scene graph: {serialize_sgl(full_graph)}"
    )
    reply = gateway.chat(config, [{"role": "user", "content": request}], session=session)
    document = first_json_object(reply)
    if document is not None:
        verdict = document.get("verdict")
        if verdict == VERDICT_ACCEPT:
            return reply, (VERDICT_ACCEPT, None)
        if verdict == VERDICT_REVISE:
            feedback = document.get("feedback")
            if isinstance(feedback, str) and feedback:
                return reply, (VERDICT_REVISE, feedback)
    logger.warning("reviewer reply unparseable; treating as accept: %r", reply[:120])
    return reply, (VERDICT_ACCEPT, None)


def run_dialogue(
    pruned_graph: SceneGraph,
    full_graph: SceneGraph,
    scenario: Scenario,
    gateway: Gateway,
    config: DialogueConfig,
    session: Optional[str] = None,
) -> tuple:
    """Run the full protocol; returns (Transcript, final InstructionSet)."""
    if pruned_graph.is_empty():
        raise ValueError("dialogue requires a non-empty pruned graph")
    budget = config.json_retry_budget
    transcript = Transcript()

    # Oracle owns the graph view; the Humanoid conversation never includes it.
    oracle_messages = [
        {
            "role": "user",
            "content": f"Scenario: {scenario.description}\n\nScene graph: {serialize_sgl(pruned_graph)}",
        }
    ]
    reply, instructions = _instruction_chat(gateway, config.agents[ORACLE], oracle_messages, budget, session)
    oracle_messages.append({"role": "assistant", "content": reply})
    transcript.add(ORACLE, reply, instructions)

    humanoid_messages = [
        {
            "role": "user",
            "content": f"Scenario: {scenario.description}\n\nInitial instructions:\n{instructions.as_numbered_lines()}",
        }
    ]
    for _ in range(config.max_rounds):
        question = gateway.chat(config.agents[HUMANOID], humanoid_messages, session=session)
        humanoid_messages.append({"role": "assistant", "content": question})
        transcript.add(HUMANOID, question)
        if detect_done(question):
            break
        oracle_messages.append({"role": "user", "content": question})
        reply, instructions = _instruction_chat(gateway, config.agents[ORACLE], oracle_messages, budget, session)
        oracle_messages.append({"role": "assistant", "content": reply})
        transcript.add(ORACLE, reply, instructions)
        humanoid_messages.append({"role": "user", "content": instructions.as_numbered_lines()})
        transcript.rounds += 1
    else:
        transcript.truncated = True
        logger.warning("dialogue hit max_rounds=%d without 'done'; flagged truncated", config.max_rounds)

    reply, final_set = _summarize(gateway, config.agents[SUMMARIZER], transcript, budget, session)
    transcript.add(SUMMARIZER, reply, final_set)

    if config.reviewer_enabled:
        transcript.reviewer_used = True
        reviewer_reply, (verdict, feedback) = review_instructions(
            final_set, full_graph, gateway, config.agents[REVIEWER], session=session
        )
        transcript.reviewer_verdict = verdict
        transcript.add(REVIEWER, reviewer_reply)
        if verdict == VERDICT_REVISE:
            oracle_messages.append(
                {
                    "role": "user",
                    "content": (
                        f"A reviewer left this feedback on your instructions: {feedback}\n"
                        "Provide a complete revised set of instructions."
                    ),
                }
            )
            reply, instructions = _instruction_chat(
                gateway, config.agents[ORACLE], oracle_messages, budget, session
            )
            transcript.add(ORACLE, reply, instructions)
            reply, final_set = _summarize(gateway, config.agents[SUMMARIZER], transcript, budget, session)
            transcript.add(SUMMARIZER, reply, final_set)

    return transcript, final_set
