"""Domain types shared across the engine, plus the executor context container.

Token lengths everywhere are backend-reported counts, never produced by a
local tokenizer. Out-of-context is a terminal trajectory state, never a
silently clamped one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Optional, Union

ARCHITECTURES = (
    "monolithic",
    "pevr",
    "eva",
    "eva_nosummary",
    "pevr_audit",
    "eva_audit",
)
AUDIT_ARCHITECTURES = ("pevr_audit", "eva_audit")
BENCHMARK_TAGS = ("hotpotqa", "fanoutqa", "generic")
TERMINATIONS = (
    "finished",
    "turn_budget_exhausted",
    "out_of_context",
    "backend_error",
)

CONTINUE = "continue"
INTERVENE = "intervene"


class OutOfContextError(Exception):
    """Raised when a context operation would exceed the token cap."""

    def __init__(self, token_len: int, cap: int):
        super().__init__(f"context length {token_len} exceeds cap {cap}")
        self.token_len = token_len
        self.cap = cap


@dataclass(frozen=True)
class ToolCall:
    """A single tool invocation, at most one per turn."""

    tool: str
    argument: str

    def __post_init__(self):
        if not self.tool:
            raise ValueError("tool name must be non-empty")

    def render(self) -> str:
        return f"{self.tool}[{self.argument}]"


@dataclass(frozen=True)
class TokenUsage:
    """Backend-reported token counts for one completion call.

    prompt_tokens is the full prompt including any cached prefix;
    cached_tokens is the subset served from a prompt cache.
    """

    prompt_tokens: int = 0
    cached_tokens: int = 0
    generated_tokens: int = 0

    def __post_init__(self):
        if min(self.prompt_tokens, self.cached_tokens, self.generated_tokens) < 0:
            raise ValueError("token counts must be >= 0")
        if self.cached_tokens > self.prompt_tokens:
            raise ValueError("cached_tokens cannot exceed prompt_tokens")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.cached_tokens + other.cached_tokens,
            self.generated_tokens + other.generated_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.generated_tokens


@dataclass(frozen=True)
class TaskInstance:
    """One benchmark task: a user query plus optional gold answers."""

    id: str
    query: str
    gold_answers: tuple[str, ...] = ()
    benchmark_tag: str = "generic"
    environment_id: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("task id must be non-empty")
        if not self.query:
            raise ValueError("task query must be non-empty")
        if self.benchmark_tag not in BENCHMARK_TAGS:
            raise ValueError(f"unknown benchmark tag {self.benchmark_tag!r}")


@dataclass
class TurnRecord:
    """One ReAct turn: reasoning, action, observation, and call usage.

    action is None only for protocol-violation turns (the executor emitted
    no parseable tool call); those turns carry the injected error text as
    their observation and still consume the turn budget.
    """

    t: int
    reasoning: str
    action: Optional[ToolCall]
    observation: Optional[str]
    usage: TokenUsage
    wall_time_ms: int = 0

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("turn index is 1-based")


@dataclass(frozen=True)
class Plan:
    """A natural-language execution plan, initial or issued as a replan."""

    text: str
    origin: str = "initial"
    replan_turn: Optional[int] = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("plan text must be non-empty")
        if self.origin not in ("initial", "replan"):
            raise ValueError(f"unknown plan origin {self.origin!r}")


@dataclass(frozen=True)
class ReplanHandoff:
    """Intervention payload for plan-based supervision: replacement plan
    plus the tool-call memory log re-seeded into the executor."""

    replan: Plan
    memory: str = ""


@dataclass(frozen=True)
class AdviceHandoff:
    """Intervention payload for query-based supervision: summary of
    completed work plus advisory guidance."""

    summary: str
    advice: str


@dataclass(frozen=True)
class AdviceMemoryHandoff:
    """Summary-free intervention payload: verbatim tool-call log stands in
    for the summary (no-summary ablation only)."""

    memory: str
    advice: str


Handoff = Union[ReplanHandoff, AdviceHandoff, AdviceMemoryHandoff]


@dataclass(frozen=True)
class VerifierDecision:
    """Supervisor verdict for one verification call."""

    verdict: str
    payload: Optional[Handoff] = None
    raw_text: str = ""

    def __post_init__(self):
        if self.verdict not in (CONTINUE, INTERVENE):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == INTERVENE and self.payload is None:
            raise ValueError("intervene decisions require a payload")
        if self.verdict == CONTINUE and self.payload is not None:
            raise ValueError("continue decisions carry no payload")


@dataclass(frozen=True)
class Pricing:
    """Dollars per 1e6 tokens, split by prefill / cached / generated."""

    prefill: Decimal
    cached: Decimal
    generated: Decimal

    def __post_init__(self):
        if min(self.prefill, self.cached, self.generated) < 0:
            raise ValueError("pricing rates must be >= 0")


@dataclass(frozen=True)
class ModelProfile:
    """Everything the accounting formulas need to know about a model.

    Edge profiles must set param_count and efficiency (ops per joule);
    cloud profiles must set pricing. The KV geometry fields (layers,
    kv_heads, head_dim, bytes_per_activation) are required wherever a
    KV-cache estimate is requested.
    """

    name: str
    placement: str
    context_cap: int
    param_count: Optional[float] = None
    layers: Optional[int] = None
    kv_heads: Optional[int] = None
    head_dim: Optional[int] = None
    bytes_per_activation: Optional[int] = None
    efficiency: Optional[float] = None
    pricing: Optional[Pricing] = None

    def __post_init__(self):
        if self.placement not in ("edge", "cloud"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.context_cap <= 0:
            raise ValueError("context_cap must be > 0")
        if self.placement == "edge":
            if not self.param_count or self.param_count <= 0:
                raise ValueError("edge profiles require param_count > 0")
            if not self.efficiency or self.efficiency <= 0:
                raise ValueError("edge profiles require efficiency > 0")
        if self.placement == "cloud" and self.pricing is None:
            raise ValueError("cloud profiles require pricing")
        for name in ("layers", "kv_heads", "head_dim", "bytes_per_activation"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be > 0 when set")

    @property
    def has_kv_geometry(self) -> bool:
        return None not in (
            self.layers,
            self.kv_heads,
            self.head_dim,
            self.bytes_per_activation,
        )


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    max_generated_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_generated_tokens <= 0:
            raise ValueError("max_generated_tokens must be > 0")


@dataclass(frozen=True)
class RunConfig:
    """One experiment condition: architecture, budgets, and model bindings.

    max_turns=None defers to the per-benchmark default at run time.
    """

    architecture: str
    executor_profile: ModelProfile
    supervisor_profile: Optional[ModelProfile] = None
    max_turns: Optional[int] = None
    verify_interval: int = 1
    environment_id: str = "wiki"
    seed: int = 0
    sampling: SamplingParams = SamplingParams()

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.max_turns is not None and self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.verify_interval < 1:
            raise ValueError("verify_interval must be >= 1")
        if self.architecture != "monolithic" and self.supervisor_profile is None:
            raise ValueError(f"{self.architecture} requires a supervisor profile")

    @property
    def is_audit(self) -> bool:
        return self.architecture in AUDIT_ARCHITECTURES


@dataclass
class ExecutorContext:
    """The growing ReAct context: seed prompt plus appended turns.

    token_len tracks the latest backend-reported length; it never exceeds
    cap (overflow raises OutOfContextError without mutating state).
    """

    seed_prompt: str
    cap: int
    token_len: int = 0
    turns: list[TurnRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.cap <= 0:
            raise ValueError("cap must be > 0")
        if self.token_len > self.cap:
            raise OutOfContextError(self.token_len, self.cap)

    def append_turn(self, turn: TurnRecord, new_token_len: int) -> "ExecutorContext":
        if new_token_len < self.token_len:
            raise ValueError("token length cannot shrink between resets")
        if new_token_len > self.cap:
            raise OutOfContextError(new_token_len, self.cap)
        self.turns.append(turn)
        self.token_len = new_token_len
        return self

    def reset(self, new_seed: str, seed_token_len: int) -> "ExecutorContext":
        if seed_token_len > self.cap:
            raise OutOfContextError(seed_token_len, self.cap)
        self.seed_prompt = new_seed
        self.turns = []
        self.token_len = seed_token_len
        return self


@dataclass(frozen=True)
class SupervisorCallRecord:
    """One supervisor verification call; applied=False in audit modes."""

    at_turn: int
    decision: VerifierDecision
    usage: TokenUsage
    applied: bool

    def __post_init__(self):
        if self.applied and self.decision.verdict != INTERVENE:
            raise ValueError("only intervene decisions can be applied")


@dataclass(frozen=True)
class InitialPlanRecord:
    """The PEVR planning call: parsed plan text (empty if it never parsed)
    and the usage billed to it."""

    text: str
    usage: TokenUsage


@dataclass
class TrajectoryTotals:
    """Per-trajectory accounting: dollar/joule sums and context/KV maxima."""

    cost_usd: Decimal = Decimal(0)
    energy_joules: float = 0.0
    max_context_tokens: int = 0
    max_kv_bytes: int = 0


@dataclass
class TrajectoryRecord:
    """The complete audited log of one task execution."""

    task_id: str
    architecture: str
    config_digest: str
    turns: list[TurnRecord] = field(default_factory=list)
    supervisor_calls: list[SupervisorCallRecord] = field(default_factory=list)
    initial_plan: Optional[InitialPlanRecord] = None
    resets: list[int] = field(default_factory=list)
    final_answer: Optional[str] = None
    termination: str = "turn_budget_exhausted"
    success: Optional[bool] = None
    score: Optional[float] = None
    totals: TrajectoryTotals = field(default_factory=TrajectoryTotals)

    def applied_interventions(self) -> int:
        return sum(1 for call in self.supervisor_calls if call.applied)

    def intervene_count(self) -> int:
        return sum(
            1 for call in self.supervisor_calls if call.decision.verdict == INTERVENE
        )


# --- JSONL serialization -------------------------------------------------
#
# One JSON object per line, lowercase snake-case keys, append-only files.
# cost_usd is stored as a decimal string so re-summing stays exact.


def _usage_to_dict(usage: TokenUsage) -> dict:
    return {
        "prompt_tokens": usage.prompt_tokens,
        "cached_tokens": usage.cached_tokens,
        "generated_tokens": usage.generated_tokens,
    }


def _usage_from_dict(d: dict) -> TokenUsage:
    return TokenUsage(d["prompt_tokens"], d["cached_tokens"], d["generated_tokens"])


def _payload_to_dict(payload: Optional[Handoff]) -> Optional[dict]:
    if payload is None:
        return None
    if isinstance(payload, ReplanHandoff):
        return {
            "kind": "replan",
            "replan": {
                "text": payload.replan.text,
                "origin": payload.replan.origin,
                "replan_turn": payload.replan.replan_turn,
            },
            "memory": payload.memory,
        }
    if isinstance(payload, AdviceHandoff):
        return {"kind": "advice", "summary": payload.summary, "advice": payload.advice}
    return {"kind": "advice_memory", "memory": payload.memory, "advice": payload.advice}


def _payload_from_dict(d: Optional[dict]) -> Optional[Handoff]:
    if d is None:
        return None
    kind = d["kind"]
    if kind == "replan":
        plan = Plan(d["replan"]["text"], d["replan"]["origin"], d["replan"]["replan_turn"])
        return ReplanHandoff(plan, d["memory"])
    if kind == "advice":
        return AdviceHandoff(d["summary"], d["advice"])
    if kind == "advice_memory":
        return AdviceMemoryHandoff(d["memory"], d["advice"])
    raise ValueError(f"unknown handoff kind {kind!r}")


def record_to_dict(record: TrajectoryRecord) -> dict:
    return {
        "task_id": record.task_id,
        "architecture": record.architecture,
        "config_digest": record.config_digest,
        "turns": [
            {
                "t": turn.t,
                "reasoning": turn.reasoning,
                "action": (
                    {"tool": turn.action.tool, "argument": turn.action.argument}
                    if turn.action is not None
                    else None
                ),
                "observation": turn.observation,
                "usage": _usage_to_dict(turn.usage),
                "wall_time_ms": turn.wall_time_ms,
            }
            for turn in record.turns
        ],
        "supervisor_calls": [
            {
                "at_turn": call.at_turn,
                "decision": {
                    "verdict": call.decision.verdict,
                    "payload": _payload_to_dict(call.decision.payload),
                    "raw_text": call.decision.raw_text,
                },
                "usage": _usage_to_dict(call.usage),
                "applied": call.applied,
            }
            for call in record.supervisor_calls
        ],
        "initial_plan": (
            {
                "text": record.initial_plan.text,
                "usage": _usage_to_dict(record.initial_plan.usage),
            }
            if record.initial_plan is not None
            else None
        ),
        "resets": list(record.resets),
        "final_answer": record.final_answer,
        "termination": record.termination,
        "success": record.success,
        "score": record.score,
        "totals": {
            "cost_usd": str(record.totals.cost_usd),
            "energy_joules": record.totals.energy_joules,
            "max_context_tokens": record.totals.max_context_tokens,
            "max_kv_bytes": record.totals.max_kv_bytes,
        },
    }


def record_from_dict(d: dict) -> TrajectoryRecord:
    turns = [
        TurnRecord(
            t=td["t"],
            reasoning=td["reasoning"],
            action=(
                ToolCall(td["action"]["tool"], td["action"]["argument"])
                if td["action"] is not None
                else None
            ),
            observation=td["observation"],
            usage=_usage_from_dict(td["usage"]),
            wall_time_ms=td["wall_time_ms"],
        )
        for td in d["turns"]
    ]
    calls = [
        SupervisorCallRecord(
            at_turn=cd["at_turn"],
            decision=VerifierDecision(
                cd["decision"]["verdict"],
                _payload_from_dict(cd["decision"]["payload"]),
                cd["decision"]["raw_text"],
            ),
            usage=_usage_from_dict(cd["usage"]),
            applied=cd["applied"],
        )
        for cd in d["supervisor_calls"]
    ]
    initial_plan = None
    if d.get("initial_plan") is not None:
        initial_plan = InitialPlanRecord(
            d["initial_plan"]["text"], _usage_from_dict(d["initial_plan"]["usage"])
        )
    totals = TrajectoryTotals(
        cost_usd=Decimal(d["totals"]["cost_usd"]),
        energy_joules=d["totals"]["energy_joules"],
        max_context_tokens=d["totals"]["max_context_tokens"],
        max_kv_bytes=d["totals"]["max_kv_bytes"],
    )
    return TrajectoryRecord(
        task_id=d["task_id"],
        architecture=d["architecture"],
        config_digest=d["config_digest"],
        turns=turns,
        supervisor_calls=calls,
        initial_plan=initial_plan,
        resets=list(d["resets"]),
        final_answer=d["final_answer"],
        termination=d["termination"],
        success=d["success"],
        score=d.get("score"),
        totals=totals,
    )


def record_to_json_line(record: TrajectoryRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=False, separators=(",", ":"))


def write_trajectories(path, records: Iterable[TrajectoryRecord], append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_json_line(record))
            fh.write("\n")


def read_trajectories(path) -> list[TrajectoryRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {line_no}: malformed trajectory record: {exc}")
    return records
