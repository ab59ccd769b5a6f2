"""Execution state machines: the monolithic ReAct baseline, the
plan-supervised and advice-supervised hybrid architectures, and their
no-restart audit variants.

Turn indices are 1-based. Verification runs after the environment step of
every turn divisible by the verification interval, while the episode is
still live; a finish short-circuits any verification scheduled for the
same turn. An applied intervention resets the executor context and
re-seeds it from the handoff.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict
from typing import Optional

from . import accounting
from .backends import BackendError, ChatMessage, ChatRequest, ChatResponse
from .core import (
    CONTINUE,
    INTERVENE,
    AdviceMemoryHandoff,
    ExecutorContext,
    InitialPlanRecord,
    OutOfContextError,
    Plan,
    ReplanHandoff,
    RunConfig,
    SupervisorCallRecord,
    TaskInstance,
    TokenUsage,
    TrajectoryRecord,
    TurnRecord,
    VerifierDecision,
)
from .prompting import (
    MalformedPlanError,
    MalformedVerdictError,
    NoToolCallError,
    format_memory,
    parse_eva_verdict,
    parse_pevr_verdict,
    parse_plan,
    parse_tool_call,
    render,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_TURNS = {"hotpotqa": 10, "fanoutqa": 20, "generic": 40}

INVALID_TOOL_CALL_OBSERVATION = (
    "Invalid tool call format. Emit exactly one call as tool[argument]."
)

_PEVR_FAMILY = ("pevr", "pevr_audit")
_EVA_FAMILY = ("eva", "eva_nosummary", "eva_audit")


def effective_max_turns(config: RunConfig, task: TaskInstance) -> int:
    if config.max_turns is not None:
        return config.max_turns
    return DEFAULT_MAX_TURNS[task.benchmark_tag]


def run_config_digest(config: RunConfig) -> str:
    payload = {
        "architecture": config.architecture,
        "max_turns": config.max_turns,
        "verify_interval": config.verify_interval,
        "environment_id": config.environment_id,
        "seed": config.seed,
        "sampling": asdict(config.sampling),
        "executor": asdict(config.executor_profile),
        "supervisor": (
            asdict(config.supervisor_profile)
            if config.supervisor_profile is not None
            else None
        ),
    }
    canonical = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class _Terminate(Exception):
    """Internal control flow: ends the episode with the given reason."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def _turn_block(turn: TurnRecord) -> str:
    lines = []
    if turn.reasoning:
        lines.append(turn.reasoning)
    if turn.action is not None:
        lines.append(f"Tool call: {turn.action.render()}")
    lines.append(f"Observation: {turn.observation}")
    return "\n".join(lines)


def render_turn_log(turns) -> str:
    """The serialized turn log, exactly as the executor context renders it;
    also what verifiers receive as the executor-context binding."""
    return "\n\n".join(_turn_block(turn) for turn in turns)


class _Episode:
    def __init__(self, task, config, executor_backend, supervisor_backend, env):
        self.task = task
        self.config = config
        self.executor = executor_backend
        self.supervisor = supervisor_backend
        self.env = env
        self.family = (
            "pevr"
            if config.architecture in _PEVR_FAMILY
            else "eva"
            if config.architecture in _EVA_FAMILY
            else "monolithic"
        )
        if self.family != "monolithic" and supervisor_backend is None:
            raise ValueError(f"{config.architecture} requires a supervisor backend")
        self.audit = config.is_audit
        self.nosummary = config.architecture == "eva_nosummary"
        self.plan: Optional[Plan] = None
        self.ctx: Optional[ExecutorContext] = None
        self.record = TrajectoryRecord(
            task_id=task.id,
            architecture=config.architecture,
            config_digest=run_config_digest(config),
        )

    # -- helpers ----------------------------------------------------------

    def _request(self, content: str) -> ChatRequest:
        sampling = self.config.sampling
        return ChatRequest(
            [ChatMessage("user", content)],
            temperature=sampling.temperature,
            max_generated_tokens=sampling.max_generated_tokens,
            seed=self.config.seed,
        )

    def _count_tokens(self, text: str) -> int:
        counter = getattr(self.executor, "count_tokens", None)
        if counter is None:
            return 0
        counted = counter(text)
        return counted if counted is not None else 0

    def _context_text(self) -> str:
        if not self.ctx.turns:
            return self.ctx.seed_prompt
        return self.ctx.seed_prompt + "\n\n" + render_turn_log(self.ctx.turns)

    def _memory_text(self) -> str:
        # Memory spans the whole trajectory, across resets.
        return format_memory(self.record.turns)

    # -- phases -----------------------------------------------------------

    def _initial_plan(self) -> Plan:
        prompt = render(
            "plan",
            {"user_query": self.task.query, "available_tools": self.env.tool_prompt},
        )
        request = self._request(prompt)
        response = self.supervisor.complete(request)
        usage = response.usage
        try:
            plan = parse_plan(response.text)
        except MalformedPlanError:
            try:
                retry = self.supervisor.complete(request)
            except BackendError:
                self.record.initial_plan = InitialPlanRecord("", usage)
                raise _Terminate("backend_error")
            usage = usage + retry.usage
            try:
                plan = parse_plan(retry.text)
            except MalformedPlanError:
                logger.warning(
                    "task %s: plan output malformed twice, aborting", self.task.id
                )
                self.record.initial_plan = InitialPlanRecord("", usage)
                raise _Terminate("backend_error")
        self.record.initial_plan = InitialPlanRecord(plan.text, usage)
        return plan

    def _seed_context(self) -> None:
        if self.family == "pevr":
            self.plan = self._initial_plan()
            seed = render(
                "plan_exec",
                {
                    "user_query": self.task.query,
                    "plan": self.plan.text,
                    "available_tools": self.env.tool_prompt,
                },
            )
        else:
            seed = render(
                "direct_exec",
                {"user_query": self.task.query, "available_tools": self.env.tool_prompt},
            )
        cap = self.config.executor_profile.context_cap
        try:
            self.ctx = ExecutorContext(seed, cap, token_len=self._count_tokens(seed))
        except OutOfContextError:
            raise _Terminate("out_of_context")

    def _turn(self, t: int) -> bool:
        """Run one executor turn; returns False once the episode is over."""
        request = self._request(self._context_text())
        try:
            response: ChatResponse = self.executor.complete(request)
        except BackendError as exc:
            logger.warning("task %s turn %d: executor backend error: %s", self.task.id, t, exc)
            raise _Terminate("backend_error")
        usage = response.usage
        new_token_len = max(self.ctx.token_len, usage.total_tokens)

        observation = None
        try:
            call, reasoning = parse_tool_call(response.text, self.env.tools)
        except NoToolCallError:
            turn = TurnRecord(
                t, response.text, None, INVALID_TOOL_CALL_OBSERVATION, usage,
                response.wall_time_ms,
            )
        else:
            observation = self.env.step(call)
            turn = TurnRecord(
                t, reasoning, call, observation.text, usage, response.wall_time_ms
            )

        try:
            self.ctx.append_turn(turn, new_token_len)
        except OutOfContextError:
            self.record.turns.append(turn)
            raise _Terminate("out_of_context")
        self.record.turns.append(turn)

        if observation is not None and observation.terminal:
            self.record.final_answer = observation.final_answer
            self.record.termination = "finished"
            return False

        if (
            self.family != "monolithic"
            and self.supervisor is not None
            and t % self.config.verify_interval == 0
        ):
            self._verify(t)
        return True

    def _verify(self, t: int) -> None:
        if self.family == "pevr":
            template, parser = "verify_replan", parse_pevr_verdict
            bindings = {
                "plan": self.plan.text,
                "executor_context": render_turn_log(self.ctx.turns),
                "memory": self._memory_text(),
            }
        else:
            template, parser = "verify_advice", parse_eva_verdict
            bindings = {
                "user_query": self.task.query,
                "executor_context": render_turn_log(self.ctx.turns),
                "memory": self._memory_text(),
            }
        request = self._request(render(template, bindings))
        try:
            response = self.supervisor.complete(request)
        except BackendError as exc:
            logger.warning("task %s turn %d: supervisor backend error: %s", self.task.id, t, exc)
            raise _Terminate("backend_error")
        usage = response.usage
        try:
            decision = parser(response.text)
        except MalformedVerdictError:
            try:
                retry = self.supervisor.complete(request)
            except BackendError:
                self.record.supervisor_calls.append(
                    SupervisorCallRecord(
                        t, VerifierDecision(CONTINUE, None, response.text), usage, False
                    )
                )
                raise _Terminate("backend_error")
            usage = usage + retry.usage
            try:
                decision = parser(retry.text)
            except MalformedVerdictError:
                logger.warning(
                    "task %s turn %d: protocol violation, verifier output malformed "
                    "twice; treating as CONTINUE",
                    self.task.id,
                    t,
                )
                decision = VerifierDecision(CONTINUE, None, retry.text)

        if decision.verdict != INTERVENE or self.audit:
            self.record.supervisor_calls.append(
                SupervisorCallRecord(t, decision, usage, applied=False)
            )
            return
        self._apply_intervention(t, decision, usage)

    def _apply_intervention(self, t: int, decision: VerifierDecision, usage: TokenUsage) -> None:
        memory_text = self._memory_text()
        if self.family == "pevr":
            new_plan = Plan(decision.payload.replan.text, origin="replan", replan_turn=t)
            recorded = VerifierDecision(
                INTERVENE, ReplanHandoff(new_plan, memory_text), decision.raw_text
            )
            seed = render(
                "replan_resume",
                {
                    "user_query": self.task.query,
                    "replan": new_plan.text,
                    "memory": memory_text,
                    "available_tools": self.env.tool_prompt,
                },
            )
        else:
            advice = decision.payload.advice
            if self.nosummary:
                summary_binding = memory_text
                recorded = VerifierDecision(
                    INTERVENE, AdviceMemoryHandoff(memory_text, advice), decision.raw_text
                )
            else:
                summary_binding = decision.payload.summary
                recorded = decision
            seed = render(
                "advice_resume",
                {
                    "user_query": self.task.query,
                    "summary": summary_binding,
                    "advice": advice,
                    "available_tools": self.env.tool_prompt,
                },
            )
        try:
            self.ctx.reset(seed, self._count_tokens(seed))
        except OutOfContextError:
            # The resume seed alone exceeds the cap: nothing was applied.
            self.record.supervisor_calls.append(
                SupervisorCallRecord(t, recorded, usage, applied=False)
            )
            raise _Terminate("out_of_context")
        self.record.supervisor_calls.append(
            SupervisorCallRecord(t, recorded, usage, applied=True)
        )
        self.record.resets.append(t)
        if self.family == "pevr":
            self.plan = recorded.payload.replan

    # -- entry point --------------------------------------------------------

    def run(self) -> TrajectoryRecord:
        max_turns = effective_max_turns(self.config, self.task)
        self.env.reset(self.task)
        try:
            self._seed_context()
        except BackendError as exc:
            logger.warning("task %s: backend error before turn 1: %s", self.task.id, exc)
            self.record.termination = "backend_error"
            return self._finalize()
        except _Terminate as term:
            self.record.termination = term.reason
            return self._finalize()
        for t in range(1, max_turns + 1):
            try:
                if not self._turn(t):
                    break
            except _Terminate as term:
                self.record.termination = term.reason
                break
        return self._finalize()

    def _finalize(self) -> TrajectoryRecord:
        profiles = {"executor": self.config.executor_profile}
        if self.config.supervisor_profile is not None:
            profiles["supervisor"] = self.config.supervisor_profile
        self.record.totals = accounting.aggregate(self.record, profiles)
        return self.record


def run_trajectory(
    task: TaskInstance,
    config: RunConfig,
    executor_backend,
    supervisor_backend=None,
    env=None,
) -> TrajectoryRecord:
    """Execute one task under the configured architecture."""
    if env is None:
        raise ValueError("an environment is required")
    return _Episode(task, config, executor_backend, supervisor_backend, env).run()


def run_monolithic(task, config, backend, env) -> TrajectoryRecord:
    if config.architecture != "monolithic":
        raise ValueError("run_monolithic requires architecture=monolithic")
    return run_trajectory(task, config, backend, None, env)


def run_pevr(task, config, executor_backend, supervisor_backend, env) -> TrajectoryRecord:
    if config.architecture != "pevr":
        raise ValueError("run_pevr requires architecture=pevr")
    return run_trajectory(task, config, executor_backend, supervisor_backend, env)


def run_eva(task, config, executor_backend, supervisor_backend, env) -> TrajectoryRecord:
    if config.architecture not in ("eva", "eva_nosummary"):
        raise ValueError("run_eva requires architecture=eva or eva_nosummary")
    return run_trajectory(task, config, executor_backend, supervisor_backend, env)


def run_audit(task, config, executor_backend, supervisor_backend, env) -> TrajectoryRecord:
    if not config.is_audit:
        raise ValueError("run_audit requires an audit architecture")
    return run_trajectory(task, config, executor_backend, supervisor_backend, env)
