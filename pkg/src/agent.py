"""External agent adapter: request documents, transports and the reply loop.

An agent receives the (possibly masked) space, the objective and the full
history, and answers with one design as JSON. Replies that cannot be parsed
are re-requested with a clarification note, up to the retry budget.
"""

import json
import logging
import os
import shlex
import subprocess
from dataclasses import dataclass, field
from typing import Any, Protocol

import anthropic
import httpx

import config
from src.errors import ConfigError, DataError, ParseFailure, TransportFailure
from src.optim import Proposal
from src.space import NameMap, ParameterSpace, mask_space, validate_design
from src.tasks import Task
from src.trajectory import Step
from src.utils import format_float, load_file, parse_agent_markdown, render_template

logger = logging.getLogger(__name__)

PROTOCOL = "design-loop-agent/1"

DEFAULT_CLARIFICATION = (
    "Your previous reply could not be used: {{ error }}. "
    "Return ONLY a valid JSON array containing one object that maps every "
    "field name to a value inside its range or option list."
)


# =============================================================================
# REQUEST / REPLY
# =============================================================================

@dataclass
class AgentRequest:
    """Everything the agent sees for one iteration (names already masked if agnostic)."""

    condition: str
    space: ParameterSpace
    objective: str
    history: list[dict[str, Any]]
    iteration: int
    iterations_total: int
    task: str | None = None
    description: str | None = None
    clarification: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "protocol": PROTOCOL,
            "condition": self.condition,
            "task": self.task,
            "description": self.description,
            "objective": self.objective,
            "iteration": self.iteration,
            "iterations_total": self.iterations_total,
            "space": self.space.to_list(),
            "history": self.history,
            "clarification": self.clarification,
        }


@dataclass
class AgentReply:
    design: dict[str, Any]
    retries_used: int = 0
    annotations: dict[str, Any] = field(default_factory=dict)
    text: str = ""


class Transport(Protocol):
    def send(self, request: AgentRequest) -> str: ...

    def close(self) -> None: ...


def describe_field(spec, show_units: bool) -> str:
    """One prompt line per parameter, e.g. `X1 (number: 100--500)`."""
    if spec.is_numeric:
        unit = f" {spec.unit}" if show_units and spec.unit else ""
        return f"{spec.name} (number: {format_float(spec.lower)}--{format_float(spec.upper)}{unit})"
    quoted = [f'"{o}"' for o in spec.options]
    if len(quoted) == 2:
        choices = " or ".join(quoted)
    else:
        choices = ", ".join(quoted[:-1]) + ", or " + quoted[-1]
    return f"{spec.name} (string: {choices})"


def describe_space(space: ParameterSpace, show_units: bool) -> str:
    return "\n".join(f"- {describe_field(spec, show_units)}" for spec in space)


def parse_reply(text: str, space: ParameterSpace) -> tuple[dict[str, Any], dict[str, Any]]:
    """Parse a reply into (design, annotations) against the space that was sent.

    Accepts one JSON object or a one-element JSON array of objects, with
    nothing else around it.

    Raises:
        ValueError: the reply is not usable
    """
    try:
        document = json.loads(text.strip())
    except json.JSONDecodeError as e:
        raise ValueError(f"reply is not valid JSON ({e.msg})") from None

    if isinstance(document, list):
        if len(document) != 1:
            raise ValueError(f"expected exactly one design, got {len(document)}")
        document = document[0]
    if not isinstance(document, dict):
        raise ValueError("reply must be a JSON object or a one-element array of objects")

    annotations = {k: document[k] for k in config.AGENT_ANNOTATION_FIELDS if k in document}
    design = {k: v for k, v in document.items() if k not in config.AGENT_ANNOTATION_FIELDS}
    try:
        validate_design(space, design)
    except DataError as e:
        raise ValueError(str(e)) from None
    return design, annotations


def agent_exchange(
    request: AgentRequest,
    transport: Transport,
    name_map: NameMap | None = None,
    max_retries: int = config.AGENT_MAX_RETRIES,
    clarification: str = DEFAULT_CLARIFICATION,
) -> AgentReply:
    """Send a request and return the parsed design in original names.

    Raises:
        ParseFailure: no usable reply after max_retries re-sends
        TransportFailure: the last attempt failed to reach the agent
    """
    last_error: Exception | None = None
    for attempt in range(max_retries + 1):
        try:
            text = transport.send(request)
        except TransportFailure as e:
            last_error = e
            logger.debug("Transport failure on attempt %d: %s", attempt + 1, e)
            continue

        try:
            design, annotations = parse_reply(text, request.space)
        except ValueError as e:
            last_error = e
            logger.debug("Unusable reply on attempt %d: %s", attempt + 1, e)
            request.clarification = render_template(clarification, {"error": str(e)})
            continue

        if name_map is not None:
            design = name_map.unmask_design(design)
        return AgentReply(design=design, retries_used=attempt, annotations=annotations, text=text)

    if isinstance(last_error, TransportFailure):
        raise TransportFailure(str(last_error), retries_used=max_retries)
    raise ParseFailure(f"no usable reply after {max_retries} retries: {last_error}", retries_used=max_retries)


# =============================================================================
# TRANSPORTS
# =============================================================================

class SubprocessTransport:
    """Line-delimited JSON over a child process's stdin/stdout."""

    def __init__(self, command: str | list[str]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self.process = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise TransportFailure(f"cannot start agent {argv[0]!r}: {e}") from e

    def send(self, request: AgentRequest) -> str:
        if self.process.poll() is not None:
            raise TransportFailure(f"agent process exited with code {self.process.returncode}")
        try:
            self.process.stdin.write(json.dumps(request.to_dict()) + "\n")
            self.process.stdin.flush()
            line = self.process.stdout.readline()
        except (BrokenPipeError, OSError) as e:
            raise TransportFailure(f"agent pipe broken: {e}") from e
        if not line:
            raise TransportFailure("agent closed its output")
        return line.rstrip("\n")

    def close(self) -> None:
        if self.process.poll() is None:
            self.process.stdin.close()
            try:
                self.process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.process.kill()


class HttpTransport:
    """POST the request document; the reply is the response body."""

    def __init__(self, url: str, timeout: float = config.AGENT_TIMEOUT_SECONDS):
        headers = {}
        api_key = os.environ.get(config.AGENT_API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.url = url
        self.client = httpx.Client(timeout=timeout, headers=headers)

    def send(self, request: AgentRequest) -> str:
        try:
            response = self.client.post(self.url, json=request.to_dict())
            response.raise_for_status()
        except httpx.HTTPError as e:
            raise TransportFailure(f"HTTP agent request failed: {e}") from e
        return response.text

    def close(self) -> None:
        self.client.close()


class Persona:
    """Prompt templates loaded from agents/<condition>.md."""

    def __init__(self, condition: str):
        agent_file = config.AGENTS_DIR / f"{condition}.md"
        if not agent_file.exists():
            raise ConfigError(f"Agent prompt file not found: {agent_file}")

        parsed = parse_agent_markdown(load_file(agent_file))
        self.condition = condition
        self.name = parsed["name"] or condition
        self.system_prompt = parsed["system_prompt"]
        self.history_prompt = parsed["history_prompt"]
        self.clarification = parsed["clarification"] or DEFAULT_CLARIFICATION

    def render_system(self, request: AgentRequest) -> str:
        aware = request.condition == "domain_aware"
        return render_template(self.system_prompt, {
            "task": request.task or "",
            "description": request.description or "",
            "objective": request.objective,
            "iterations_total": request.iterations_total,
            "fields": describe_space(request.space, show_units=aware),
        })

    def render_message(self, request: AgentRequest) -> str:
        if request.history:
            lines = [
                f"{h['iteration']}. {json.dumps(h['design'])} -> {format_float(h['score'])}"
                for h in request.history
            ]
            history = "\n".join(lines)
        else:
            history = "(no experiments yet)"
        message = render_template(self.history_prompt, {
            "history": history,
            "iteration": request.iteration,
            "iterations_total": request.iterations_total,
        })
        if request.clarification:
            message += f"\n\n{request.clarification}"
        return message


class MessagesTransport:
    """Anthropic Messages API: rendered system prompt plus one history message."""

    def __init__(
        self,
        condition: str,
        model: str | None = None,
        client: anthropic.Anthropic | None = None,
    ):
        self.persona = Persona(condition)
        self.model = model or config.DEFAULT_MODEL
        self.client = client or anthropic.Anthropic(api_key=config.ANTHROPIC_API_KEY)

    def send(self, request: AgentRequest) -> str:
        try:
            response = self.client.messages.create(
                model=self.model,
                max_tokens=config.MAX_TOKENS,
                system=self.persona.render_system(request),
                messages=[{"role": "user", "content": self.persona.render_message(request)}],
            )
        except anthropic.APIError as e:
            raise TransportFailure(f"Messages API request failed: {e}") from e
        return response.content[0].text

    def close(self) -> None:
        pass


class UnavailableTransport:
    """Transport that could not be started; every send fails with the start error."""

    def __init__(self, reason: str):
        self.reason = reason

    def send(self, request: AgentRequest) -> str:
        raise TransportFailure(self.reason)

    def close(self) -> None:
        pass


def make_transport(agent_settings: dict[str, Any], condition: str) -> Transport:
    kind = agent_settings.get("transport", "subprocess")
    if kind == "subprocess":
        if not agent_settings.get("command"):
            raise ConfigError("agent.command is required for the subprocess transport")
        return SubprocessTransport(agent_settings["command"])
    if kind == "http":
        if not agent_settings.get("url"):
            raise ConfigError("agent.url is required for the http transport")
        return HttpTransport(agent_settings["url"])
    if kind == "messages":
        return MessagesTransport(condition, model=agent_settings.get("model"))
    raise ConfigError(f"Unknown agent transport {kind!r}; expected subprocess, http or messages")


# =============================================================================
# OPTIMIZER ADAPTER
# =============================================================================

class AgentClient:
    """Optimizer that delegates each proposal to an external agent."""

    kind = "agent"

    def __init__(
        self,
        task: Task,
        transport: Transport,
        condition: str,
        iters: int,
        max_retries: int = config.AGENT_MAX_RETRIES,
        clarification: str = DEFAULT_CLARIFICATION,
    ):
        if condition not in config.CONDITIONS:
            raise ConfigError(f"Unknown condition {condition!r}")
        self.task = task
        self.transport = transport
        self.condition = condition
        self.iters = iters
        self.max_retries = max_retries
        persona = getattr(transport, "persona", None)
        if persona is not None and clarification == DEFAULT_CLARIFICATION:
            clarification = persona.clarification
        self.clarification = clarification
        if condition == "domain_agnostic":
            self.space, self.name_map = mask_space(task.space)
        else:
            self.space, self.name_map = task.space, None

    def build_request(self, history: list[Step]) -> AgentRequest:
        entries = []
        for i, step in enumerate(history, start=1):
            design = step.design
            if self.name_map is not None:
                design = self.name_map.mask_design(design)
            entries.append({"iteration": i, "design": design, "score": step.score})
        aware = self.condition == "domain_aware"
        return AgentRequest(
            condition=self.condition,
            space=self.space,
            objective=self.task.objective,
            history=entries,
            iteration=len(history) + 1,
            iterations_total=self.iters,
            task=self.task.name if aware else None,
            description=(self.task.description or None) if aware else None,
        )

    def propose(self, history: list[Step]) -> Proposal:
        reply = agent_exchange(
            self.build_request(history),
            self.transport,
            name_map=self.name_map,
            max_retries=self.max_retries,
            clarification=self.clarification,
        )
        return Proposal(raw=reply.design, retries_used=reply.retries_used, annotations=reply.annotations)

    def close(self) -> None:
        self.transport.close()
