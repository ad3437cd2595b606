"""Tests for the agent protocol: reply parsing, retries, masking and transports."""

import json
import sys
from types import SimpleNamespace

import httpx
import pytest

from src.agent import (
    AgentClient,
    AgentRequest,
    HttpTransport,
    MessagesTransport,
    Persona,
    SubprocessTransport,
    agent_exchange,
    describe_field,
    make_transport,
    parse_reply,
)
from src.errors import ConfigError, ParseFailure, TransportFailure
from src.space import mask_space
from src.trajectory import Step


class ScriptedTransport:
    """Replies from a fixed list; raises TransportFailure for None entries."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def send(self, request):
        self.requests.append(AgentRequest(**{**request.__dict__}))
        reply = self.replies.pop(0)
        if reply is None:
            raise TransportFailure("connection reset")
        return reply

    def close(self):
        pass


def request_for(space, condition="domain_aware"):
    return AgentRequest(
        condition=condition,
        space=space,
        objective="maximize",
        history=[],
        iteration=1,
        iterations_total=5,
    )


class TestParseReply:
    def test_single_object(self, mixed_space):
        design, annotations = parse_reply('{"temperature": 40, "solvent": "water", "time": 1}', mixed_space)
        assert design == {"temperature": 40, "solvent": "water", "time": 1}
        assert annotations == {}

    def test_one_element_array_with_annotations(self, mixed_space):
        text = json.dumps([{"temperature": 40, "hypothesis_name": "warm", "rationale": "faster kinetics"}])
        design, annotations = parse_reply(text, mixed_space)
        assert design == {"temperature": 40}
        assert annotations == {"hypothesis_name": "warm", "rationale": "faster kinetics"}

    @pytest.mark.parametrize(
        "text",
        [
            "Sure! {\"temperature\": 40}",
            "[]",
            '[{"temperature": 40}, {"temperature": 50}]',
            '"temperature"',
            '{"pressure": 3}',
            '{"solvent": "acetone"}',
        ],
    )
    def test_unusable_replies(self, mixed_space, text):
        with pytest.raises(ValueError):
            parse_reply(text, mixed_space)


class TestAgentExchange:
    def test_retry_then_success(self, mixed_space):
        transport = ScriptedTransport(["not json", '{"temperature": 30}'])
        reply = agent_exchange(request_for(mixed_space), transport, max_retries=2)
        assert reply.design == {"temperature": 30}
        assert reply.retries_used == 1
        assert transport.requests[0].clarification is None
        assert "could not be used" in transport.requests[1].clarification

    def test_parse_failure_after_budget(self, mixed_space):
        transport = ScriptedTransport(["no", "still no", "never"])
        with pytest.raises(ParseFailure) as excinfo:
            agent_exchange(request_for(mixed_space), transport, max_retries=2)
        assert excinfo.value.retries_used == 2

    def test_transport_failure_after_budget(self, mixed_space):
        transport = ScriptedTransport([None, None])
        with pytest.raises(TransportFailure):
            agent_exchange(request_for(mixed_space), transport, max_retries=1)

    def test_masked_reply_is_unmasked(self, mixed_space):
        masked, name_map = mask_space(mixed_space)
        transport = ScriptedTransport(['[{"X1": 25.0, "C1": "B", "X2": 9.0}]'])
        reply = agent_exchange(request_for(masked, "domain_agnostic"), transport, name_map=name_map)
        assert reply.design == {"temperature": 25.0, "solvent": "ethanol", "time": 9.0}

    def test_original_names_rejected_under_mask(self, mixed_space):
        masked, name_map = mask_space(mixed_space)
        transport = ScriptedTransport(['{"temperature": 25.0}'])
        with pytest.raises(ParseFailure):
            agent_exchange(request_for(masked, "domain_agnostic"), transport, name_map=name_map, max_retries=0)


class TestAgentClient:
    def test_agnostic_request_hides_semantics(self, quadratic_task):
        client = AgentClient(quadratic_task, ScriptedTransport([]), "domain_agnostic", iters=5)
        history = [Step(raw={}, design={"temperature": 30.0, "solvent": "dmso"}, score=2.5)]
        request = client.build_request(history)
        document = json.dumps(request.to_dict())
        assert "temperature" not in document
        assert "quadratic" not in document
        assert request.history == [{"iteration": 1, "design": {"X1": 30.0, "C1": "C"}, "score": 2.5}]
        assert request.iteration == 2

    def test_aware_request_names_the_task(self, quadratic_task):
        client = AgentClient(quadratic_task, ScriptedTransport([]), "domain_aware", iters=5)
        request = client.build_request([])
        assert request.task == "quadratic"
        assert request.space.names == ["temperature", "solvent", "time"]

    def test_unknown_condition(self, quadratic_task):
        with pytest.raises(ConfigError):
            AgentClient(quadratic_task, ScriptedTransport([]), "none", iters=5)


class TestPersona:
    def test_field_descriptions(self, mixed_space):
        assert describe_field(mixed_space.get("temperature"), show_units=True) == "temperature (number: 20--80 C)"
        assert describe_field(mixed_space.get("temperature"), show_units=False) == "temperature (number: 20--80)"
        assert describe_field(mixed_space.get("solvent"), show_units=False) == (
            'solvent (string: "water", "ethanol", or "dmso")'
        )

    def test_rendered_prompts(self, mixed_space):
        persona = Persona("domain_aware")
        request = request_for(mixed_space)
        request.task = "quadratic"
        system = persona.render_system(request)
        assert '"quadratic"' in system
        assert "temperature (number: 20--80 C)" in system
        assert "{{" not in system
        message = persona.render_message(request)
        assert "(no experiments yet)" in message
        assert "experiment 1 of 5" in message

    def test_missing_persona_file(self):
        with pytest.raises(ConfigError):
            Persona("no_such_condition")


class TestTransports:
    def test_messages_transport(self, mixed_space):
        calls = []

        def create(**kwargs):
            calls.append(kwargs)
            return SimpleNamespace(content=[SimpleNamespace(text='{"temperature": 50}')])

        client = SimpleNamespace(messages=SimpleNamespace(create=create))
        transport = MessagesTransport("domain_agnostic", model="test-model", client=client)
        assert transport.send(request_for(mixed_space, "domain_agnostic")) == '{"temperature": 50}'
        assert calls[0]["model"] == "test-model"
        assert calls[0]["messages"][0]["role"] == "user"

    def test_http_transport(self, mixed_space):
        seen = []

        def handler(request: httpx.Request) -> httpx.Response:
            seen.append(json.loads(request.content))
            return httpx.Response(200, text='[{"time": 2}]')

        transport = HttpTransport("http://agent.test/propose")
        transport.client = httpx.Client(transport=httpx.MockTransport(handler))
        assert transport.send(request_for(mixed_space)) == '[{"time": 2}]'
        assert seen[0]["protocol"] == "design-loop-agent/1"
        assert seen[0]["space"][0]["name"] == "temperature"
        transport.close()

    def test_http_error_is_transport_failure(self, mixed_space):
        transport = HttpTransport("http://agent.test/propose")
        transport.client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503)))
        with pytest.raises(TransportFailure):
            transport.send(request_for(mixed_space))

    def test_subprocess_transport(self, mixed_space, tmp_path):
        script = tmp_path / "agent.py"
        script.write_text(
            "import json, sys\n"
            "for line in sys.stdin:\n"
            "    request = json.loads(line)\n"
            "    print(json.dumps({'time': request['iteration']}), flush=True)\n",
            encoding="utf-8",
        )
        transport = SubprocessTransport([sys.executable, str(script)])
        try:
            assert json.loads(transport.send(request_for(mixed_space))) == {"time": 1}
        finally:
            transport.close()

    def test_make_transport_requires_endpoint(self):
        with pytest.raises(ConfigError):
            make_transport({"transport": "subprocess"}, "domain_aware")
        with pytest.raises(ConfigError):
            make_transport({"transport": "http"}, "domain_aware")
        with pytest.raises(ConfigError):
            make_transport({"transport": "carrier-pigeon"}, "domain_aware")
