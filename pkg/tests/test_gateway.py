from __future__ import annotations

import json
import time

import httpx
import pytest

from cmdtriage.gateway import (
    BatchGenerationError,
    CapabilityError,
    GenerationSample,
    HttpBackend,
    MockBackend,
    PromptRequest,
    RuleMissError,
    ScriptedRule,
    TokenProb,
    TransportError,
    build_backend,
    generate,
    generate_h,
    load_mock_rules,
)


# -- request / sample validation ----------------------------------------------


def test_empty_prompt_rejected():
    with pytest.raises(ValueError, match="non-empty"):
        PromptRequest(text="")


def test_bad_max_tokens_rejected():
    with pytest.raises(ValueError, match="max_tokens"):
        PromptRequest(text="x", max_tokens=0)


def test_bad_temperature_rejected():
    with pytest.raises(ValueError, match="temperature"):
        PromptRequest(text="x", temperature=float("inf"))


def test_token_prob_range_checked():
    with pytest.raises(ValueError, match="outside"):
        TokenProb(token="a", top=(("a", 0.0),))
    with pytest.raises(ValueError, match="exceeding 1"):
        TokenProb(token="a", top=(("a", 0.7), ("b", 0.7)))


def test_chosen_prob_lookup():
    tp = TokenProb(token="a", top=(("b", 0.4), ("a", 0.5)))
    assert tp.chosen_prob() == 0.5
    with pytest.raises(ValueError, match="missing"):
        TokenProb(token="z", top=(("a", 0.5),)).chosen_prob()


# -- scripted rules ------------------------------------------------------------


def test_rule_needs_responses():
    with pytest.raises(ValueError):
        ScriptedRule(match="x", responses=[])


def test_rule_conjunction_match():
    rule = ScriptedRule(match=["alpha", "beta"], responses=["r"])
    assert rule.matches("... alpha ... beta ...")
    assert not rule.matches("... alpha only ...")


def test_rule_regex_match():
    rule = ScriptedRule(match=r"pick .* bowl$", responses=["r"], regex=True)
    assert rule.matches("please pick the red bowl")
    assert not rule.matches("please pick the red block")


# -- mock backend ---------------------------------------------------------------


def test_scripted_identity():
    backend = MockBackend([ScriptedRule("pick the red block", ["robot.pick_and_place(red block, blue bowl)"])])
    sample = generate(PromptRequest(text="pick the red block"), backend)
    assert sample.text == "robot.pick_and_place(red block, blue bowl)"


def test_mock_determinism_across_fresh_backends():
    rules = [ScriptedRule("go", ["a", "b", "c"])]
    outs1 = [MockBackend(rules, seed=3).complete(PromptRequest(text=f"go {i}")).text for i in range(3)]
    backend = MockBackend([ScriptedRule("go", ["a", "b", "c"])], seed=3)
    outs2 = [backend.complete(PromptRequest(text=f"go {i}")).text for i in range(3)]
    fresh = MockBackend([ScriptedRule("go", ["a", "b", "c"])], seed=3)
    outs3 = [fresh.complete(PromptRequest(text=f"go {i}")).text for i in range(3)]
    assert outs2 == outs3 == ["a", "b", "c"]
    assert outs1 == ["a", "a", "a"]  # one fresh backend per call restarts the cycle


def test_first_matching_rule_wins():
    backend = MockBackend(
        [ScriptedRule("red", ["first"]), ScriptedRule("red block", ["second"])]
    )
    assert backend.complete(PromptRequest(text="the red block")).text == "first"


def test_rule_miss_signals_fixture_gap():
    backend = MockBackend([ScriptedRule("alpha", ["a"])])
    with pytest.raises(RuleMissError):
        backend.complete(PromptRequest(text="nothing matches this"))


def test_token_probs_without_capability_is_error():
    backend = MockBackend([ScriptedRule("go", ["a"])])
    with pytest.raises(CapabilityError):
        backend.complete(PromptRequest(text="go", want_token_probs=True))


def test_canned_probs_parsed():
    probs = [[{"token": "a", "top": [["a", 0.5], ["b", 0.5]]}]]
    backend = MockBackend([ScriptedRule("go", ["a"], canned_probs=probs)])
    sample = backend.complete(PromptRequest(text="go", want_token_probs=True))
    assert sample.token_probs is not None
    assert sample.token_probs[0].chosen_prob() == 0.5


def test_rule_without_probs_on_capable_backend_yields_none():
    probs = [[{"token": "a", "top": [["a", 1.0]]}]]
    backend = MockBackend(
        [
            ScriptedRule("alpha", ["a"], canned_probs=probs),
            ScriptedRule("beta", ["b"]),
        ]
    )
    sample = backend.complete(PromptRequest(text="beta probs", want_token_probs=True))
    assert sample.token_probs is None


def test_load_mock_rules(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps([{"match": "x", "responses": ["y"]}]))
    rules = load_mock_rules(path)
    assert rules[0].matches("say x now")


# -- generate_h ------------------------------------------------------------------


def test_generate_h_needs_two_variants():
    backend = MockBackend([ScriptedRule("go", ["a"])])
    with pytest.raises(ValueError, match="at least 2"):
        generate_h([PromptRequest(text="go")], backend)


def test_three_identical_mock_prompts():
    backend = MockBackend([ScriptedRule("go", ["same"])])
    samples = generate_h([PromptRequest(text="go")] * 3, backend)
    assert [s.text for s in samples] == ["same"] * 3


class InvertedLatencyBackend:
    """Completes later-submitted requests first; order must still hold."""

    backend_id = "stub"
    deterministic = False
    supports_token_probs = False

    def __init__(self, delays):
        self.delays = delays

    def complete(self, request: PromptRequest) -> GenerationSample:
        index = int(request.text.split()[-1])
        time.sleep(self.delays[index])
        return GenerationSample(text=f"answer {index}", backend_id=self.backend_id)


def test_order_preserved_under_latency_inversion():
    backend = InvertedLatencyBackend(delays=[0.2, 0.0])
    samples = generate_h(
        [PromptRequest(text="variant 0"), PromptRequest(text="variant 1")], backend
    )
    assert [s.text for s in samples] == ["answer 0", "answer 1"]


def test_batch_failure_identifies_index():
    backend = MockBackend([ScriptedRule("good", ["a"])])
    with pytest.raises(BatchGenerationError) as err:
        generate_h(
            [PromptRequest(text="good"), PromptRequest(text="bad"), PromptRequest(text="good")],
            backend,
        )
    assert err.value.index == 1


# -- http backend -----------------------------------------------------------------


def chat_response(content, logprobs=None):
    choice = {"message": {"role": "assistant", "content": content}}
    if logprobs is not None:
        choice["logprobs"] = logprobs
    return {"choices": [choice]}


def test_http_backend_reads_first_choice():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["payload"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json=chat_response("robot.pick_and_place(a, b)"))

    backend = HttpBackend(
        "http://fake/v1",
        model="test-model",
        api_key="sekrit",
        transport=httpx.MockTransport(handler),
    )
    sample = backend.complete(
        PromptRequest(text="hello", temperature=0.5, max_tokens=16, stop_markers=("\n\n",))
    )
    assert sample.text == "robot.pick_and_place(a, b)"
    assert seen["payload"]["model"] == "test-model"
    assert seen["payload"]["temperature"] == 0.5
    assert seen["payload"]["stop"] == ["\n\n"]
    assert seen["auth"] == "Bearer sekrit"
    assert sample.latency_ms >= 0.0


def test_http_backend_retries_then_succeeds():
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        if calls["n"] < 3:
            raise httpx.ConnectError("boom", request=request)
        return httpx.Response(200, json=chat_response("ok"))

    backend = HttpBackend(
        "http://fake", model="m", backoff_s=0.001, transport=httpx.MockTransport(handler)
    )
    assert backend.complete(PromptRequest(text="x")).text == "ok"
    assert calls["n"] == 3


def test_http_backend_surfaces_attempt_count():
    def handler(request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("down", request=request)

    backend = HttpBackend(
        "http://fake", model="m", backoff_s=0.001, transport=httpx.MockTransport(handler)
    )
    with pytest.raises(TransportError, match="after 3 attempts") as err:
        backend.complete(PromptRequest(text="x"))
    assert err.value.attempts == 3


def test_http_backend_parses_logprobs():
    import math

    logprobs = {
        "content": [
            {
                "token": "hi",
                "logprob": math.log(0.8),
                "top_logprobs": [
                    {"token": "hi", "logprob": math.log(0.8)},
                    {"token": "yo", "logprob": math.log(0.2)},
                ],
            }
        ]
    }

    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json=chat_response("hi", logprobs=logprobs))

    backend = HttpBackend("http://fake", model="m", transport=httpx.MockTransport(handler))
    sample = backend.complete(PromptRequest(text="x", want_token_probs=True))
    assert sample.token_probs[0].chosen_prob() == pytest.approx(0.8)


def test_http_backend_missing_logprobs_is_capability_error():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json=chat_response("hi"))

    backend = HttpBackend("http://fake", model="m", transport=httpx.MockTransport(handler))
    with pytest.raises(CapabilityError):
        backend.complete(PromptRequest(text="x", want_token_probs=True))


def test_declared_probless_backend_refuses_upfront():
    backend = HttpBackend(
        "http://fake",
        model="m",
        supports_token_probs=False,
        transport=httpx.MockTransport(lambda r: httpx.Response(200, json=chat_response("x"))),
    )
    with pytest.raises(CapabilityError):
        backend.complete(PromptRequest(text="x", want_token_probs=True))


# -- build_backend ------------------------------------------------------------------


def test_build_mock_backend(tmp_path):
    rules = tmp_path / "rules.json"
    rules.write_text(json.dumps([{"match": "x", "responses": ["y"]}]))
    backend = build_backend({"kind": "mock", "rules_path": "rules.json"}, base_dir=tmp_path)
    assert backend.complete(PromptRequest(text="x")).text == "y"


def test_build_http_backend_requires_env_key(monkeypatch):
    monkeypatch.delenv("TEST_API_KEY", raising=False)
    from cmdtriage.gateway import GatewayError

    with pytest.raises(GatewayError, match="TEST_API_KEY"):
        build_backend(
            {
                "kind": "http",
                "base_url": "http://api",
                "model_name": "m",
                "api_key_env_var": "TEST_API_KEY",
            }
        )
    monkeypatch.setenv("TEST_API_KEY", "k")
    backend = build_backend(
        {
            "kind": "http",
            "base_url": "http://api",
            "model_name": "m",
            "api_key_env_var": "TEST_API_KEY",
        }
    )
    assert backend.backend_id == "http:m"
