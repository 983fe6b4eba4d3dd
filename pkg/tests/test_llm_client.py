import json
import threading

import httpx
import pytest

from sdoh_forge.corpus import Label
from sdoh_forge.errors import AuthFailure, ConfigError, CorruptCheckpoint, EndpointUnreachable
from sdoh_forge.llm_client import (
    ABSTAIN,
    ClientConfig,
    MockAnnotatorConfig,
    MockBackend,
    RateLimiter,
    RemoteBackend,
    UsageLedger,
    annotate_batch,
    checkpoint_resume,
    estimate_cost,
    format_dollars,
    read_checkpoint,
    write_checkpoint,
)
from sdoh_forge.prompt import ZERO_SHOTS, PromptSpec, RenderedPrompt


def spec_builder(cfg):
    return lambda _id, text: PromptSpec(cfg, ZERO_SHOTS, text)


def mock(cfg, eps=0.0, seed=0):
    return MockBackend(MockAnnotatorConfig(cfg.mock_rules, eps, seed), cfg)


ITEMS = [(f"id{i}", t) for i, t in enumerate(
    ["Smokes 1ppd", "Never smoker.", "Lives alone.", "Chews tobacco.", "Non-smoker, retired."])]


# mock -----------------------------------------------------------------------

def test_mock_rule_match(tobacco_cfg):
    anns, _ = annotate_batch([("a", "Smokes 1ppd")], spec_builder(tobacco_cfg), mock(tobacco_cfg),
                             tobacco_cfg, "zero_shot")
    assert anns[0].label == "POSITIVE"


def test_mock_full_flip(tobacco_cfg):
    clean = mock(tobacco_cfg, 0.0)
    flipped = mock(tobacco_cfg, 1.0)
    for item_id, text in ITEMS:
        assert flipped.label(item_id, text) is clean.rule_label(text).flipped()
        assert clean.label(item_id, text) is clean.rule_label(text)


def test_mock_flip_rate_binomial(tobacco_cfg):
    backend = mock(tobacco_cfg, 0.5, seed=11)
    flips = sum(backend.flips(f"n{i}") for i in range(10_000))
    assert abs(flips - 5000) <= 150


def test_mock_order_and_concurrency_independent(tobacco_cfg):
    items = [(f"x{i}", ITEMS[i % 5][1]) for i in range(200)]
    a, _ = annotate_batch(items, spec_builder(tobacco_cfg), mock(tobacco_cfg, 0.3), tobacco_cfg, "s")
    b, _ = annotate_batch(items[::-1], spec_builder(tobacco_cfg), mock(tobacco_cfg, 0.3), tobacco_cfg, "s",
                          max_in_flight=8)
    assert [x.to_json() for x in a] == [x.to_json() for x in b[::-1]]


def test_mock_config_validation(tobacco_cfg):
    with pytest.raises(ConfigError):
        MockAnnotatorConfig([], 0.0)
    with pytest.raises(ConfigError):
        MockAnnotatorConfig(tobacco_cfg.mock_rules, 1.5)


# ledger and cost ------------------------------------------------------------

def test_cost_arithmetic():
    led = UsageLedger()
    led.record("tobacco", 10_000, 2_000, 1, 1)
    cost = estimate_cost(led, (0.50, 1.50))
    assert cost == 0.008
    assert format_dollars(cost) == "$0.0080"
    assert format_dollars(estimate_cost(UsageLedger(), (0.5, 1.5))) == "$0.0000"


def test_cost_rounds_half_even():
    assert format_dollars(0.00005) == "$0.0000"
    assert format_dollars(0.00015) == "$0.0002"


def test_cost_rejects_negative_rates():
    with pytest.raises(ConfigError):
        estimate_cost(UsageLedger(), (-1, 0))


def test_ledger_totals_equal_category_sum():
    led = UsageLedger()
    led.record("a", 5, 1, 1, 1)
    led.record("b", 7, 2, 2, 1)
    led.record("a", 1, 1, 1, 1)
    assert (led.prompt_tokens, led.completion_tokens, led.requests, led.annotations) == (13, 4, 4, 3)
    back = UsageLedger.from_json(json.loads(json.dumps(led.to_json())))
    assert back.to_json() == led.to_json()


def test_ledger_thread_safe():
    led = UsageLedger()
    threads = [threading.Thread(target=lambda: [led.record("c", 1, 1, 1, 1) for _ in range(1000)])
               for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert led.prompt_tokens == 8000


# remote ---------------------------------------------------------------------

def completion(content, pt=12, ct=1):
    return httpx.Response(200, json={
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": pt, "completion_tokens": ct},
    })


def remote(handler, **cfg):
    config = ClientConfig(base_url="http://llm.test", max_attempts=cfg.pop("max_attempts", 3), **cfg)
    return RemoteBackend(config, api_key="k", transport=httpx.MockTransport(handler), sleep=lambda s: None)


def test_remote_wire_format(tobacco_cfg):
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return completion("Yes")

    anns, led = annotate_batch([("a", "smokes")], spec_builder(tobacco_cfg), remote(handler), tobacco_cfg, "z")
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    assert seen["body"]["temperature"] == 0 and seen["body"]["model"] == "gpt-3.5-turbo"
    assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]
    assert anns[0].label == "POSITIVE"
    assert (led.prompt_tokens, led.completion_tokens, led.requests) == (12, 1, 1)


def test_remote_retries_then_succeeds(tobacco_cfg):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else completion("No")

    anns, led = annotate_batch([("a", "x")], spec_builder(tobacco_cfg), remote(handler), tobacco_cfg, "z")
    assert anns[0].label == "NEGATIVE"
    assert led.requests == 3


def test_remote_backoff_is_exponential():
    waits = []
    cfg = ClientConfig(base_url="http://llm.test", max_attempts=4, backoff_base=0.5)
    backend = RemoteBackend(cfg, api_key="k", sleep=waits.append,
                            transport=httpx.MockTransport(lambda r: httpx.Response(429)))
    with pytest.raises(Exception, match="unreachable after 4 attempts"):
        backend.complete(RenderedPrompt((), ""), "a", "t")
    assert waits == [0.5, 1.0, 2.0]


def test_remote_unreachable_checkpoints(tobacco_cfg, tmp_path):
    n = {"calls": 0}

    def handler(request):
        n["calls"] += 1
        if n["calls"] <= 2:
            return completion("Yes")
        raise httpx.ConnectError("refused")

    ckpt = tmp_path / "c.jsonl"
    items = [("a", "x"), ("b", "y"), ("c", "z")]
    with pytest.raises(EndpointUnreachable) as exc:
        annotate_batch(items, spec_builder(tobacco_cfg), remote(handler), tobacco_cfg, "z",
                       checkpoint_path=ckpt)
    assert exc.value.checkpoint_path == ckpt
    assert [a.note_id for a in read_checkpoint(ckpt)] == ["a", "b"]
    assert checkpoint_resume(ckpt, items) == [("c", "z")]


def test_auth_failure_aborts(tobacco_cfg):
    with pytest.raises(AuthFailure):
        annotate_batch([("a", "x")], spec_builder(tobacco_cfg),
                       remote(lambda r: httpx.Response(401)), tobacco_cfg, "z")


def test_client_error_abstains(tobacco_cfg):
    anns, _ = annotate_batch([("a", "x")], spec_builder(tobacco_cfg),
                             remote(lambda r: httpx.Response(400, json={"error": "bad"})), tobacco_cfg, "z")
    assert anns[0].label == ABSTAIN


def test_parse_retry_then_abstain(tobacco_cfg):
    bodies = []

    def handler(request):
        bodies.append(json.loads(request.content)["messages"][1]["content"])
        return completion("Maybe.")

    anns, led = annotate_batch([("a", "x")], spec_builder(tobacco_cfg), remote(handler), tobacco_cfg, "z")
    assert anns[0].label == ABSTAIN
    assert len(bodies) == 2 and bodies[1].endswith("\nAnswer with exactly Yes or No.")
    assert led.requests == 2 and led.prompt_tokens == 24


def test_parse_retry_recovers(tobacco_cfg):
    replies = iter(["Hmm.", "Yes"])
    anns, _ = annotate_batch([("a", "x")], spec_builder(tobacco_cfg),
                             remote(lambda r: completion(next(replies))), tobacco_cfg, "z")
    assert anns[0].label == "POSITIVE"


def test_missing_api_key(monkeypatch):
    monkeypatch.delenv("SDOH_FORGE_API_KEY", raising=False)
    with pytest.raises(ConfigError):
        RemoteBackend(ClientConfig())


def test_temperature_pinned():
    with pytest.raises(ConfigError):
        ClientConfig(temperature=0.7)


def test_rate_limiter_window():
    now = [0.0]
    issued = []

    def sleep(s):
        now[0] += s

    lim = RateLimiter(3, clock=lambda: now[0], sleep=sleep)
    for _ in range(10):
        lim.acquire()
        issued.append(now[0])
        now[0] += 1.0
    for t in issued:
        assert sum(t <= u < t + 60 for u in issued) <= 3


# checkpoints ----------------------------------------------------------------

def test_resume_after_interrupt(tobacco_cfg, tmp_path):
    ckpt = tmp_path / "ck.jsonl"
    full, full_led = annotate_batch(ITEMS, spec_builder(tobacco_cfg), mock(tobacco_cfg), tobacco_cfg, "s")
    annotate_batch(ITEMS[:3], spec_builder(tobacco_cfg), mock(tobacco_cfg), tobacco_cfg, "s", checkpoint_path=ckpt)
    assert len(checkpoint_resume(ckpt, ITEMS)) == 2

    calls = []

    class Counting(MockBackend):
        def complete(self, prompt, item_id, text):
            calls.append(item_id)
            return super().complete(prompt, item_id, text)

    backend = Counting(MockAnnotatorConfig(tobacco_cfg.mock_rules), tobacco_cfg)
    resumed, led = annotate_batch(ITEMS, spec_builder(tobacco_cfg), backend, tobacco_cfg, "s", checkpoint_path=ckpt)
    assert sorted(calls) == ["id3", "id4"]
    assert [a.to_json() for a in resumed] == [a.to_json() for a in full]
    assert (led.prompt_tokens, led.completion_tokens, led.annotations) == (
        full_led.prompt_tokens, full_led.completion_tokens, full_led.annotations)
    assert checkpoint_resume(ckpt, ITEMS) == []


def test_tampered_checkpoint(tobacco_cfg, tmp_path):
    ckpt = tmp_path / "ck.jsonl"
    anns, _ = annotate_batch(ITEMS, spec_builder(tobacco_cfg), mock(tobacco_cfg), tobacco_cfg, "s")
    write_checkpoint(ckpt, anns)
    text = ckpt.read_text().replace("POSITIVE", "NEGATIVE", 1)
    ckpt.write_text(text)
    with pytest.raises(CorruptCheckpoint):
        read_checkpoint(ckpt)
    ckpt.write_text("")
    with pytest.raises(CorruptCheckpoint):
        checkpoint_resume(ckpt, ITEMS)


def test_ledger_conservation(tobacco_cfg):
    replies = iter(["Yes", "No", "Yes", "Unsure", "No", "No"])
    anns, led = annotate_batch(ITEMS, spec_builder(tobacco_cfg),
                               remote(lambda r: completion(next(replies), pt=10, ct=2)), tobacco_cfg, "z")
    assert sum(a.prompt_tokens for a in anns) == led.prompt_tokens
    assert sum(a.completion_tokens for a in anns) == led.completion_tokens
    assert sum(a.requests for a in anns) == led.requests == 6
    assert Label(anns[0].label) is Label.POSITIVE
