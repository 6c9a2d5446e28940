import io
import json
import threading
import time

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from docwarmer.llm import (
    TEMPLATES,
    BackendReply,
    EchoBackend,
    GeminiBackend,
    Gateway,
    OpenAIChatBackend,
    PromptState,
    RateLimitError,
    ScriptedBackend,
    ScriptMiss,
    SimulatedBackend,
    TemplateError,
    TransportError,
    encode_image,
    make_backend,
    parse_answer,
    parse_yes_no,
    render_prompt,
    required_slots,
)

BASE = {"context": "Name: Ann\nDate: 1 May", "target": "form", "question": "What is the date?"}


def state(template, tips=(), boxes=(), **extra):
    return PromptState(template, {**BASE, **extra}, tips=tuple(tips), tip_boxes=tuple(boxes), doc_id="d")


class Flaky:
    backend_id = "flaky"

    def __init__(self, failures, exc=TransportError):
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def generate(self, payload):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc("boom")
        return "Answer: ok"


# ---------------------------------------------------------------- rendering


def test_one_tip_hedge():
    text = render_prompt(state("one_tip", ["27,210"])).text
    assert "'27,210' (which may not be correct)" in text


def test_no_tips_has_no_tips_section():
    text = render_prompt(state("no_tips")).text
    assert "Tip" not in text and "Answer: xxx" in text


def test_multi_tips_in_order():
    text = render_prompt(state("multi_tips", ["c", "a", "b"])).text
    assert "1. 'c'\n2. 'a'\n3. 'b'" in text


def test_bbox_templates_attach_overlays():
    p = render_prompt(state("bbox_multi_tips", ["x", "y"], [(1, 2, 3, 4), (5, 6, 7, 8)]))
    assert "'x' at [1, 2, 3, 4], 'y' at [5, 6, 7, 8]" in p.text
    assert p.overlay_boxes == ((1, 2, 3, 4), (5, 6, 7, 8))
    assert render_prompt(state("multi_tips", ["x"], [(1, 2, 3, 4)])).overlay_boxes == ()


def test_missing_slot_named():
    with pytest.raises(TemplateError, match="question"):
        render_prompt(PromptState("no_tips", {"context": "c", "target": "t"}))
    with pytest.raises(TemplateError, match="tips"):
        render_prompt(state("one_tip"))
    with pytest.raises(TemplateError):
        required_slots("nope")


def test_every_template_renders():
    slots = {s for t in TEMPLATES for s in required_slots(t)}
    full = {s: s.upper() for s in slots}
    for t in TEMPLATES:
        p = render_prompt(PromptState(t, full, tips=("tip",)))
        assert "$" not in p.text


@given(st.lists(st.text(min_size=1, max_size=10), min_size=1, max_size=5))
def test_render_is_pure_and_contains_tips(tips):
    s = state("multi_tips", tips)
    a, b = render_prompt(s), render_prompt(s)
    assert a == b
    assert all(t in a.text for t in tips)


def test_digest_depends_on_tips_and_slots():
    a = render_prompt(state("one_tip", ["x"]))
    assert a.key.startswith("one_tip:") and len(a.digest) == 16
    assert a.digest != render_prompt(state("one_tip", ["y"])).digest
    assert a.digest != render_prompt(state("one_tip", ["x"], question="other")).digest


def test_image_capped_and_overlaid(tmp_path):
    from PIL import Image

    path = tmp_path / "page.png"
    Image.new("RGB", (3000, 1000), "white").save(path)
    plain = Image.open(io.BytesIO(encode_image(str(path))))
    assert max(plain.size) == 1536
    boxed = Image.open(io.BytesIO(encode_image(str(path), [(0, 0, 500, 500)])))
    assert boxed.getpixel((0, 0))[0] > boxed.getpixel((0, 0))[1]


# ---------------------------------------------------------------- parsing


@pytest.mark.parametrize("reply,want", [
    ("Answer: 27,210", "27,210"),
    ("blah\nAnswer: X\nAnswer: Y", "Y"),
    ("no marker here", "no marker here"),
    ("  answer:   spaced  ", "spaced"),
    ("Answer:", ""),
])
def test_parse_answer(reply, want):
    assert parse_answer(reply) == want
    assert parse_answer(BackendReply(reply, 0.0, "x", 1)) == want


@pytest.mark.parametrize("reply,want", [
    ('{"Response": "Yes", "Explanation": "ok"}', True),
    ("{'Response': 'No', 'Explanation': 'template text'}", False),
    ('"Response": "Yes"', True),
    ('"Response": "No"', False),
    ("YES.", True),
    ("yes, it is", True),
    ("It depends", False),
    ("maybe", False),
    ('{"Explanation": "missing"}', False),
    ("", False),
])
def test_parse_yes_no(reply, want):
    assert parse_yes_no(reply) is want


# ---------------------------------------------------------------- backends


def test_scripted_backend_roundtrip(tmp_path):
    mock = ScriptedBackend({})
    s = state("no_tips")
    mock.add(s, "Answer: 1 May")
    path = tmp_path / "script.json"
    mock.to_file(path)
    again = ScriptedBackend.from_file(path)
    payload = render_prompt(s)
    assert again.generate(payload) == again.generate(payload) == "Answer: 1 May"
    with pytest.raises(ScriptMiss):
        again.generate(render_prompt(state("no_tips", question="other")))


def test_scripted_echo_on_miss_and_default():
    mock = ScriptedBackend({}, default="Answer: ?", echo_tips_on_miss=True)
    assert mock.generate(render_prompt(state("one_tip", ["tip"]))) == "Answer: tip"
    assert mock.generate(render_prompt(state("no_tips"))) == "Answer: ?"


def test_echo_backend_is_identity_on_tip():
    for tip in ["27,210", "JOHN SMITH", "a  b"]:
        assert parse_answer(EchoBackend().generate(render_prompt(state("one_tip", [tip])))) == tip
    assert parse_answer(EchoBackend("V").generate(render_prompt(state("no_tips")))) == "V"


def test_simulated_backend_rates():
    golds = {("d", f"q{i}"): "gold" for i in range(2000)}
    sim = SimulatedBackend(golds, {"d": ["gold", "other", "third"]}, 0.5, 0.9, seed=1)
    plain = hinted = 0
    for i in range(2000):
        s = PromptState("no_tips", {**BASE, "question": f"q{i}"}, doc_id="d")
        plain += parse_answer(sim.generate(render_prompt(s))) == "gold"
        hinted += parse_answer(sim.generate(render_prompt(s.with_tips("multi_tips", ["other", "gold"])))) == "gold"
    assert abs(plain / 2000 - 0.5) < 0.05
    assert abs(hinted / 2000 - 0.9) < 0.03
    with pytest.raises(ScriptMiss):
        sim.generate(render_prompt(state("no_tips", question="unknown")))


def test_make_backend_kinds(tmp_path):
    assert isinstance(make_backend({"id": "echo"}), EchoBackend)
    assert isinstance(make_backend({"id": "mock", "default": "x"}), ScriptedBackend)
    with pytest.raises(ValueError):
        make_backend({"id": "carrier-pigeon"})


# ---------------------------------------------------------------- gateway


def test_retry_then_success():
    sleeps = []
    gw = Gateway(Flaky(1), retries=3, backoff_base=1.0, sleep=sleeps.append)
    reply = gw.ask(state("no_tips"))
    assert reply.attempts == 2 and reply.raw_text == "Answer: ok" and reply.backend_id == "flaky"
    assert sleeps == [1.0]


def test_exhausted_retries_raise_transport_error():
    sleeps = []
    backend = Flaky(3)
    gw = Gateway(backend, retries=3, backoff_base=1.0, sleep=sleeps.append)
    with pytest.raises(TransportError, match="3 attempts"):
        gw.ask(state("no_tips"))
    assert backend.calls == 3 and sleeps == [1.0, 2.0]


def test_rate_limit_retry_after_honoured():
    sleeps = []

    class Limited(Flaky):
        def generate(self, payload):
            self.calls += 1
            if self.calls == 1:
                raise RateLimitError("429", retry_after=7.0)
            return "Answer: ok"

    Gateway(Limited(0), sleep=sleeps.append).ask(state("no_tips"))
    assert sleeps == [7.0]


def test_script_miss_not_retried():
    backend = Flaky(5, exc=ScriptMiss)
    with pytest.raises(ScriptMiss):
        Gateway(backend, sleep=lambda s: None).ask(state("no_tips"))
    assert backend.calls == 1


def test_rate_limiter_spaces_requests():
    now = [0.0]
    sleeps = []

    def sleep(s):
        sleeps.append(s)
        now[0] += s

    gw = Gateway(EchoBackend(), rate_limit_per_s=4.0, sleep=sleep, clock=lambda: now[0])
    for _ in range(3):
        gw.ask(state("no_tips"))
    assert sleeps == [0.25, 0.25]


def test_in_flight_cap():
    active, peak = [0], [0]
    lock = threading.Lock()

    class Slow:
        backend_id = "slow"

        def generate(self, payload):
            with lock:
                active[0] += 1
                peak[0] = max(peak[0], active[0])
            time.sleep(0.02)
            with lock:
                active[0] -= 1
            return "Answer: x"

    gw = Gateway(Slow(), max_in_flight=2)
    threads = [threading.Thread(target=gw.ask, args=(state("no_tips"),)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] == 2


def test_gateway_rejects_zero_budget():
    with pytest.raises(ValueError):
        Gateway(EchoBackend(), retries=0)


# ---------------------------------------------------------------- HTTP wire formats


def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_openai_wire_format(tmp_path):
    from PIL import Image

    img = tmp_path / "p.png"
    Image.new("RGB", (20, 10), "white").save(img)
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "Answer: 5"}}]})

    b = OpenAIChatBackend("gpt-x", "sk-test", "http://llm.local/v1", client=_client(handler))
    s = PromptState("no_tips", BASE, image_ref=str(img))
    assert b.generate(render_prompt(s)) == "Answer: 5"
    assert seen["url"] == "http://llm.local/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["temperature"] == 0
    content = seen["body"]["messages"][0]["content"]
    assert content[0]["image_url"]["url"].startswith("data:image/png;base64,")
    assert content[1]["text"] == render_prompt(s).text


def test_gemini_wire_format():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["key"] = request.headers["x-goog-api-key"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"candidates": [{"content": {"parts": [{"text": "Answer: "}, {"text": "7"}]}}]})

    b = GeminiBackend("gem", "g-key", "http://g.local/v1beta", client=_client(handler))
    assert b.generate(render_prompt(state("no_tips"))) == "Answer: 7"
    assert seen["url"] == "http://g.local/v1beta/models/gem:generateContent"
    assert seen["key"] == "g-key"
    assert seen["body"]["generationConfig"]["temperature"] == 0
    assert seen["body"]["contents"][0]["parts"] == [{"text": render_prompt(state("no_tips")).text}]


@pytest.mark.parametrize("status,exc", [(429, RateLimitError), (503, TransportError), (400, ValueError)])
def test_http_errors_mapped(status, exc):
    def handler(request):
        return httpx.Response(status, headers={"retry-after": "3"}, text="nope")

    b = OpenAIChatBackend("m", "k", "http://x", client=_client(handler))
    with pytest.raises(exc) as info:
        b.generate(render_prompt(state("no_tips")))
    if status == 429:
        assert info.value.retry_after == 3.0


def test_http_bad_shape_and_connection_error():
    b = OpenAIChatBackend("m", "k", "http://x", client=_client(lambda r: httpx.Response(200, json={"oops": 1})))
    with pytest.raises(TransportError, match="shape"):
        b.generate(render_prompt(state("no_tips")))

    def boom(request):
        raise httpx.ConnectError("down")

    b = GeminiBackend("m", "k", "http://x", client=_client(boom))
    with pytest.raises(TransportError):
        b.generate(render_prompt(state("no_tips")))


def test_api_key_from_environment(monkeypatch):
    monkeypatch.setenv("MY_TEST_KEY", "secret")
    b = make_backend({"id": "openai", "model": "m", "api_key_env": "MY_TEST_KEY"})
    assert b.api_key == "secret"
