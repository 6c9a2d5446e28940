"""Prompt templates and a uniform client for generative backends.

Backends implement ``generate(payload) -> str`` and signal failures with
:class:`TransportError` (retryable) or :class:`RateLimitError`. The
:class:`Gateway` adds bounded retries, exponential backoff, a global in-flight
cap and a per-backend request-rate limit.
"""
from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import re
import string
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, Sequence

log = logging.getLogger(__name__)

ANSWER_FORMAT = "Answer: xxx"

TEMPLATES: dict[str, str] = {
    "no_tips": (
        "Above is the context ${context} of the target ${target}. "
        "Please answer the question '${question}' based on the context and image. "
        "The output format must strictly follow:\n" + ANSWER_FORMAT
    ),
    "one_tip": (
        "The above is the context ${context} of the target ${target}. "
        "This is a Tip: '${tip}' (which may not be correct). "
        "Please answer the question '${question}' based on the context and image. "
        "The output format must strictly follow:\n" + ANSWER_FORMAT
    ),
    "multi_tips": (
        "The above is the context ${context} of the target ${target}. "
        "These are the Tips (which may not be correct):\n${tip_list}\n"
        "Please answer the question '${question}' based on the context and image. "
        "The output format must strictly follow:\n" + ANSWER_FORMAT
    ),
    "bbox_no_tips": (
        "Above is the context ${context} of the target ${target} document,\n"
        "Please answer the question ${question},\n"
        "Based on the context and image,\n"
        "The output format strictly follows:\n" + ANSWER_FORMAT
    ),
    "bbox_one_tip": (
        "The above is the context ${context} of the target ${target} document.\n"
        "This is a Tip: ${tip} (which may not be correct).\n"
        "Please answer the question ${question},\n"
        "Based on the context and image,\n"
        "The output format strictly follows:\n" + ANSWER_FORMAT
    ),
    "bbox_multi_tips": (
        "The above is the context ${context} of the target ${target} document.\n"
        "These are Tips: ${tip_list}, (which may not be correct.)\n"
        "Please answer the question ${question},\n"
        "Based on the context and images,\n"
        "The output format strictly follows:\n" + ANSWER_FORMAT
    ),
    "gen_semantic": (
        "Based on the above context ${context} and target document image, generate a "
        "human-asked SHORT question (output question only) of which answer is exactly "
        'same as "${target}"'
    ),
    "gen_spatial": (
        "Change the question ${question} to a very short question about finding the "
        "position of the answer from input document image. For example, where is the "
        "answer of xx located?"
    ),
    "verify_user_input": (
        "Based on the provided Context ${context} from the target form and the form image "
        'itself, check if the target information itself (do not consider the context) "${target}" '
        "was entered by the form user (not part of the form template). Only output \"Yes\" if "
        "the ${target} is exactly provided by user not from the form template, do not consider "
        'context information. The response should follow the format below: "Response": "Yes/No"'
    ),
    "verify_answer": (
        "Ignore the context information and domain knowledge (e.g. FAX NUMBER). Just consider "
        "whether '${target}' could be the expected answer to the question '${question}'. "
        "Output format: {'Response': 'Yes/No', 'Explanation': 'xxx'}."
    ),
}

TIP_TEMPLATES = {"one_tip": 1, "multi_tips": 2, "bbox_one_tip": 1, "bbox_multi_tips": 2}
BBOX_TEMPLATES = {"bbox_no_tips", "bbox_one_tip", "bbox_multi_tips"}
# slots filled from ``tips`` at render time rather than by the caller
_DERIVED_SLOTS = {"tip", "tip_list"}

IMAGE_LONG_EDGE = 1536


class TemplateError(KeyError):
    """A template is unknown or a required slot is missing."""


class TransportError(RuntimeError):
    """Retryable backend failure; also raised once retries are exhausted."""


class RateLimitError(TransportError):
    def __init__(self, message: str = "rate limited", retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class ScriptMiss(LookupError):
    """A scripted mock has no reply for this payload (not retried)."""


def required_slots(template_id: str) -> set[str]:
    try:
        tpl = string.Template(TEMPLATES[template_id])
    except KeyError:
        raise TemplateError(f"unknown template {template_id!r}") from None
    # Template.get_identifiers needs 3.11
    names = {m.group("braced") or m.group("named") for m in tpl.pattern.finditer(tpl.template)}
    return names - _DERIVED_SLOTS - {None}


@dataclass(frozen=True)
class PromptState:
    template_id: str
    slots: Mapping[str, str]
    image_ref: str | None = None
    tips: tuple[str, ...] = ()
    # normalized boxes of the tips, drawn as overlays by the bbox templates
    tip_boxes: tuple[tuple[int, int, int, int], ...] = ()
    doc_id: str | None = None

    def with_tips(self, template_id: str, tips: Sequence[str], boxes=()) -> "PromptState":
        return PromptState(template_id, dict(self.slots), self.image_ref, tuple(tips), tuple(map(tuple, boxes)), self.doc_id)


@dataclass(frozen=True)
class Payload:
    text: str
    template_id: str
    slots: Mapping[str, str]
    tips: tuple[str, ...] = ()
    image_ref: str | None = None
    overlay_boxes: tuple[tuple[int, int, int, int], ...] = ()
    doc_id: str | None = None

    @property
    def digest(self) -> str:
        return slot_digest(self.slots, self.tips)

    @property
    def key(self) -> str:
        return f"{self.template_id}:{self.digest}"

    def image_bytes(self) -> bytes | None:
        """PNG of the page image with overlays, long edge capped at 1536 px."""
        if not self.image_ref:
            return None
        return encode_image(self.image_ref, self.overlay_boxes)


@dataclass(frozen=True)
class BackendReply:
    raw_text: str
    latency: float
    backend_id: str
    attempts: int


def slot_digest(slots: Mapping[str, str], tips: Sequence[str] = ()) -> str:
    blob = json.dumps({"slots": dict(slots), "tips": list(tips)}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _format_tip(tip: str, box, bbox_mode: bool) -> str:
    if bbox_mode and box is not None:
        return f"'{tip}' at [{', '.join(str(int(v)) for v in box)}]"
    return f"'{tip}'"


def render_prompt(state: PromptState) -> Payload:
    need = required_slots(state.template_id)
    missing = sorted(s for s in need if s not in state.slots or state.slots[s] is None)
    if missing:
        raise TemplateError(f"template {state.template_id!r} missing slot(s): {', '.join(missing)}")
    values = {k: str(state.slots[k]) for k in need}
    n_tips = TIP_TEMPLATES.get(state.template_id, 0)
    bbox_mode = state.template_id in BBOX_TEMPLATES
    boxes = list(state.tip_boxes) + [None] * (len(state.tips) - len(state.tip_boxes))
    if n_tips:
        if not state.tips:
            raise TemplateError(f"template {state.template_id!r} missing slot(s): tips")
        formatted = [_format_tip(t, b, bbox_mode) for t, b in zip(state.tips, boxes)]
        if n_tips == 1:
            values["tip"] = formatted[0] if bbox_mode else state.tips[0]
        elif bbox_mode:
            values["tip_list"] = ", ".join(formatted)
        else:
            values["tip_list"] = "\n".join(f"{i}. {t}" for i, t in enumerate(formatted, 1))
    text = string.Template(TEMPLATES[state.template_id]).substitute(values)
    overlays = tuple(tuple(b) for b in state.tip_boxes) if bbox_mode else ()
    return Payload(
        text=text,
        template_id=state.template_id,
        slots=dict(state.slots),
        tips=tuple(state.tips),
        image_ref=state.image_ref,
        overlay_boxes=overlays,
        doc_id=state.doc_id,
    )


def encode_image(path: str, boxes=(), long_edge: int = IMAGE_LONG_EDGE) -> bytes:
    from PIL import Image, ImageDraw

    with Image.open(path) as im:
        im = im.convert("RGB")
    if boxes:
        draw = ImageDraw.Draw(im)
        w, h = im.size
        for x0, y0, x1, y1 in boxes:
            draw.rectangle([x0 * w / 1000, y0 * h / 1000, x1 * w / 1000, y1 * h / 1000], outline=(255, 0, 0), width=2)
    scale = long_edge / max(im.size)
    if scale < 1:
        im = im.resize((max(1, round(im.width * scale)), max(1, round(im.height * scale))), Image.LANCZOS)
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------- parsing

_ANSWER_RE = re.compile(r"answer\s*:", re.IGNORECASE)
_RESPONSE_RE = re.compile(r"""["']?response["']?\s*:\s*["']?\s*([A-Za-z]+)""", re.IGNORECASE)


def _text(reply) -> str:
    return reply.raw_text if isinstance(reply, BackendReply) else str(reply)


def parse_answer(reply) -> str:
    """Text after the last ``Answer:`` marker, or the whole reply when absent."""
    text = _text(reply)
    marks = list(_ANSWER_RE.finditer(text))
    if marks:
        text = text[marks[-1].end():]
    return text.strip()


def parse_yes_no(reply) -> bool:
    """True only when the reply unambiguously says yes."""
    text = _text(reply).strip()
    m = _RESPONSE_RE.search(text)
    if m:
        return m.group(1).lower() == "yes"
    if text.startswith("{"):
        return False
    tokens = text.split()
    if not tokens:
        return False
    return tokens[0].strip(".,!:;\"'()").lower() == "yes"


def first_line(text: str) -> str:
    for line in text.splitlines():
        if line.strip():
            return line.strip()
    return ""


# ---------------------------------------------------------------- backends


class Backend(Protocol):
    backend_id: str

    def generate(self, payload: Payload) -> str: ...


class ScriptedBackend:
    """Replies looked up by ``template_id:digest``; the mock used in tests and demos."""

    backend_id = "mock"

    def __init__(self, script: Mapping[str, str], default: str | None = None, echo_tips_on_miss: bool = False):
        self.script = dict(script)
        self.default = default
        # unscripted hinted prompts answer with their first tip
        self.echo_tips_on_miss = echo_tips_on_miss

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data.get("replies", {}), data.get("default"), bool(data.get("echo_tips_on_miss", False)))

    def to_file(self, path) -> None:
        data = {"default": self.default, "echo_tips_on_miss": self.echo_tips_on_miss,
                "replies": dict(sorted(self.script.items()))}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, ensure_ascii=False, indent=1)

    def add(self, state: PromptState, reply: str) -> None:
        self.script[render_prompt(state).key] = reply

    def generate(self, payload: Payload) -> str:
        try:
            return self.script[payload.key]
        except KeyError:
            if self.echo_tips_on_miss and payload.tips:
                return f"Answer: {payload.tips[0]}"
            if self.default is not None:
                return self.default
            raise ScriptMiss(f"no scripted reply for {payload.key}") from None


class EchoBackend:
    """Answers with the first tip verbatim; ``vanilla_reply`` when there are none."""

    backend_id = "echo"

    def __init__(self, vanilla_reply: str = ""):
        self.vanilla_reply = vanilla_reply

    def generate(self, payload: Payload) -> str:
        return f"Answer: {payload.tips[0] if payload.tips else self.vanilla_reply}"


def _unit(*parts) -> float:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2**64


class SimulatedBackend:
    """Noisy oracle generator for desk-scale experiments.

    Knows the gold answer per (doc_id, question). Answers correctly with
    probability ``p_hinted`` when the gold string is among the tips and
    ``p_plain`` otherwise; wrong answers are another string of the document.
    The draw is a hash of (seed, payload), so identical payloads get
    identical replies.
    """

    backend_id = "simulated"

    def __init__(self, golds: Mapping[tuple[str, str], str], distractors: Mapping[str, Sequence[str]],
                 p_plain: float = 0.5, p_hinted: float = 0.9, seed: int = 0):
        self.golds = dict(golds)
        self.distractors = {k: list(v) for k, v in distractors.items()}
        self.p_plain = p_plain
        self.p_hinted = p_hinted
        self.seed = seed

    def generate(self, payload: Payload) -> str:
        question = payload.slots.get("question")
        key = (payload.doc_id, question)
        if key not in self.golds:
            raise ScriptMiss(f"simulated backend has no gold for {key}")
        gold = self.golds[key]
        hinted = any(t.strip().lower() == gold.strip().lower() for t in payload.tips)
        p = self.p_hinted if hinted else self.p_plain
        if _unit(self.seed, payload.template_id, payload.digest, payload.doc_id) < p:
            return f"Answer: {gold}"
        pool = [t for t in payload.tips if t != gold] or [d for d in self.distractors.get(payload.doc_id, []) if d != gold]
        if not pool:
            return "Answer: "
        pick = int(_unit(self.seed, "pick", payload.digest, payload.doc_id) * len(pool))
        return f"Answer: {pool[pick]}"


class _HTTPBackend:
    timeout = 60.0

    def __init__(self, model: str, api_key: str | None = None, base_url: str | None = None, client=None):
        import httpx

        self.model = model
        self.api_key = api_key
        self.base_url = (base_url or self.default_url).rstrip("/")
        self.client = client or httpx.Client(timeout=self.timeout)

    def _post(self, url: str, body: dict, headers: dict) -> dict:
        import httpx

        try:
            resp = self.client.post(url, json=body, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{self.backend_id}: {exc}") from exc
        if resp.status_code == 429:
            retry = resp.headers.get("retry-after")
            raise RateLimitError(f"{self.backend_id}: 429", float(retry) if retry else None)
        if resp.status_code >= 500:
            raise TransportError(f"{self.backend_id}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ValueError(f"{self.backend_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        return resp.json()


class OpenAIChatBackend(_HTTPBackend):
    """OpenAI-compatible ``/chat/completions`` with an inline PNG."""

    backend_id = "openai"
    default_url = "https://api.openai.com/v1"

    def generate(self, payload: Payload) -> str:
        content: list[dict[str, Any]] = [{"type": "text", "text": payload.text}]
        img = payload.image_bytes()
        if img is not None:
            url = "data:image/png;base64," + base64.b64encode(img).decode("ascii")
            content.insert(0, {"type": "image_url", "image_url": {"url": url}})
        body = {"model": self.model, "temperature": 0, "messages": [{"role": "user", "content": content}]}
        data = self._post(f"{self.base_url}/chat/completions", body, {"Authorization": f"Bearer {self.api_key}"})
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"openai: unexpected response shape: {str(data)[:200]}") from exc


class GeminiBackend(_HTTPBackend):
    """Google ``generateContent`` REST endpoint."""

    backend_id = "gemini"
    default_url = "https://generativelanguage.googleapis.com/v1beta"

    def generate(self, payload: Payload) -> str:
        parts: list[dict[str, Any]] = []
        img = payload.image_bytes()
        if img is not None:
            parts.append({"inline_data": {"mime_type": "image/png", "data": base64.b64encode(img).decode("ascii")}})
        parts.append({"text": payload.text})
        body = {"contents": [{"role": "user", "parts": parts}], "generationConfig": {"temperature": 0, "topK": 1}}
        url = f"{self.base_url}/models/{self.model}:generateContent"
        data = self._post(url, body, {"x-goog-api-key": self.api_key or ""})
        try:
            return "".join(p.get("text", "") for p in data["candidates"][0]["content"]["parts"])
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"gemini: unexpected response shape: {str(data)[:200]}") from exc


# ---------------------------------------------------------------- gateway


class Gateway:
    """Retry, backoff, in-flight cap and rate limiting in front of one backend."""

    def __init__(self, backend: Backend, retries: int = 3, backoff_base: float = 1.0,
                 max_in_flight: int = 8, rate_limit_per_s: float | None = None,
                 sleep: Callable[[float], None] = time.sleep, clock: Callable[[], float] = time.monotonic):
        if retries < 1:
            raise ValueError("retry budget must be at least 1 attempt")
        self.backend = backend
        self.retries = retries
        self.backoff_base = backoff_base
        self.rate_limit_per_s = rate_limit_per_s
        self._sleep = sleep
        self._clock = clock
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._rate_lock = threading.Lock()
        self._next_start = 0.0

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def _wait_for_rate(self) -> None:
        if not self.rate_limit_per_s:
            return
        with self._rate_lock:
            now = self._clock()
            wait = self._next_start - now
            self._next_start = max(now, self._next_start) + 1.0 / self.rate_limit_per_s
        if wait > 0:
            self._sleep(wait)

    def complete(self, payload: Payload) -> BackendReply:
        last: Exception | None = None
        for attempt in range(1, self.retries + 1):
            self._wait_for_rate()
            t0 = self._clock()
            try:
                with self._slots:
                    text = self.backend.generate(payload)
            except ScriptMiss:
                raise
            except TransportError as exc:
                last = exc
                if attempt == self.retries:
                    break
                delay = self.backoff_base * 2 ** (attempt - 1)
                if isinstance(exc, RateLimitError) and exc.retry_after is not None:
                    delay = max(delay, exc.retry_after)
                log.warning("%s attempt %d failed (%s); retrying in %.2fs", self.backend_id, attempt, exc, delay)
                self._sleep(delay)
                continue
            return BackendReply(text, self._clock() - t0, self.backend_id, attempt)
        raise TransportError(f"{self.backend_id}: failed after {self.retries} attempts: {last}") from last

    def ask(self, state: PromptState) -> BackendReply:
        return self.complete(render_prompt(state))


def make_backend(cfg: Mapping[str, Any], **extra) -> Backend:
    """Build a backend from a config mapping (``id`` plus backend-specific keys)."""
    kind = cfg.get("id", "mock")
    if kind == "mock":
        if cfg.get("script"):
            return ScriptedBackend.from_file(cfg["script"])
        return ScriptedBackend({}, cfg.get("default"))
    if kind == "echo":
        return EchoBackend(cfg.get("vanilla_reply", ""))
    if kind == "simulated":
        return SimulatedBackend(extra["golds"], extra["distractors"], cfg.get("p_plain", 0.5),
                                cfg.get("p_hinted", 0.9), cfg.get("seed", extra.get("seed", 0)))
    api_key = cfg.get("api_key") or os.environ.get(cfg.get("api_key_env", ""), None)
    if kind == "openai":
        return OpenAIChatBackend(cfg["model"], api_key, cfg.get("base_url"))
    if kind == "gemini":
        return GeminiBackend(cfg["model"], api_key, cfg.get("base_url"))
    raise ValueError(f"unknown backend id {kind!r}")
