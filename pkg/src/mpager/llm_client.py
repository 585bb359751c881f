"""Prompting external LLM completion endpoints for transcript correction.

A backend turns a :class:`CompletionRequest` into raw completion text.
:class:`HttpBackend` speaks a JSON completion protocol; :class:`MockBackend`
is scripted in-process for tests and offline runs. :func:`correct` adds
retries and response checks, :func:`guard_output` rejects degenerate
outputs (runaway length, looping repetitions).

Template files are plain text. Lines starting with ``#:`` are directives::

    #: variant english            (or english_japanese)
    #: item {index}. {text}        (one line per candidate; {index} is 1-based)
    #: footer ### Response:

All other lines form the instruction. The prompt is the instruction, the
candidate lines, then the footer, separated by newlines.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import httpx

log = logging.getLogger(__name__)

VARIANTS = ("english", "english_japanese")
BUILTIN_TEMPLATES = {"english": "english.txt", "english_japanese": "english_japanese.txt"}


class LLMError(Exception):
    pass


class TransportError(LLMError):
    """The endpoint could not be reached or answered with an error status."""

    def __init__(self, msg, retryable=True):
        super().__init__(msg)
        self.retryable = retryable


class EmptyCompletionError(LLMError):
    """The endpoint answered, but with no usable completion text."""


class ConfigError(ValueError):
    pass


# ---- prompts -----------------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    instruction: str
    hypothesis_item_format: str = "{index}. {text}"
    language_variant: str = "english"
    footer: str = "### Response:"

    def __post_init__(self):
        if self.language_variant not in VARIANTS:
            raise ConfigError(f"unknown language variant {self.language_variant!r}")
        for key in ("{index}", "{text}"):
            if key not in self.hypothesis_item_format:
                raise ConfigError(f"item format lacks placeholder {key}")


def parse_template(source: str) -> PromptTemplate:
    fields = {}
    body = []
    names = {"variant": "language_variant", "item": "hypothesis_item_format", "footer": "footer"}
    for line in source.split("\n"):
        if line.startswith("#:"):
            key, _, value = line[2:].strip().partition(" ")
            if key not in names:
                raise ConfigError(f"unknown template directive {key!r}")
            fields[names[key]] = value.strip()
        else:
            body.append(line)
    instruction = "\n".join(body).strip("\n")
    if not instruction:
        raise ConfigError("template has no instruction text")
    return PromptTemplate(instruction=instruction, **fields)


def load_template(name_or_path: str) -> PromptTemplate:
    """Load a builtin template by name (``english``, ``english_japanese``) or a file path."""
    if name_or_path in BUILTIN_TEMPLATES:
        src = resources.files("mpager").joinpath("templates", BUILTIN_TEMPLATES[name_or_path])
        return parse_template(src.read_text(encoding="utf-8"))
    p = Path(name_or_path)
    if not p.is_file():
        raise ConfigError(f"template {name_or_path!r} is neither builtin nor a file")
    return parse_template(p.read_text(encoding="utf-8"))


def build_prompt(candidates: Sequence[str], template: PromptTemplate) -> str:
    if not candidates:
        raise ValueError("build_prompt needs at least one candidate")
    items = [
        template.hypothesis_item_format.replace("{index}", str(k)).replace("{text}", " ".join(c.split("\n")))
        for k, c in enumerate(candidates, 1)
    ]
    parts = [template.instruction, *items]
    if template.footer:
        parts.append(template.footer)
    return "\n".join(parts) + "\n"


# ---- backends ----------------------------------------------------------------

@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str = ""
    model_name: str = ""
    max_output_tokens: int = 256
    temperature: float = 0.0
    request_timeout: float = 60.0
    max_retries: int = 3
    max_concurrent_requests: int = 4
    api_style: str = "completion"  # or "chat"
    backoff_base: float = 0.5
    backoff_max: float = 30.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.max_concurrent_requests < 1:
            raise ConfigError("max_concurrent_requests must be >= 1")
        if self.api_style not in ("completion", "chat"):
            raise ConfigError(f"unknown api_style {self.api_style!r}")


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    candidates: tuple = ()
    utt_id: Optional[str] = None


class Backend:
    """Base class: bounds in-flight requests by ``config.max_concurrent_requests``."""

    name = "backend"

    def __init__(self, config: BackendConfig):
        self.config = config
        self._slots = threading.BoundedSemaphore(config.max_concurrent_requests)

    def complete(self, request: CompletionRequest) -> str:
        with self._slots:
            return self._complete(request)

    def _complete(self, request: CompletionRequest) -> str:
        raise NotImplementedError


def extract_completion(payload) -> str:
    """First non-empty completion in a response body, trimmed; '' if none."""
    if not isinstance(payload, dict):
        return ""
    texts = []
    for choice in payload.get("choices") or []:
        if not isinstance(choice, dict):
            continue
        if isinstance(choice.get("text"), str):
            texts.append(choice["text"])
        msg = choice.get("message")
        if isinstance(msg, dict) and isinstance(msg.get("content"), str):
            texts.append(msg["content"])
    for key in ("completion", "text", "output"):
        if isinstance(payload.get(key), str):
            texts.append(payload[key])
    for t in texts:
        if t.strip():
            return t.strip()
    return ""


class HttpBackend(Backend):
    name = "http"

    def __init__(self, config: BackendConfig, api_key: Optional[str] = None, transport=None):
        super().__init__(config)
        if not config.endpoint_url:
            raise ConfigError("http backend needs endpoint_url")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=config.request_timeout, headers=headers, transport=transport)

    def request_body(self, prompt: str) -> dict:
        c = self.config
        body = {"model": c.model_name, "temperature": c.temperature, "max_tokens": c.max_output_tokens}
        if c.api_style == "chat":
            body["messages"] = [{"role": "user", "content": prompt}]
        else:
            body["prompt"] = prompt
        return body

    def _complete(self, request: CompletionRequest) -> str:
        try:
            resp = self._client.post(self.config.endpoint_url, json=self.request_body(request.prompt))
        except httpx.HTTPError as e:
            raise TransportError(f"{type(e).__name__}: {e}") from e
        if resp.status_code >= 400:
            retryable = resp.status_code == 429 or resp.status_code >= 500
            raise TransportError(f"HTTP {resp.status_code} from {self.config.endpoint_url}", retryable)
        try:
            payload = resp.json()
        except ValueError as e:
            raise TransportError(f"response is not JSON: {e}", retryable=False) from e
        return extract_completion(payload)

    def close(self):
        self._client.close()


class MockBackend(Backend):
    """Scriptable in-process backend.

    mode ``"echo"`` returns the first candidate; ``"scripted"`` returns
    ``outputs[utt_id]`` and falls back to echo (or raises if
    ``fallback="error"``). ``fn`` overrides both. ``failures`` maps utt_id to
    the number of transport failures to raise before answering (-1: always);
    ``unreachable=True`` fails every call. ``delay`` sleeps inside the
    request so concurrency can be observed via ``max_in_flight``.
    """

    name = "mock"

    def __init__(
        self,
        mode: str = "echo",
        outputs: Optional[dict] = None,
        fallback: str = "echo",
        fn: Optional[Callable[[CompletionRequest], str]] = None,
        failures: Optional[dict] = None,
        unreachable: bool = False,
        delay: float = 0.0,
        config: Optional[BackendConfig] = None,
    ):
        super().__init__(config or BackendConfig(backoff_base=0.0))
        if mode not in ("echo", "scripted"):
            raise ConfigError(f"unknown mock mode {mode!r}")
        if fallback not in ("echo", "error"):
            raise ConfigError(f"unknown mock fallback {fallback!r}")
        self.mode = mode
        self.outputs = dict(outputs or {})
        self.fallback = fallback
        self.fn = fn
        self.failures = dict(failures or {})
        self.unreachable = unreachable
        self.delay = delay
        self.calls = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self.prompts = []
        self._lock = threading.Lock()

    def _complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            self.prompts.append(request.prompt)
            remaining = self.failures.get(request.utt_id, 0)
            if remaining > 0:
                self.failures[request.utt_id] = remaining - 1
        try:
            if self.delay:
                time.sleep(self.delay)
            if self.unreachable or remaining != 0:
                raise TransportError(f"mock transport failure for {request.utt_id!r}")
            if self.fn is not None:
                return self.fn(request)
            if self.mode == "scripted" and request.utt_id in self.outputs:
                return self.outputs[request.utt_id]
            if self.mode == "scripted" and self.fallback == "error":
                raise TransportError(f"mock has no script for {request.utt_id!r}", retryable=False)
            return request.candidates[0] if request.candidates else ""
        finally:
            with self._lock:
                self.in_flight -= 1


def backend_from_config(cfg: dict, env: Optional[dict] = None, overrides: Optional[dict] = None) -> Backend:
    """Build a backend from a scheme-file entry.

    ``{"type": "mock", ...}`` takes the :class:`MockBackend` keywords, with
    ``outputs_path`` allowed for a JSON/JSONL ``utt_id -> text`` script.
    ``{"type": "http", ...}`` takes :class:`BackendConfig` fields; the
    environment (``MPAGER_ENDPOINT_URL``, and the variable named by
    ``api_key_env``, default ``MPAGER_API_KEY``) overrides the file, and
    ``overrides`` (command-line flags) override both.
    """
    env = os.environ if env is None else env
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    cfg = dict(cfg)
    kind = cfg.pop("type", "http")
    conf_fields = set(BackendConfig.__dataclass_fields__)
    if kind == "mock":
        conf_kw = {k: cfg.pop(k) for k in list(cfg) if k in conf_fields}
        conf_kw.setdefault("backoff_base", 0.0)
        conf = BackendConfig(**conf_kw)
        path = cfg.pop("outputs_path", None)
        if path is not None:
            cfg["outputs"] = {**load_script(path), **cfg.get("outputs", {})}
        try:
            return MockBackend(config=conf, **cfg)
        except TypeError as e:
            raise ConfigError(f"bad mock backend config: {e}") from None
    if kind != "http":
        raise ConfigError(f"unknown backend type {kind!r}")
    key_env = cfg.pop("api_key_env", "MPAGER_API_KEY")
    if env.get("MPAGER_ENDPOINT_URL"):
        cfg["endpoint_url"] = env["MPAGER_ENDPOINT_URL"]
    api_key = env.get(key_env)
    api_key = overrides.pop("api_key", api_key)
    cfg.update(overrides)
    unknown = set(cfg) - conf_fields
    if unknown:
        raise ConfigError(f"unknown backend field(s): {', '.join(sorted(unknown))}")
    return HttpBackend(BackendConfig(**cfg), api_key=api_key)


def load_script(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".jsonl"):
        out = {}
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                out[rec["utt_id"]] = rec["text"]
        return out
    data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: script must map utt_id to text")
    return data


# ---- correction ----------------------------------------------------------------

def correct(
    candidates: Sequence[str],
    backend: Backend,
    template: PromptTemplate,
    utt_id: Optional[str] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Ask ``backend`` for a corrected transcription of ``candidates``.

    Retryable transport errors are retried up to ``max_retries`` times with
    exponential backoff. Raises :class:`TransportError` once retries are
    exhausted and :class:`EmptyCompletionError` for a blank answer.
    """
    prompt = build_prompt(candidates, template)
    request = CompletionRequest(prompt, tuple(candidates), utt_id)
    cfg = backend.config
    attempt = 0
    while True:
        try:
            text = backend.complete(request)
            break
        except TransportError as e:
            if not e.retryable or attempt >= cfg.max_retries:
                raise
            wait = min(cfg.backoff_base * 2 ** attempt, cfg.backoff_max)
            log.warning("utt %s: %s; retry %d/%d in %.2fs", utt_id, e, attempt + 1, cfg.max_retries, wait)
            if wait > 0:
                sleep(wait)
            attempt += 1
    text = (text or "").strip()
    if not text:
        raise EmptyCompletionError(f"empty completion for utterance {utt_id!r}")
    return text


def correct_many(
    items: Sequence[tuple],
    backend: Backend,
    template: PromptTemplate,
    workers: int = 1,
) -> dict:
    """Correct ``(utt_id, candidates)`` items concurrently.

    Returns ``{utt_id: text or LLMError}``, keyed by utterance, never by
    completion order.
    """
    def one(item):
        utt_id, cands = item
        try:
            return utt_id, correct(cands, backend, template, utt_id)
        except LLMError as e:
            return utt_id, e

    if workers <= 1:
        return dict(map(one, items))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return dict(pool.map(one, items))


# ---- output guard --------------------------------------------------------------

@dataclass(frozen=True)
class GuardPolicy:
    """Rejection thresholds for corrected text.

    An output is rejected when its length exceeds ``max_length_ratio`` times
    the anchor's, or when a block of ``ngram_size`` or more characters occurs
    back to back more than ``max_ngram_repeats`` times. Lengths ignore
    whitespace.
    """

    max_length_ratio: float = 3.0
    ngram_size: int = 4
    max_ngram_repeats: int = 4
    enabled: bool = True

    def __post_init__(self):
        if not self.max_length_ratio > 1:
            raise ConfigError("max_length_ratio must be > 1")
        if self.ngram_size < 1 or self.max_ngram_repeats < 1:
            raise ConfigError("n-gram thresholds must be positive")


@dataclass(frozen=True)
class GuardDecision:
    accepted: bool
    text: str
    reasons: tuple = ()

    @property
    def reason(self) -> str:
        return ",".join(self.reasons)


def _squash(text: str) -> str:
    return "".join(text.split())


def _repeats_exceed(s: str, unit: int, limit: int) -> bool:
    # a block of length p repeated r times back to back is a run of (r-1)*p
    # positions where s[k] == s[k+p]
    n = len(s)
    for p in range(unit, n // (limit + 1) + 1):
        need = limit * p
        run = 0
        for k in range(n - p):
            if s[k] == s[k + p]:
                run += 1
                if run >= need:
                    return True
            else:
                run = 0
    return False


def guard_output(anchor: str, corrected: str, policy: GuardPolicy = GuardPolicy()) -> GuardDecision:
    """Accept ``corrected`` or fall back to ``anchor``, naming the rules that fired.

    An empty anchor is measured as length 1 for the ratio rule.
    """
    if not policy.enabled:
        return GuardDecision(True, corrected)
    a, c = _squash(anchor), _squash(corrected)
    reasons = []
    if len(c) / max(len(a), 1) > policy.max_length_ratio:
        reasons.append("length_ratio")
    if _repeats_exceed(c, policy.ngram_size, policy.max_ngram_repeats):
        reasons.append("ngram_repeat")
    if reasons:
        return GuardDecision(False, anchor, tuple(reasons))
    return GuardDecision(True, corrected)
