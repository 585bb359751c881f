import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from hypothesis import given, strategies as st

from mpager.llm_client import (
    BackendConfig,
    ConfigError,
    EmptyCompletionError,
    GuardPolicy,
    HttpBackend,
    MockBackend,
    PromptTemplate,
    TransportError,
    backend_from_config,
    build_prompt,
    correct,
    correct_many,
    extract_completion,
    guard_output,
    load_template,
    parse_template,
)

from published_examples import EX1_HYP, EX1_MPA, EX3_HYP, EX3_MPA, EX4_HYP, EX4_LOOP

TEMPLATE = PromptTemplate("Fix the transcript.")


def test_prompt_one_candidate():
    p = build_prompt(["a b"], TEMPLATE)
    assert p == "Fix the transcript.\n1. a b\n### Response:\n"


def test_prompt_enumerates_in_order():
    p = build_prompt(["x", "y", "z"], TEMPLATE)
    lines = p.splitlines()
    assert lines[1:4] == ["1. x", "2. y", "3. z"]


def test_prompt_deterministic_bytes():
    t = load_template("english_japanese")
    assert build_prompt(["拘束", "高速"], t).encode() == build_prompt(["拘束", "高速"], t).encode()


def test_prompt_requires_candidates():
    with pytest.raises(ValueError):
        build_prompt([], TEMPLATE)


def test_builtin_templates():
    en = load_template("english")
    ja = load_template("english_japanese")
    assert en.language_variant == "english"
    assert ja.language_variant == "english_japanese"
    assert "仮説" in ja.instruction
    assert build_prompt(["a"], en).count("\n1. a\n") == 1


def test_template_file_format(tmp_path):
    t = parse_template("#: item [{index}] {text}\n#: footer ANSWER:\nCorrect these.\n")
    assert build_prompt(["p", "q"], t) == "Correct these.\n[1] p\n[2] q\nANSWER:\n"
    with pytest.raises(ConfigError):
        parse_template("#: bogus x\nbody")
    with pytest.raises(ConfigError):
        parse_template("#: item {text}\nbody")
    with pytest.raises(ConfigError):
        load_template(str(tmp_path / "missing.txt"))


@given(st.lists(st.text(max_size=20), min_size=1, max_size=6))
def test_item_line_count(cands):
    p = build_prompt(cands, TEMPLATE)
    item_lines = [line for line in p.split("\n")[1:-2]]
    assert len(item_lines) == len(cands)


def test_correct_echo():
    assert correct(["cand one", "cand two"], MockBackend(), TEMPLATE) == "cand one"


def test_correct_scripted_published_output_passes_through():
    mock = MockBackend("scripted", {"ex1": EX1_MPA})
    assert correct([EX1_HYP], mock, TEMPLATE, utt_id="ex1") == EX1_MPA


def test_correct_empty_completion():
    with pytest.raises(EmptyCompletionError):
        correct(["a"], MockBackend(fn=lambda r: "   "), TEMPLATE)


def test_correct_retries_with_exponential_backoff():
    waits = []
    mock = MockBackend(failures={"u": 2}, config=BackendConfig(max_retries=3, backoff_base=0.5))
    assert correct(["ok"], mock, TEMPLATE, utt_id="u", sleep=waits.append) == "ok"
    assert waits == [0.5, 1.0]
    assert mock.calls == 3


def test_correct_gives_up_after_retries():
    waits = []
    mock = MockBackend(failures={"u": -1}, config=BackendConfig(max_retries=2, backoff_base=1.0, backoff_max=1.5))
    with pytest.raises(TransportError):
        correct(["ok"], mock, TEMPLATE, utt_id="u", sleep=waits.append)
    assert waits == [1.0, 1.5]
    assert mock.calls == 3


def test_concurrency_bound():
    mock = MockBackend(delay=0.02, config=BackendConfig(max_concurrent_requests=2, backoff_base=0))
    items = [(f"u{k}", [f"text{k}"]) for k in range(12)]
    out = correct_many(items, mock, TEMPLATE, workers=8)
    assert mock.max_in_flight == 2
    assert out == {f"u{k}": f"text{k}" for k in range(12)}


def test_correct_many_keeps_errors_per_utterance():
    mock = MockBackend(failures={"u1": -1}, config=BackendConfig(max_retries=0))
    out = correct_many([("u0", ["a"]), ("u1", ["b"])], mock, TEMPLATE, workers=2)
    assert out["u0"] == "a"
    assert isinstance(out["u1"], TransportError)


def test_extract_completion_shapes():
    assert extract_completion({"choices": [{"text": "  hi \n"}]}) == "hi"
    assert extract_completion({"choices": [{"text": ""}, {"text": "second"}]}) == "second"
    assert extract_completion({"choices": [{"message": {"role": "assistant", "content": "chat"}}]}) == "chat"
    assert extract_completion({"choices": []}) == ""
    assert extract_completion([1, 2]) == ""


# ---- guard -------------------------------------------------------------------------

def test_guard_accepts_identity_and_small_edits():
    assert guard_output("abc def", "abc def").accepted
    assert guard_output("abcdef", "abcde").accepted
    d = guard_output(EX3_HYP, EX3_MPA)
    assert d.accepted and d.text == EX3_MPA


def test_guard_rejects_published_example4_loop():
    d = guard_output(EX4_HYP, EX4_LOOP)
    assert not d.accepted
    assert d.text == EX4_HYP
    assert "length_ratio" in d.reasons and "ngram_repeat" in d.reasons


def test_guard_repeat_rule_alone():
    anchor = "abcdefghijklmnopqrstuvwxyz"
    # "wxyz" five times back to back, total length still under 3x
    d = guard_output(anchor, "abcdefghijklmnopqrstuv" + "wxyz" * 5)
    assert d.reasons == ("ngram_repeat",)
    assert guard_output(anchor, "abcdefghijklmnopqrstuv" + "wxyz" * 4).accepted
    # short-period loops count: "ab" x 10 contains "abab" repeated 5 times
    assert not guard_output(anchor, "ab" * 10 + "cdefg").accepted


def test_guard_length_rule_alone():
    d = guard_output("abc", "abcdefghijkl")
    assert d.reasons == ("length_ratio",)


def test_guard_disabled_and_validation():
    assert guard_output("a", EX4_LOOP, GuardPolicy(enabled=False)).accepted
    with pytest.raises(ConfigError):
        GuardPolicy(max_length_ratio=1.0)


@given(st.text(max_size=40), st.text(max_size=200))
def test_guard_returns_corrected_or_anchor(anchor, corrected):
    d = guard_output(anchor, corrected)
    assert d.text == (corrected if d.accepted else anchor)


# ---- HTTP wire format ----------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        self.server.seen.append((self.path, dict(self.headers), body))
        status, payload = self.server.responses.pop(0) if self.server.responses else (200, None)
        if payload is None:
            prompt = body.get("prompt") or body["messages"][0]["content"]
            first = [line for line in prompt.split("\n") if line.startswith("1. ")][0][3:]
            payload = {"choices": [{"text": f" {first} "}]}
        raw = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    srv.seen, srv.responses = [], []
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv
    srv.shutdown()
    srv.server_close()


def url(srv):
    return f"http://127.0.0.1:{srv.server_address[1]}/v1/completions"


def test_http_completion_request(server):
    be = HttpBackend(BackendConfig(endpoint_url=url(server), model_name="elyza-ger", max_output_tokens=64), api_key="k1")
    assert correct(["拘束条件", "高速条件"], be, TEMPLATE) == "拘束条件"
    path, headers, body = server.seen[0]
    assert path == "/v1/completions"
    assert headers["Authorization"] == "Bearer k1"
    assert body["model"] == "elyza-ger"
    assert body["temperature"] == 0.0
    assert body["max_tokens"] == 64
    assert body["prompt"] == build_prompt(["拘束条件", "高速条件"], TEMPLATE)


def test_http_chat_style(server):
    be = HttpBackend(BackendConfig(endpoint_url=url(server), api_style="chat"))
    server.responses.append((200, {"choices": [{"message": {"content": "答え"}}]}))
    assert correct(["x"], be, TEMPLATE) == "答え"
    assert server.seen[0][2]["messages"][0]["role"] == "user"


def test_http_retries_on_server_error(server):
    be = HttpBackend(BackendConfig(endpoint_url=url(server), backoff_base=0, max_retries=2))
    server.responses.extend([(503, {"error": "busy"}), (200, {"choices": [{"text": "fine"}]})])
    assert correct(["x"], be, TEMPLATE) == "fine"
    assert len(server.seen) == 2


def test_http_client_error_not_retried(server):
    be = HttpBackend(BackendConfig(endpoint_url=url(server), backoff_base=0, max_retries=3))
    server.responses.append((400, {"error": "bad"}))
    with pytest.raises(TransportError):
        correct(["x"], be, TEMPLATE)
    assert len(server.seen) == 1


def test_http_unreachable():
    be = HttpBackend(BackendConfig(endpoint_url="http://127.0.0.1:9/none", request_timeout=1, backoff_base=0, max_retries=1))
    with pytest.raises(TransportError):
        correct(["x"], be, TEMPLATE)


def test_backend_config_precedence():
    cfg = {"type": "http", "endpoint_url": "http://file", "model_name": "m"}
    be = backend_from_config(cfg, env={})
    assert be.config.endpoint_url == "http://file"
    be = backend_from_config(cfg, env={"MPAGER_ENDPOINT_URL": "http://env"})
    assert be.config.endpoint_url == "http://env"
    be = backend_from_config(cfg, env={"MPAGER_ENDPOINT_URL": "http://env"}, overrides={"endpoint_url": "http://flag"})
    assert be.config.endpoint_url == "http://flag"
    be = backend_from_config({**cfg, "api_key_env": "MY_KEY"}, env={"MY_KEY": "secret"})
    assert be._client.headers["Authorization"] == "Bearer secret"


def test_backend_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        backend_from_config({"type": "grpc"}, env={})
    with pytest.raises(ConfigError):
        backend_from_config({"type": "http", "endpoint_url": "http://x", "bogus": 1}, env={})
    with pytest.raises(ConfigError):
        backend_from_config({"type": "http"}, env={})
    with pytest.raises(ConfigError):
        BackendConfig(max_retries=-1)
    with pytest.raises(ConfigError):
        BackendConfig(max_concurrent_requests=0)


def test_mock_from_config_with_script(tmp_path):
    script = tmp_path / "out.jsonl"
    script.write_text(json.dumps({"utt_id": "u1", "text": "scripted"}) + "\n", encoding="utf-8")
    be = backend_from_config({"type": "mock", "mode": "scripted", "outputs_path": str(script)}, env={})
    assert correct(["a"], be, TEMPLATE, utt_id="u1") == "scripted"
    assert correct(["a"], be, TEMPLATE, utt_id="u2") == "a"
