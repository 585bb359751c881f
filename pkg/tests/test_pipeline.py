import json

import pytest

from mpager.corpus import Corpus, Hypothesis, Utterance
from mpager.llm_client import BackendConfig, ConfigError, GuardPolicy, MockBackend, PromptTemplate
from mpager.pipeline import (
    ANCHOR,
    MERGED,
    N_BEST_OF_ONE_SYSTEM,
    ONE_BEST_OF_N_SYSTEMS,
    GerRun,
    MpaScheme,
    llm_ger,
    load_scheme,
    merge_texts,
    read_report,
    run_baseline_rover,
    run_mpa,
    scheme_from_dict,
)
from mpager.synthetic import multi_stream_corpus
from mpager.textnorm import normalize

from published_examples import EX2_HYP, EX2_MPA, EX4_HYP, EX4_LOOP

T = PromptTemplate("fix")


def one_run_scheme(**kw):
    return MpaScheme("sysA@1", [GerRun("B", ONE_BEST_OF_N_SYSTEMS, ("sysA@1", "sysB@1", "sysC@1"), "llm")], **kw)


def tiny_corpus(rows):
    utts = []
    for uid, ref, hyps in rows:
        u = Utterance(uid, ref)
        for k, h in enumerate(hyps):
            u.hyps.add(Hypothesis(f"sys{'ABC'[k]}", 1, h))
        utts.append(u)
    return Corpus(utts)


# ---- single-utterance GER ------------------------------------------------------------

def test_llm_ger_echo_is_anchor():
    o = llm_ger(["あいう", "あいえ"], MockBackend(), T)
    assert o.text == "あいう" and o.accepted


def test_llm_ger_published_example2():
    cands = [EX2_HYP, EX2_HYP.replace("華 経", "華 境"), EX2_HYP]
    o = llm_ger(cands, MockBackend(fn=lambda r: EX2_MPA), T)
    assert o.accepted and o.text == EX2_MPA


def test_llm_ger_published_example4_falls_back():
    o = llm_ger([EX4_HYP], MockBackend(fn=lambda r: EX4_LOOP), T)
    assert not o.accepted
    assert o.text == EX4_HYP
    assert o.raw == EX4_LOOP.strip()


def test_llm_ger_degrades_on_errors():
    o = llm_ger(["x"], MockBackend(unreachable=True, config=BackendConfig(max_retries=0)), T)
    assert (o.text, o.reasons) == ("x", ("transport_error",))
    o = llm_ger(["x"], MockBackend(fn=lambda r: ""), T)
    assert o.reasons == ("empty_completion",)


def test_llm_ger_explicit_anchor_used_for_fallback():
    o = llm_ger(["other"], MockBackend(fn=lambda r: "z" * 50), T, anchor="anchor")
    assert o.text == "anchor"


# ---- MPA runs ---------------------------------------------------------------------------

def test_mpa_echo_merged_equals_anchor():
    corpus = multi_stream_corpus(n_utts=30, length=15, seed=4)
    rep = run_mpa(corpus, one_run_scheme(), {"llm": MockBackend()})
    for u in rep.utterances:
        assert u.merged == u.anchor
    assert rep.cer(MERGED).corpus_cer == rep.cer(ANCHOR).corpus_cer


def test_mpa_two_llms_wrong_at_different_places_keep_anchor():
    ref = "あいうえおかきくけこ"
    corpus = tiny_corpus([("u1", ref, [ref, ref, ref])])
    scheme = MpaScheme("sysA@1", [
        GerRun("B", ONE_BEST_OF_N_SYSTEMS, ("sysA@1",), "b"),
        GerRun("C", ONE_BEST_OF_N_SYSTEMS, ("sysA@1",), "c"),
    ])
    backends = {"b": MockBackend(fn=lambda r: "あいうえおかきくけさ"), "c": MockBackend(fn=lambda r: "かいうえおかきくけこ")}
    rep = run_mpa(corpus, scheme, backends)
    assert rep.utterances[0].merged == ref
    assert rep.cer(MERGED).corpus_cer == 0.0
    assert rep.cer("B").corpus_cer == pytest.approx(0.1)


def test_mpa_two_llms_fix_anchor():
    ref = "あいうえおかきくけこ"
    corpus = tiny_corpus([("u1", ref, ["あいうえおかきくけさ", ref, ref])])
    scheme = MpaScheme("sysA@1", [
        GerRun("B", ONE_BEST_OF_N_SYSTEMS, ("sysA@1", "sysB@1"), "m"),
        GerRun("C", ONE_BEST_OF_N_SYSTEMS, ("sysA@1", "sysC@1"), "m"),
    ])
    rep = run_mpa(corpus, scheme, {"m": MockBackend(fn=lambda r: r.candidates[1])})
    assert rep.utterances[0].merged == ref
    assert rep.cer(ANCHOR).corpus_cer == pytest.approx(0.1)
    assert rep.cer(MERGED).corpus_cer == 0.0


def test_mpa_single_correction_ties_to_anchor():
    # one anchor vs one LLM output: every disagreement is a 1-1 tie, the anchor wins
    corpus = tiny_corpus([("u1", EX2_MPA, [EX2_HYP])])
    scheme = MpaScheme("sysA@1", [GerRun("B", ONE_BEST_OF_N_SYSTEMS, ("sysA@1",), "m")])
    rep = run_mpa(corpus, scheme, {"m": MockBackend(fn=lambda r: EX2_MPA)})
    assert rep.utterances[0].merged.replace(" ", "") == EX2_HYP.replace(" ", "")


def test_mpa_nbest_source_and_multiple_runs():
    u = Utterance("u1", "かきくけこ")
    for rank, t in enumerate(["かきくけさ", "かきくけこ", "かきくけそ"], 1):
        u.hyps.add(Hypothesis("sysA", rank, t))
    u.hyps.add(Hypothesis("sysB", 1, "かきくけこ"))
    u.hyps.add(Hypothesis("sysC", 1, "かきくけこ"))
    seen = {}

    def record(name):
        def fn(req):
            seen[name] = list(req.candidates)
            return "かきくけこ"
        return fn

    scheme = MpaScheme("sysA@1", [
        GerRun("B1", N_BEST_OF_ONE_SYSTEM, ("sysA@1", "sysA@2", "sysA@3"), "b1"),
        GerRun("B2", N_BEST_OF_ONE_SYSTEM, ("sysA@1", "sysA@2"), "b2"),
        GerRun("C1", ONE_BEST_OF_N_SYSTEMS, ("sysA@1", "sysB@1", "sysC@1"), "c1"),
    ])
    rep = run_mpa(Corpus([u]), scheme, {k: MockBackend(fn=record(k)) for k in ("b1", "b2", "c1")})
    assert seen["b1"] == ["かきくけさ", "かきくけこ", "かきくけそ"]
    assert seen["b2"] == ["かきくけさ", "かきくけこ"]
    assert seen["c1"] == ["かきくけさ", "かきくけこ", "かきくけこ"]
    res = rep.utterances[0]
    assert res.merge_inputs == ["かきくけさ"] + ["かきくけこ"] * 3
    assert res.merged == "かきくけこ"


def test_report_invariants_and_digest(tmp_path):
    corpus = multi_stream_corpus(n_utts=40, length=12, seed=9)
    loops = {f"utt{k:05d}" for k in range(0, 40, 7)}

    def fn(req):
        return "あ" * 200 if req.utt_id in loops else req.candidates[1]

    rep = run_mpa(corpus, one_run_scheme(), {"llm": MockBackend(fn=fn)})
    assert [u.utt_id for u in rep.utterances] == corpus.ids()
    assert rep.fallback_count == len(loops)
    for u in rep.utterances:
        assert u.merged == merge_texts(u.merge_inputs)
        assert u.merge_inputs[0] == u.anchor
    rep2 = run_mpa(corpus, one_run_scheme(), {"llm": MockBackend(fn=fn)}, workers=4)
    assert rep2.digest == rep.digest

    rep.write(tmp_path / "run")
    back = read_report(tmp_path / "run")
    assert back.lines() == rep.lines()
    assert back.config == rep.config
    summary = json.loads((tmp_path / "run" / "summary.json").read_text(encoding="utf-8"))
    assert summary["digest"] == rep.digest
    assert summary["fallback_utterances"] == len(loops)


def test_normalize_llm_inputs_flag():
    corpus = tiny_corpus([("u1", "あい", ["あ、い。", "あい", "あい"])])
    got = []
    backend = MockBackend(fn=lambda r: got.append(r.candidates[0]) or r.candidates[0])
    run_mpa(corpus, one_run_scheme(), {"llm": backend})
    run_mpa(corpus, one_run_scheme(normalize_llm_inputs=True), {"llm": backend})
    assert got == ["あ、い。", normalize("あ、い。")]


def test_missing_stream_policies():
    corpus = tiny_corpus([("u1", "あ", ["あ", "あ", "あ"]), ("u2", "い", ["い", "い"])])
    with pytest.raises(ValueError):
        run_mpa(corpus, one_run_scheme(), {"llm": MockBackend()})
    rep = run_mpa(corpus, one_run_scheme(missing="skip"), {"llm": MockBackend()})
    assert [u.utt_id for u in rep.utterances] == ["u1"]
    assert rep.skipped == ["u2"]


def test_unreferenced_utterances_are_not_scored():
    corpus = tiny_corpus([("u1", None, ["あ", "あ", "あ"])])
    rep = run_mpa(corpus, one_run_scheme(), {"llm": MockBackend()})
    assert rep.utterances[0].scores == {}
    assert rep.cer(MERGED) is None


def test_backend_stats():
    corpus = multi_stream_corpus(n_utts=5, length=5, seed=1)
    rep = run_mpa(corpus, one_run_scheme(), {"llm": MockBackend(unreachable=True, config=BackendConfig(max_retries=0))})
    assert rep.backend_stats == {"llm": {"requests": 5, "transport_failures": 5}}
    assert all(u.merged == u.anchor for u in rep.utterances)


# ---- baseline ROVER ------------------------------------------------------------------------

def test_baseline_rover_single_stream_is_identity():
    corpus = multi_stream_corpus(n_utts=20, length=10, seed=2)
    rep = run_baseline_rover(corpus, ["sysA@1"])
    assert all(u.merged == u.anchor for u in rep.utterances)


def test_baseline_rover_beats_inputs():
    corpus = multi_stream_corpus(n_utts=200, length=30, seed=3)
    rep = run_baseline_rover(corpus, ["sysA@1", "sysB@1", "sysC@1"])
    worst = max(rep.cer(s).corpus_cer for s in (ANCHOR, "sysB@1", "sysC@1"))
    assert rep.cer(MERGED).corpus_cer < worst


def test_baseline_rover_adversarial_stream_hurts():
    corpus = multi_stream_corpus(n_utts=200, length=30, error_rates=(0.1, 0.1, 0.1, 0.6), seed=5)
    three = run_baseline_rover(corpus, ["sysA@1", "sysB@1", "sysC@1"]).cer(MERGED).corpus_cer
    four = run_baseline_rover(corpus, ["sysA@1", "sysB@1", "sysC@1", "sysD@1"]).cer(MERGED).corpus_cer
    assert four > three


# ---- scheme files ---------------------------------------------------------------------------

SCHEME = {
    "anchor": "sysA@1",
    "ger_runs": [
        {"name": "B1", "source": "n_best_of_one_system", "streams": ["sysA@1", "sysA@2"], "backend": "llm", "template": "english_japanese"},
        {"name": "C1", "source": "one_best_of_n_systems", "streams": ["sysA@1", "sysB@1"], "backend": "llm"},
    ],
    "merge": {"alpha": 1.0},
    "guard": {"max_length_ratio": 2.5},
    "backends": {"llm": {"type": "mock", "mode": "echo"}},
}


def test_load_scheme(tmp_path):
    p = tmp_path / "scheme.json"
    p.write_text(json.dumps(SCHEME), encoding="utf-8")
    scheme, backends, templates = load_scheme(p)
    assert [r.name for r in scheme.ger_runs] == ["B1", "C1"]
    assert scheme.guard == GuardPolicy(max_length_ratio=2.5)
    assert set(templates) == {"english", "english_japanese"}
    assert scheme.streams() == ["sysA@1", "sysA@2", "sysB@1"]
    assert isinstance(backends["llm"], MockBackend)


@pytest.mark.parametrize("patch", [
    {"anchor": "sysA@0"},
    {"ger_runs": []},
    {"merge": {"alpha": 2.0}},
    {"guard": {"bogus": 1}},
    {"mode": "syllable"},
    {"backends": {}},
])
def test_bad_schemes(patch):
    with pytest.raises(ConfigError):
        scheme_from_dict({**SCHEME, **patch})


def test_bad_ger_runs():
    with pytest.raises(ConfigError):
        GerRun("x", N_BEST_OF_ONE_SYSTEM, ("sysA@1", "sysB@1"), "b")
    with pytest.raises(ConfigError):
        GerRun("x", ONE_BEST_OF_N_SYSTEMS, ("sysA@1", "sysA@2"), "b")
    with pytest.raises(ConfigError):
        GerRun(MERGED, ONE_BEST_OF_N_SYSTEMS, ("sysA@1",), "b")
    with pytest.raises(ConfigError):
        GerRun("x", "other", ("sysA@1",), "b")
