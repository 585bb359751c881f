"""Score the four published correction examples and show what MPA GER does with them.

Each example is run with two scripted LLM passes that return the published
corrected output, merged with the ASR anchor.

    python3 scripts/published_examples_demo.py
"""

import sys
from pathlib import Path

from mpager.corpus import Corpus, Hypothesis, Utterance
from mpager.llm_client import MockBackend
from mpager.pipeline import ONE_BEST_OF_N_SYSTEMS, GerRun, MpaScheme, run_mpa

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
import published_examples as ex  # noqa: E402

EXAMPLES = {
    "ex1": (ex.EX1_HYP, ex.EX1_MPA, ex.EX1_REF),
    "ex2": (ex.EX2_HYP, ex.EX2_MPA, ex.EX2_REF),
    "ex3": (ex.EX3_HYP, ex.EX3_MPA, ex.EX3_REF),
    "ex4": (ex.EX4_HYP, ex.EX4_LOOP, ex.EX4_REF),
}


def main():
    utts = []
    for uid, (hyp, _, ref) in EXAMPLES.items():
        u = Utterance(uid, ref)
        u.hyps.add(Hypothesis("asr", 1, hyp))
        utts.append(u)
    script = {uid: out for uid, (_, out, _) in EXAMPLES.items()}
    backend = MockBackend("scripted", script)
    scheme = MpaScheme("asr@1", [GerRun("B", ONE_BEST_OF_N_SYSTEMS, ("asr@1",), "llm"),
                                 GerRun("C", ONE_BEST_OF_N_SYSTEMS, ("asr@1",), "llm")])
    rep = run_mpa(Corpus(utts), scheme, {"llm": backend})
    for u in rep.utterances:
        a, m = u.scores["anchor"], u.scores["merged"]
        reasons = ",".join(u.decisions["B"]["reasons"]) or "accepted"
        print(f"{u.utt_id}: anchor S/D/I {a.subs}/{a.dels}/{a.ins} -> merged S/D/I {m.subs}/{m.dels}/{m.ins}"
              f"  (guard: {reasons})")
        print(f"   merged: {u.merged}")


if __name__ == "__main__":
    main()
