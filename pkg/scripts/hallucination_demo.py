"""An LLM that loops on some utterances, merged with a faithful one and the ASR anchor.

Prints each stream's CER with and without the output guard.

    python3 scripts/hallucination_demo.py --loop-rate 0.1 --seed 6
"""

import argparse
import random

from mpager.llm_client import GuardPolicy, MockBackend
from mpager.pipeline import ANCHOR, MERGED, ONE_BEST_OF_N_SYSTEMS, GerRun, MpaScheme, run_mpa
from mpager.synthetic import multi_stream_corpus, repetition


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=6)
    ap.add_argument("--utts", type=int, default=300)
    ap.add_argument("--asr-rate", type=float, default=0.1)
    ap.add_argument("--loop-rate", type=float, default=0.1)
    ap.add_argument("--times", type=int, default=11, help="phrase repetitions in a looping output")
    args = ap.parse_args()

    corpus = multi_stream_corpus(args.utts, 40, (args.asr_rate,), args.seed, systems=["asr"])
    rng = random.Random(args.seed)
    looping = set(rng.sample(corpus.ids(), round(args.loop_rate * args.utts)))

    def repetitive(req):
        ref = corpus[req.utt_id].reference
        return repetition(ref[:10], ref[10:22] + "見逃してしまって", args.times) if req.utt_id in looping else ref

    backends = {
        "rep": MockBackend(fn=repetitive),
        "ok": MockBackend(fn=lambda req: corpus[req.utt_id].reference),
    }
    runs = [GerRun("looping", ONE_BEST_OF_N_SYSTEMS, ("asr@1",), "rep"),
            GerRun("faithful", ONE_BEST_OF_N_SYSTEMS, ("asr@1",), "ok")]
    for label, guard in (("guard off", GuardPolicy(enabled=False)), ("guard on", GuardPolicy())):
        rep = run_mpa(corpus, MpaScheme("asr@1", runs, guard=guard), backends)
        cells = "  ".join(f"{s} {100 * rep.cer(s).corpus_cer:6.2f}%" for s in (ANCHOR, "looping", "faithful", MERGED))
        print(f"{label:>9}: {cells}  fallbacks {rep.fallback_count}")


if __name__ == "__main__":
    main()
