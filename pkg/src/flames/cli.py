"""Command line entry point.

    flames repair --algo flames --corpus bugs.jsonl --model repair --out report.json
    flames costmodel sweep --alpha 1000 --n-in 10 --n-out 20 --vocab 100 --out sweep.csv
    flames corpus gen --seed 7 --n 50 --out bugs.jsonl
    flames compare a.json b.json
    flames ablate --corpus bugs.jsonl --out ablation.csv

Exit status: 0 on success, 2 for configuration errors, 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import campaign, costmodel, reward
from .decode import DEFAULT_ALPHA
from .errors import ConfigError, GenerationExhausted, PairingError

EXIT_CONFIG = 2
EXIT_IO = 3


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _positive(value):
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flames", description="Test-guided token search for program repair.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    rep = sub.add_parser("repair", help="run a repair campaign over a corpus")
    rep.add_argument("--algo", required=True, choices=campaign.ALGORITHMS)
    rep.add_argument("--corpus", required=True)
    rep.add_argument("--model", default="repair", help="repair | ngram[:ORDER] | table:PATH | remote:URL")
    rep.add_argument("--beam-size", type=_positive)
    rep.add_argument("--expansion-k", type=_positive, default=10)
    rep.add_argument("--policy", choices=[p.value for p in campaign.Policy], default="pucb-var")
    rep.add_argument("--max-patches", type=_positive, default=200)
    rep.add_argument("--timeout-secs", type=float, default=60.0)
    rep.add_argument("--memory-cap", type=_positive)
    rep.add_argument("--max-new-tokens", type=_positive, default=8)
    rep.add_argument("--alpha", type=_positive, default=DEFAULT_ALPHA)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--workers", type=_positive, default=1)
    rep.add_argument("--collect-all", action="store_true", help="keep searching after the first plausible patch")
    rep.add_argument("--no-timing", action="store_true", help="omit wall-clock fields (byte-stable output)")
    rep.add_argument("--out", required=True)

    cost = sub.add_parser("costmodel", help="analytic memory model")
    cost_sub = cost.add_subparsers(dest="cost_command", required=True)
    sw = cost_sub.add_parser("sweep", help="evaluate the memory model over beam sizes")
    sw.add_argument("--alpha", type=int, required=True)
    sw.add_argument("--n-in", type=int, required=True)
    sw.add_argument("--n-out", type=_positive, required=True)
    sw.add_argument("--vocab", type=_positive, required=True)
    sw.add_argument("--cap", type=int)
    sw.add_argument("--ks", type=_positive, nargs="+", default=list(costmodel.BEAM_GRID))
    sw.add_argument("--out", required=True)

    corp = sub.add_parser("corpus", help="bug corpus utilities")
    corp_sub = corp.add_subparsers(dest="corpus_command", required=True)
    gen = corp_sub.add_parser("gen", help="generate a seeded bug corpus")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--n", type=_positive, required=True)
    gen.add_argument("--out", required=True)

    cmp_ = sub.add_parser("compare", help="paired comparison of two campaign reports")
    cmp_.add_argument("report_a")
    cmp_.add_argument("report_b")
    cmp_.add_argument("--out", default="-")

    abl = sub.add_parser("ablate", help="policy x expansion-size grid for the tree search")
    abl.add_argument("--corpus", required=True)
    abl.add_argument("--model", default="repair")
    abl.add_argument("--policies", nargs="+", choices=[p.value for p in campaign.Policy],
                     default=[p.value for p in campaign.Policy])
    abl.add_argument("--ks", type=_positive, nargs="+", default=[3, 5, 7, 10])
    abl.add_argument("--max-patches", type=_positive, default=200)
    abl.add_argument("--timeout-secs", type=float, default=60.0)
    abl.add_argument("--out", required=True)
    return parser


def _repair(args) -> int:
    cfg = campaign.CampaignConfig(
        algorithm=args.algo, corpus_path=args.corpus, model=args.model, beam_size=args.beam_size,
        expansion_k=args.expansion_k, policy=args.policy, max_patches=args.max_patches,
        timeout=args.timeout_secs, memory_cap=args.memory_cap, seed=args.seed,
        max_new_tokens=args.max_new_tokens, alpha=args.alpha, stop_on_plausible=not args.collect_all,
        workers=args.workers)
    report = campaign.run_campaign(cfg)
    _write(args.out, report.dumps(timing=not args.no_timing) + "\n")
    agg = report.aggregates()
    logging.getLogger("flames").info("plausible %d/%d, oom rate %.3f", agg["plausible_count"], agg["bugs"],
                                     agg["oom_rate"])
    return 0


def _sweep(args) -> int:
    params = costmodel.MemoryModelParams(args.alpha, 1, args.n_in, args.n_out, args.vocab)
    rows = costmodel.sweep(params, args.ks, cap=args.cap)
    _write(args.out, costmodel.sweep_csv(rows))
    return 0


def _corpus_gen(args) -> int:
    reward.write_corpus(args.out, reward.generate_bug_corpus(args.seed, args.n))
    return 0


def _compare(args) -> int:
    summary = campaign.compare(campaign.load_report(args.report_a), campaign.load_report(args.report_b))
    _write(args.out, json.dumps(summary.to_json(), indent=2) + "\n")
    return 0


def _ablate(args) -> int:
    corpus = reward.read_corpus(args.corpus)
    base = campaign.CampaignConfig(algorithm="flames", model=args.model, max_patches=args.max_patches,
                                   timeout=args.timeout_secs)
    rows = campaign.run_ablation(base, corpus, args.policies, args.ks)
    _write(args.out, campaign.ablation_csv(rows))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "repair": _repair,
        "costmodel": _sweep,
        "corpus": _corpus_gen,
        "compare": _compare,
        "ablate": _ablate,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, PairingError, GenerationExhausted) as exc:
        print(f"flames: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"flames: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"flames: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
