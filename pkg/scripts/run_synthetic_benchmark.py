"""Run the offline oracle benchmark and write a report.

Each question names a topic node whose gold answer lies within a few hops.
The plan is the set of shortest target paths and the agent follows it, so
this measures the retrieval machinery rather than a language model.
"""
import argparse
import random
import time

from semiqa.agent import AgentConfig
from semiqa.embeddings import HashingEmbedder
from semiqa.evaluation import format_table, run_eval, write_report
from semiqa.synthetic import answer_with_oracle_plan, oracle_benchmark


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--questions", type=int, default=100)
    ap.add_argument("--max-hops", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--t", type=int, default=5)
    ap.add_argument("--prune-mode", default="score", choices=["score", "plan_first"])
    ap.add_argument("--out", default="runs/synthetic")
    args = ap.parse_args()

    items = oracle_benchmark(random.Random(args.seed), args.questions, max_hops=args.max_hops)
    by_id = {it.question.id: it for it in items}
    provider = HashingEmbedder(64)
    config = AgentConfig(k=args.k, t=args.t, prune_mode=args.prune_mode)
    start = time.perf_counter()
    result = run_eval([it.question for it in items], lambda q: answer_with_oracle_plan(by_id[q.id], provider, config))
    print(format_table({"synthetic": result}, method="oracle"))
    print(f"{result.n} questions in {time.perf_counter() - start:.2f}s")
    print(f"report -> {write_report(result, args.out, 'synthetic', vars(args))}")


if __name__ == "__main__":
    main()
