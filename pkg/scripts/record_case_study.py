"""Record the academic case-study run to a cassette, then replay it from the cassette.

By default the recorded backend is the scripted two-round trace. With
``--remote`` the replies come from the live endpoint in SEMIQA_API_BASE, so
the cassette captures whatever that model does.
"""
import argparse
from pathlib import Path

from semiqa.agent import Agent, AgentConfig
from semiqa.llm import RecordReplayBackend, RemoteBackend, ScriptedBackend
from semiqa.matcher import Question
from semiqa.synthetic import FRIEDRICH_QUESTION, case_study_graph, case_study_plan, case_study_rules

DEFAULT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "case_study_cassette.jsonl"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cassette", default=str(DEFAULT))
    ap.add_argument("--remote", action="store_true", help="record against the live chat endpoint")
    args = ap.parse_args()

    cassette = Path(args.cassette)
    if cassette.exists():
        cassette.unlink()
    inner = RemoteBackend() if args.remote else ScriptedBackend(case_study_rules())
    g = case_study_graph()
    q = Question("q1", FRIEDRICH_QUESTION)

    recorded = Agent(g, RecordReplayBackend(cassette, inner, "record"), AgentConfig()).run(q, case_study_plan())
    replayed = Agent(g, RecordReplayBackend(cassette), AgentConfig()).run(q, case_study_plan())

    for step in replayed.transcript:
        print(f"Thought: {step.thought}\nAction: {step.action}\nObservation: {step.observation}\n")
    print(f"recorded answers {recorded.answers}, replayed answers {replayed.answers}, rounds {replayed.rounds_used}")
    print(f"cassette -> {cassette}")


if __name__ == "__main__":
    main()
