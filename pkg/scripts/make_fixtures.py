"""Write the small graph fixtures used by the tests and the CLI examples.

Outputs (default: tests/fixtures):
  g0_nodes.jsonl, g0_edges.jsonl            four-node toy graph
  mag_case_nodes.jsonl, mag_case_edges.jsonl  academic case-study graph
  mag_case_questions.jsonl                  train/test questions over it
  mag_case_script.json                      scripted agent replies for the test question
"""
import argparse
import json
from pathlib import Path

from semiqa.evaluation import write_dataset
from semiqa.graph import write_graph
from semiqa.synthetic import case_study_graph, case_study_rules, case_study_training_questions, g0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    out = Path(ap.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(g0(), out / "g0_nodes.jsonl", out / "g0_edges.jsonl")
    write_graph(case_study_graph(), out / "mag_case_nodes.jsonl", out / "mag_case_edges.jsonl")
    write_dataset(case_study_training_questions(), out / "mag_case_questions.jsonl")
    script = {"rules": [{"match": m, "response": r} for m, r in case_study_rules()], "default": "Action 1: Finish[unknown]"}
    (out / "mag_case_script.json").write_text(json.dumps(script, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
