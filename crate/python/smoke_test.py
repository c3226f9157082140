"""Smoke test for the graphgpo extension module.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml -o target/wheels
    pip install --force-reinstall target/wheels/graphgpo-*.whl
"""

import math
import pathlib
import sys

import graphgpo

ROOT = pathlib.Path(__file__).resolve().parent.parent
ROLLOUTS = ROOT / "crates" / "core" / "tests" / "data" / "merged_loop.jsonl"


def check_graph():
    rollouts = graphgpo.Rollouts.load(str(ROLLOUTS))
    assert len(rollouts) == 2, rollouts
    graph = graphgpo.Graph(rollouts)
    assert graph.node_count == 6 and graph.edge_count == 7
    d = graph.distances()
    assert d["node=s1"] == 2.0 and d["node=succ"] == 0.0 and d["node=s3_2"] is None
    assert graph.d_max == 2.0
    assert graph.to_dot().startswith("digraph")
    adv = graph.advantages(omega=0.1)
    assert [len(row) for row in adv["step_adv"]] == [5, 2]
    grpo = graph.advantages(algo="grpo")
    for m, row in enumerate(grpo["step_adv"]):
        assert all(a == grpo["episode_adv"][m] for a in row)
    again = graphgpo.Rollouts.from_jsonl(rollouts.to_jsonl())
    assert again.returns() == rollouts.returns()


def check_normalize():
    out = graphgpo.group_normalize([1.0, 2.0, 3.0, 6.0])
    mean = sum(out) / len(out)
    std = math.sqrt(sum((x - mean) ** 2 for x in out) / len(out))
    assert abs(mean) < 1e-9 and abs(std - 1.0) < 1e-9
    assert graphgpo.group_normalize([4.0]) == [0.0]


def check_training():
    csv, checkpoint = graphgpo.train(env="chaintrap", iters=3, seed=1, timing=False, eval_episodes=20)
    lines = csv.strip().splitlines()
    assert lines[0] == graphgpo.CSV_HEADER and len(lines) == 4
    sr = graphgpo.evaluate("chaintrap", checkpoint, episodes=50, seed=2)
    assert 0.0 <= sr <= 1.0
    try:
        graphgpo.train(env="nowhere")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown env accepted")


def main():
    check_graph()
    check_normalize()
    check_training()
    print("python smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
