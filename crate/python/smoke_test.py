"""Smoke test for the emotopic_py extension.

Build and run from the repository root:

    cargo build --release -p emotopic-python --features extension-module
    cp target/release/libemotopic_py.so python/emotopic_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import emotopic_py as ep


def main():
    probs = ep.softmax([1.0, 2.0, 3.0])
    assert all(abs(p - q) < 1e-5 for p, q in zip(probs, [0.09003, 0.24473, 0.66524])), probs

    assert ep.distinct_n([["a", "b", "a"], ["b", "c"]], 1) == 0.6
    assert ep.distinct_n([["a", "b", "a"], ["b", "c"]], 2) == 1.0
    assert ep.tokenize_text("  hello   world ") == ["hello", "world"]

    table = [("a", [1.0, 0.0]), ("b", [0.0, 1.0])]
    report = ep.score([["a", "b"]], [["a", "b"]], table)
    assert math.isclose(report["embedding_average"], 1.0)
    assert report["evaluated"] == 1

    with tempfile.TemporaryDirectory() as d:
        config = ep.synth_corpus(os.path.join(d, "toy"), pairs=80, seed=3)
        model = ep.Model.train(config)
        print(model)
        reply, trace = model.generate("cue_happy_0 hello there")
        tokens = reply.split()
        assert tokens.count(trace["emotion_keyword"]) == 1, (reply, trace)
        assert tokens.count(trace["topic_keyword"]) == 1, (reply, trace)
        path = os.path.join(d, "copy.bin")
        model.save(path)
        again = ep.Model.load(path)
        assert again.generate("cue_happy_0 hello there") == (reply, trace)
        print("reply:", reply)

    try:
        ep.Model.load("/nonexistent/checkpoint.bin")
    except ValueError:
        pass
    else:
        raise AssertionError("loading a missing checkpoint should fail")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
