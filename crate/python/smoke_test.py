"""Smoke test for the `ofoh` extension module.

Build first:  maturin develop -m crates/python/Cargo.toml --release
Then run:     python python/smoke_test.py
"""

import math
import sys
import tempfile

import ofoh


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for x, y in zip(a, b)) and len(a) == len(b)


def main():
    assert close(ofoh.sparsemax([1.0, 0.0]), [1.0, 0.0])
    assert close(ofoh.sparsemax([0.5, 0.0]), [0.75, 0.25])
    assert close(ofoh.softmax([0.0, 0.0]), [0.5, 0.5])

    proj, orth = ofoh.orthogonal_decompose([1.0, 1.0], [1.0, 0.0])
    assert close(proj, [1.0, 0.0]) and close(orth, [0.0, 1.0])

    assert close(ofoh.vote([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), [2 / 3, 1 / 3])
    assert ofoh.pairwise_distances([[0.0, 0.0]], [[3.0, 4.0]]) == [[5.0]]

    report, cmc = ofoh.evaluate(
        [[0.0]], [1], [0],
        [[0.0], [1.0], [2.0]], [1, 2, 1], [0, 1, 1],
    )
    # The same-camera twin is excluded; the match sits at rank 2.
    assert cmc[:2] == [0.0, 1.0] and math.isclose(report["map"], 0.5)

    try:
        ofoh.RunConfig("attention=tanh\n")
    except ofoh.ConfigError as e:
        assert "line 1" in str(e), e
    else:
        raise AssertionError("bad attention accepted")

    with tempfile.TemporaryDirectory() as out:
        cfg = ofoh.RunConfig(
            "n_ids=8\nimgs_per_id=4\nn_cameras=2\ndem1_epochs=1\n",
            {"out": out, "seed": "5"},
        )
        assert cfg.get("lambda_div") == "0.01"
        try:
            ofoh.train_dem1(cfg)
        except ofoh.MissingPrerequisiteError:
            pass
        else:
            raise AssertionError("training without a corpus succeeded")
        n = ofoh.gen_data(cfg)
        assert n == 32, n
        logs = ofoh.train_dem1(cfg)
        assert len(logs) == 1 and math.isfinite(logs[0]["total"])

    print("ofoh smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
