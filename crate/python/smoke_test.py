"""Smoke test for the pyopindex extension module.

Build and install first:  pip install -e crates/python --no-build-isolation
"""

import json
import math

import pyopindex


def main():
    assert pyopindex.toeplitz_example_index(64) == -1.0

    r = pyopindex.toeplitz_symbol_index(2, epsilon=0.4)
    assert (r["winding"], r["index"], r["certain"]) == (2, -2, True), r

    assert abs(pyopindex.witten_closed_form(1.4) - 0.7) < 1e-12

    well = pyopindex.SquareWell(5.0, 1.0)
    s = well.s_matrix(0.8)
    gram = [[sum(s[k][i].conjugate() * s[k][j] for k in range(2)) for j in range(2)] for i in range(2)]
    assert all(abs(gram[i][j] - (i == j)) < 1e-8 for i in range(2) for j in range(2))
    assert well.bound_states() == 2

    lev = well.levinson()
    assert lev["accepted"] and lev["residual"] < 0.05, lev["residual"]

    idx = well.corrected_index()
    assert idx["index"] == 2 and idx["decomposition_residual"] < 0.05, idx

    depth = pyopindex.resonance_depth(1.0)
    assert abs(depth - math.pi ** 2 / 4) < 1e-5
    assert pyopindex.SquareWell(depth, 1.0).levinson()["resonance_flag"] == 1

    assert abs(pyopindex.witten_index_sigma([[0, -1], [-1, 0]]) - 0.5) < 1e-6
    assert abs(pyopindex.witten_index_sigma([[1, 0], [0, 1]])) < 1e-6

    code, text = pyopindex.run(["levinson", "--well-depth", "2"])
    record = json.loads(text)
    assert code == 0 and record["status"] == "accepted", record
    code, _ = pyopindex.run(["witten-estimate", "--mu", "abc"])
    assert code == 2

    print("pyopindex smoke test passed")


if __name__ == "__main__":
    main()
