"""Smoke test for the poisfactor extension module.

Build and install with `maturin develop -m crates/python/Cargo.toml
--features extension-module`, or copy target/*/libpoisfactor.so next to
this file as poisfactor.so, then run `python python/smoke_test.py`.
"""

import math

import poisfactor as pf


def main():
    assert pf.bell_number(5) == 52
    parts = pf.enumerate_partitions(3)
    assert len(parts) == 5 and "[1 2 3]" in parts, parts
    assert len(pf.successor_models("[1][2][3]")) == 3
    assert pf.type_signature("[1 2][3 4][5]") == "(2,2,1)"

    rows = pf.asp_table(5)
    asp = {tuple(r["model_type"]): r["asp"] for r in rows}
    assert abs(asp[(1, 1, 1, 1, 1)] - 0.4408) < 1e-3, asp

    data = pf.generate("[1 2 3][4 5]", 400, seed=7)
    assert len(data) == 400 and len(data[0]) == 5
    assert data == pf.generate("[1 2 3][4 5]", 400, seed=7)

    fit = pf.fit(data, "[1 2 3][4 5]")
    assert fit["converged"]
    assert math.isclose(fit["aic"], -2 * fit["loglik"] + 2 * fit["n_params"])

    trace = pf.select(data)
    print("selected:", trace["final"]["partition"], "aic", round(trace["final"]["aic"], 2))

    mixed = pf.fit_mixed(data, "[1 2 3][4 5]", moved=1, target=2)
    assert mixed["loglik"] >= fit["loglik"] - 1e-8
    print("mixed pi:", round(mixed["mixed"]["pi"], 3))

    desc = pf.describe(data)
    assert desc["n_obs"] == 400
    print("ok")


if __name__ == "__main__":
    main()
