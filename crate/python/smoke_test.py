"""Smoke test for the tapergp extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import math

import tapergp


def main():
    locs = tapergp.LocationSet.grid(10)
    assert len(locs) == 400

    model = tapergp.Model("A")
    assert model.params()["rho.11"] == 5.0
    assert math.isclose(model.cov(0.0, 0, 1), 0.36)

    full = tapergp.Kriging(locs, model)
    tapered = tapergp.Kriging(locs, model, tapergp.Taper("i", 3.0))
    mspe_full = full.exact_mspe([0.0, 0.0])
    mspe_tap = tapered.exact_mspe([0.0, 0.0])
    print(f"MSPE untapered {mspe_full:.4f}, gamma=3 {mspe_tap:.4f}")
    assert abs(mspe_full - 0.1098) < 0.0015
    assert abs(mspe_tap - 0.1155) < 0.0015

    curve = tapergp.mspe_curve(model, locs, "i", [4.0, 8.0, math.inf])
    assert curve[-1][3] == 1.0
    assert all(row[3] >= 1.0 - 1e-12 for row in curve)

    small = tapergp.LocationSet.grid(3)
    (z,) = tapergp.simulate(model, small, 1, 42)
    assert len(z) == 2 * len(small)
    value = tapergp.neg_loglik(model, small, z, model.theta0(), tapergp.Taper("i", 2.5))
    assert math.isfinite(value)
    fits = tapergp.fit(model, small, z, [math.inf, 3.0], max_evals=200)
    assert [f.gamma for f in fits] == [math.inf, 3.0]
    assert all(len(f.theta) == 6 for f in fits)

    csv = tapergp.run_scenario(
        "name = py\nmode = mspe_curve\ntaper.gamma = 2,inf\nm = 3\nseed = 1"
    )
    assert csv.splitlines()[0].startswith("scenario,seed,n,rep,gamma")

    try:
        tapergp.run_scenario("name = py\nmode = mspe_curve\ntaper.gamma =")
    except ValueError as err:
        print(f"config error reported: {err}")
    else:
        raise AssertionError("empty gamma list accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
