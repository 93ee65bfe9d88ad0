"""Smoke test for the loclim extension module."""

import json
import math

import loclim


def main():
    spec = loclim.ProcessSpec.fbm(0.5)
    assert abs(spec.covariance(0.3, 0.7) - 0.3) < 1e-12

    path = loclim.sample_path(spec, 1.0, 256, seed=3)
    again = loclim.sample_path(spec, 1.0, 256, seed=3)
    assert path.values == again.values
    assert path.values[0][0] == 0.0
    value = path.estimate(0.01)
    assert value > 0.0

    mean = loclim.expected_estimate(spec, 0.01)
    closed = 2.0 * (math.sqrt(1.01) - 0.1) / math.sqrt(2.0 * math.pi)
    assert abs(mean - closed) < 1e-9, (mean, closed)

    regime, exponent, has_log, summary = loclim.classify("1/3", dim=1, k=[0.0], order=2)
    assert regime == "CLT" and exponent == -0.5 and not has_log
    print(summary)

    value, residual = loclim.constant("Dtilde1", "1/5")
    assert abs(value - 3.0 / (2.0 * 0.2 * math.sqrt(2.0 * math.pi))) < 1e-6
    print(f"Dtilde1 = {value} (residual {residual:.1e})")

    m, se = loclim.moment_formula(spec, [(0.0, 1.0)], [2], samples=20000)
    assert abs(m - math.sqrt(2.0 / math.pi)) < 3.0 * se + 1e-9
    assert loclim.moment_formula(spec, [(0.0, 1.0)], [1])[0] == 0.0

    assert abs(loclim.heat_kernel_deriv([0.0], 1.0, [0.0]) - 1.0 / math.sqrt(2.0 * math.pi)) < 1e-14

    cfg = """
seed = 2
replicates = 8
[process]
hurst = "1/3"
[grid]
eps0 = 0.0625
count = 3
eps_ref = 0.001
steps = 512
"""
    record = json.loads(loclim.run_experiment("clt", cfg))
    assert record["regime"]["regime"] == "CLT"
    assert len(record["values"]) == 3

    try:
        loclim.run_experiment("clt", cfg + "bogus = 1\n")
    except ValueError as err:
        assert "bogus" in str(err)
    else:
        raise AssertionError("unknown key accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
