"""Smoke test for the she_renorm extension module.

Build and install first:

    cd crates/py && maturin build --release -o dist && pip install dist/she_renorm-*.whl
    python python/smoke_test.py
"""

import math
import random

import she_renorm as sr


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    c0 = sr.c0()
    check(abs(c0 - 1 / (64 * math.sqrt(math.pi))) < 1e-17, "c0 closed form")
    check(abs(sr.limit_coefficient() ** 2 - c0) < 1e-17, "limit coefficient squares to c0")
    check(abs(sr.alternative_limit_coefficient() - 2 * sr.limit_coefficient()) < 1e-16, "alternative coefficient")

    f = sr.SpectralField([0.3, 1.0, -0.5, 0.25])
    xs = [j / 64 for j in range(64)]
    back = sr.SpectralField.from_grid([f(x) for x in xs], 4)
    check(max(abs(a - b) for a, b in zip(back.coeffs, f.coeffs)) < 1e-12, "grid round trip")
    check(abs(f.heat(0.01).heat(0.02).dot(f) - f.heat(0.03).dot(f)) < 1e-14, "heat semigroup")
    check(sr.heat_kernel(0.01, 0.0) > sr.heat_kernel(0.01, 0.3) > 0, "heat kernel peaks at 0")

    cfg = sr.default_sim_config(0.2)
    cfg.update(nonlinearity={"family": "zero"}, initial={"family": "smooth_sine", "a": 1.0, "k": 1},
               dt=0.002, t_end=0.1, save_times=[0.1])
    out = sr.simulate(cfg, seed=7)
    u = sr.SpectralField(out["u"][0])
    u0 = sr.SpectralField.unit(cfg["mode_cutoff"], 2)
    expect = math.sqrt(0.5) * math.exp(-4 * math.pi ** 2 * 0.1)
    check(abs(u.coeffs[1] - expect) < 1e-12 and abs(u.dot(u0) - expect) < 1e-12, "zero g gives heat flow")

    cfg.update(nonlinearity={"family": "sine", "a": 1.0})
    a, b = sr.simulate(cfg, seed=7, path=3), sr.simulate(cfg, seed=7, path=3)
    check(a["u"] == b["u"], "paths are reproducible")

    vals = sr.simulate_beta(0.2, [2, 3], [0.1, 0.5], seed=1, paths=400, dt=0.004)
    incs = [p[0][1] - p[0][0] for p in vals]
    stats = sr.MCStats()
    stats.extend(incs)
    exact = sr.beta_variance_exact(0.2, 2, 0.1, 0.5, dt=0.004)
    check(abs(stats.variance() / exact - 1) < 0.3, f"beta variance {stats.variance():.3e} near exact {exact:.3e}")

    left, right = sr.MCStats(), sr.MCStats()
    left.extend(incs[:150])
    for i, x in enumerate(incs[150:], start=150):
        right.push(x, index=i)
    left.merge(right)
    check(left.count == stats.count and abs(left.mean() - stats.mean()) < 1e-15, "MCStats merge")

    rng = random.Random(3)
    g1 = [rng.gauss(0, 1) for _ in range(500)]
    g2 = [rng.gauss(0, 1) for _ in range(500)]
    d, p = sr.ks_two_sample(g1, g2)
    check(0 <= d <= 1 and 0 <= p <= 1, f"KS statistic {d:.3f}, p {p:.3f}")

    sewn, w1 = sr.sew_ito(seed=5, level=12)
    check(abs(sewn - (w1 * w1 - 1) / 2) < 0.1, "sewn Ito integral near (W_1^2 - 1)/2")

    res = sr.run_suite("constants")
    check(len(res["rows"]) > 5 and "c0" in res["csv"], "constants suite runs")
    res = sr.run_suite("heat-check")
    check(res["pass"], "heat-check suite passes")
    try:
        sr.run_suite("constants", {"bogus": 1})
    except ValueError as e:
        check("bogus" in str(e), "unknown config field is rejected")
    else:
        raise SystemExit("FAIL unknown config field accepted")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
