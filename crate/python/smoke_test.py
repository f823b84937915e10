"""Smoke test for the tsrate_py extension module.

Build the module first:

    cargo build --release -p tsrate-py

then run `python3 python/smoke_test.py`. If `tsrate_py` is not importable the
script copies the freshly built shared library into a temp dir and imports
it from there.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load():
    try:
        import tsrate_py  # noqa: F401
        return sys.modules["tsrate_py"]
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libtsrate_py.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "tsrate_py.so")
            sys.path.insert(0, str(tmp))
            import tsrate_py
            return tsrate_py
    sys.exit("tsrate_py not found; run `cargo build -p tsrate-py` first")


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    ts = load()
    checks = []

    def check(name, ok):
        checks.append((name, bool(ok)))
        print(f"{'PASS' if ok else 'FAIL'}  {name}")

    truth = [10.0, 11.0, 12.0]
    pred = [11.0, 11.0, 10.0]
    expected = sum(2 * abs(p - t) / (abs(t) + abs(p)) for t, p in zip(truth, pred)) / 3
    check("smape", close(ts.smape(truth, pred), expected))

    train = [1.0, 2.0, 4.0, 7.0]
    naive = (1 + 2 + 3) / 3
    check("mase", close(ts.mase(train, truth, pred), (1 + 0 + 2) / 3 / naive))

    check("sign_accuracy", close(ts.sign_accuracy([2.0, 3.0, 1.0], [2.5, 2.0, 3.0], 1.0), 1 / 3))

    t, dof, p = ts.students_t([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
    check("students_t", close(t, -math.sqrt(1.5)) and dof == 4 and 0 < p < 1)
    check("t_critical", abs(ts.t_critical(95.0, 10.0) - 2.228138851986) < 1e-9)

    check("array_split", ts.array_split(8, 3) == [(0, 3), (3, 6), (6, 8)])

    scores = [
        ("WRS_I", "S_a", "P1", "industry", 7.2),
        ("WRS_I", "S_b", "P1", "industry", 4.8),
        ("WRS_I", "S_r", "P1", "industry", 7.2),
    ]
    rated = ts.rate(scores)
    ratings = {m: r for m, _, r in rated["WRS_I"]["P1"]}
    check("rate", ratings == {"S_b": 1, "S_a": 2, "S_r": 2})
    single = ts.rate([("WRS_I", "S_a", "P1", "industry", 7.2)], levels=5)
    check("rate single model", single["WRS_I"]["P1"][0][2] == 5)

    re, im = ts.morlet(0.0, 1.0)
    check("morlet", close(re, math.pi ** -0.25) and im == 0.0)

    hist = [float(i + 1) for i in range(10)]
    dropped = ts.perturb_numeric("P1", hist, 5)
    missing = ts.perturb_numeric("P3", hist, 5)
    check("perturb", dropped[4] == 0.0 and dropped[9] == 0.0 and missing[4] is None and missing[0] == 1.0)

    treated = [i % 2 == 0 for i in range(40)]
    conf = ["a" if i < 20 else "b" for i in range(40)]
    outcome = [(1.0 if c == "a" else 5.0) + (2.0 if t else 0.0) for t, c in zip(treated, conf)]
    eff = ts.estimate_effect(treated, conf, outcome)
    check("estimate_effect", close(eff["ape"], 2.0) and close(eff["pie_percent"], 0.0))

    try:
        ts.smape([1.0], [1.0, 2.0])
        check("length mismatch raises", False)
    except ValueError:
        check("length mismatch raises", True)

    config = ROOT / "crates" / "core" / "tests" / "fixtures" / "baselines.toml"
    report = ts.run(str(config))
    check("run", report["windows"] > 0 and "WRS_I" in report["ratings"] and len(report["scores"]) > 0)

    failed = [n for n, ok in checks if not ok]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
