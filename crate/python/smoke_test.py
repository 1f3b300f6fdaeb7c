"""Smoke test for the hte_eval extension module.

Locates the compiled cdylib (release preferred, debug fallback), imports it,
and exercises dataset generation, restricted fitting, and the full
evaluation. Build the module first:

    cargo build -p hte-py --release --features extension-module
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]


def load_module():
    candidates = [
        REPO_ROOT / "target" / "release" / "libhte_eval.so",
        REPO_ROOT / "target" / "debug" / "libhte_eval.so",
        REPO_ROOT / "target" / "release" / "libhte_eval.dylib",
        REPO_ROOT / "target" / "debug" / "libhte_eval.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "libhte_eval not found; run "
            "`cargo build -p hte-py --release --features extension-module` first"
        )
    stage = Path(tempfile.mkdtemp(prefix="hte_eval_"))
    shutil.copy2(built, stage / "hte_eval.so")
    sys.path.insert(0, str(stage))
    import hte_eval

    return hte_eval


def main():
    hte_eval = load_module()

    y, a, x = hte_eval.generate_dataset("linear_b", 80, seed=11)
    assert len(y) == len(a) == len(x) == 80
    assert set(a) == {0, 1}
    assert all(len(row) == 2 for row in x)

    model = hte_eval.fit_restricted_model(y, a, x, learner="ols", seed=3)
    tau = model.tau_star
    assert math.isfinite(tau)
    gaps = [model.predict(1, row) - model.predict(0, row) for row in x[:20]]
    assert all(abs(g - tau) < 1e-9 for g in gaps), "restricted gap must be constant"

    report = hte_eval.evaluate(y, a, x, learner="ols", k=4, reps=2, alphas=[0.05, 0.2], seed=9)
    assert report["schema_version"] == 1
    assert 0.0 <= report["h_two_sided"] <= 1.0
    assert 0.0 <= report["h_one_sided"] <= 1.0
    assert len(report["intervals"]) == 2
    for interval in report["intervals"]:
        assert math.isfinite(interval["lower"]) and math.isfinite(interval["upper"])
        assert interval["lower"] <= interval["upper"]

    round_trip = json.loads(json.dumps(report))
    assert round_trip == report

    again = hte_eval.evaluate(y, a, x, learner="ols", k=4, reps=2, alphas=[0.05, 0.2], seed=9)
    report.pop("wall_time_seconds")
    again.pop("wall_time_seconds")
    assert report == again, "evaluation must be deterministic for a fixed seed"

    try:
        hte_eval.evaluate(y, a, x, alphas=[1.5])
    except ValueError:
        pass
    else:
        raise AssertionError("alpha outside (0,1) must raise ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
