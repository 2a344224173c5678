"""Smoke test for the compiled extension.

Usage: python3 smoke_test.py [path/to/libregkernel.so]

Defaults to target/release/libregkernel.so at the workspace root. The library
is copied to a temporary directory as regkernel.so and imported from there.
"""

import importlib
import json
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[3]


def load(lib):
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, pathlib.Path(tmp) / "regkernel.so")
    sys.path.insert(0, tmp)
    return importlib.import_module("regkernel")


def main():
    lib = pathlib.Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "target" / "release" / "libregkernel.so"
    rk = load(lib)

    assert len(rk.enumerate(4, 2)) == 90

    dec = rk.decompose_vector([0.5, 0.34, 0.5, 0.17, 0.5, 0.34, -0.33], 6, 2)
    parts = [(p["kind"], p["order"], p["height"], sorted(i for l in p["levels"] for i in l["indices"])) for p in dec["parts"]]
    assert [(k.lower(), o, h, idx) for k, o, h, idx in parts] == [
        ("spread", 0, 3, [1, 4, 7]),
        ("regular", 0, 1, [2]),
        ("regular", 1, 2, [3, 5, 6]),
    ], parts

    rows = rk.sample_matrix(200, 5, seed=3)
    assert all(len(r) == 5 for r in rows)
    est, lo, hi = rk.deflated_norm_of(200, 5, rows, seed=1)
    assert lo <= est <= hi and est < 5.0
    assert rk.omega_holds(200, 5, rows, 1, 0.3)

    circ = [[(i + j) % 16 for j in range(4)] for i in range(16)]
    for r in circ:
        r.sort()
    closed = max(abs(math.sin(math.pi * k * 4 / 16) / math.sin(math.pi * k / 16)) for k in range(1, 16))
    _, lo, hi = rk.deflated_norm_of(16, 4, circ)
    assert lo <= closed * (1 + 1e-12) and closed <= hi, (lo, closed, hi)

    with tempfile.TemporaryDirectory() as tmp:
        cfg = pathlib.Path(tmp) / "fuzz.cfg"
        cfg.write_text("kind = ell-fuzz\nn = 100\nd = 3\ntrials = 5\nseed = 1\nout_dir = out\n")
        code, out_dir, hard = rk.run_config(str(cfg))
        assert code == 0 and hard == 0
        summary = json.loads((pathlib.Path(out_dir) / "summary.json").read_text())
        assert summary["schema"] == "regkernel.summary/1"

    try:
        rk.enumerate(7, 2)
    except ValueError:
        pass
    else:
        raise AssertionError("n = 7 should be rejected")
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
