"""Smoke test for the pycellhom extension.

Build and install first:
    pip install maturin
    pip install --no-build-isolation ./crates/python
"""

import math
import os
import tempfile

import pycellhom as ch


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    c = ch.iso_tensor(1.0, 1.0)
    d = ch.invert(c)
    assert close(d[0][0], 0.4, 1e-12)

    # homogeneous cell reproduces its phase
    cell = ch.Cell.homogeneous([3, 3, 3], c)
    r = ch.homogenize(cell)
    err = max(abs(r["ch"][i][j] - c[i][j]) for i in range(6) for j in range(6))
    assert err < 1e-10, err

    # laminate shear entries: harmonic 8/3 across the layers, arithmetic 3 along them
    lam = ch.Cell.fixture("laminate")
    r = ch.homogenize(lam)
    m = r["ch"]
    assert close(m[3][3], 3.0, 1e-8) and close(m[4][4], 8 / 3, 1e-8) and close(m[5][5], 8 / 3, 1e-8)
    lo, hi = ch.voigt_reuss(lam, m)
    assert lo > -1e-8 and hi > -1e-8

    # all solve routes agree on the random fixture
    cell = ch.Cell.fixture("random")
    chm = ch.homogenize(cell)["ch"]
    a = [1.0, -0.5, 0.25, 0.3, -0.2, 0.1]
    s = ch.apply(chm, a)
    ref = ch.solve(cell, "strain-driven", a)["strain"]
    for method in ["stress-driven", "stress-uzawa", "strain-route"]:
        e = ch.solve(cell, method, s)["strain"]
        num = sum((x - y) ** 2 for p, q in zip(e, ref) for x, y in zip(p, q))
        den = sum(x * x for p in ref for x in p)
        assert math.sqrt(num / den) < 1e-6, method

    # dense oracle on a tiny cell
    tiny = ch.Cell([2, 2, 2], [0, 1, 1, 0, 1, 0, 0, 1], [ch.iso_tensor(1, 1), ch.iso_tensor(3, 5)])
    dense = ch.brute_force_oracle(tiny, a)
    free = ch.solve(tiny, "strain-driven", a, tol=1e-12)["strain"]
    assert max(abs(x - y) for p, q in zip(dense, free) for x, y in zip(p, q)) < 1e-9

    checks = ch.verify(cell)
    assert all(passed for _, _, _, passed in checks), [c for c in checks if not c[3]]

    try:
        ch.homogenize(lam, max_iter=1)
    except ch.NotConvergedError:
        pass
    else:
        raise AssertionError("expected NotConvergedError")

    with tempfile.TemporaryDirectory() as tmp:
        with open(os.path.join(tmp, "cell.vox"), "w") as f:
            f.write(lam.to_voxel_text())
        cfg = os.path.join(tmp, "run.cfg")
        with open(cfg, "w") as f:
            f.write("voxel_path = cell.vox\ntask = homogenize\n")
        assert ch.run_config(cfg) == 0
        assert os.path.exists(os.path.join(tmp, "CH.txt"))

    print(f"smoke test ok ({len(checks)} verification checks passed)")


if __name__ == "__main__":
    main()
