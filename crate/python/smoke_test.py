"""Smoke test for the lddmm_py extension module.

Build and install first:  pip install -e crates/python --no-build-isolation
"""

import math

import lddmm_py


def blob(n, cx, cy, r):
    return [
        [1.0 / (1.0 + math.exp((math.hypot(x - cx, y - cy) - r) * 1.5)) for x in range(n)]
        for y in range(n)
    ]


def main():
    assert lddmm_py.roc_auc([0.9, 0.1, 0.5], [1, -1, 1]) == 1.0
    assert lddmm_py.roc_auc([0.5, 0.5], [1, -1]) == 0.5

    a = blob(16, 7.5, 8.0, 4.0)
    b = blob(16, 8.5, 8.0, 4.0)
    same = lddmm_py.register(a, a)
    assert same["metric_value"] < 1e-10
    moved = lddmm_py.register(a, b, alpha=1.0, time_steps=6)
    assert moved["match_residual"] < moved["energy_trace"][0]
    assert all(x >= y for x, y in zip(moved["energy_trace"], moved["energy_trace"][1:]))

    op = lddmm_py.Operator(8, 8, alpha=0.5, beta=1.0)
    vx = [[math.sin(x + 2 * y) for x in range(8)] for y in range(8)]
    vy = [[math.cos(3 * x - y) for x in range(8)] for y in range(8)]
    lx, ly = op.apply_l(vx, vy)
    bx, by = op.apply_linv(lx, ly)
    err = max(abs(p - q) for r1, r2 in zip(bx + by, vx + vy) for p, q in zip(r1, r2))
    assert err < 1e-10, err

    model = lddmm_py.Klda([[1.0, 0.0], [0.0, 1.0]], [1, -1], ridge=1e-3, relative=False)
    assert max(abs(x - y) for x, y in zip(model.w, [1e3, -1e3])) < 1e-9
    assert model.decision([1.0, 0.0]) > 0 > model.decision([0.0, 1.0])
    assert model.solve_residual() < 1e-8

    assert abs(lddmm_py.mutual_information(a, a) - lddmm_py.mutual_information(a, a, bins=32)) == 0.0

    images, labels = lddmm_py.generate_shapes(n_per_class=3, size=32, seed=1)
    assert len(images) == 6 and labels.count(1) == 3 and labels.count(-1) == 3
    result = lddmm_py.train(images, labels, em_iters=1, time_steps=4, energy_tol=1e-3)
    trace = result.trace()
    assert len(trace) == 1 and trace[0]["registrations"] == 30
    scores = result.score(images[:2])
    assert all(math.isfinite(s) for s in scores)
    print(f"ok: alpha={result.alpha:.4g} gamma={result.gamma:.4g} scores={[round(s, 3) for s in scores]}")


if __name__ == "__main__":
    main()
