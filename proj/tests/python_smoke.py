"""Smoke test for the python bindings: exercises each exported operation
against numpy references."""

import math

import numpy as np

import pgcn


def test_matmul():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))
    np.testing.assert_allclose(pgcn.matmul(a, b), a @ b, rtol=0, atol=1e-12)


def test_elementwise():
    x = np.array([[-1.0, 2.0]])
    np.testing.assert_allclose(pgcn.elementwise("relu", x), np.maximum(x, 0.0))
    np.testing.assert_allclose(pgcn.elementwise("tanh", x), np.tanh(x))
    y = np.array([[3.0, 4.0]])
    np.testing.assert_allclose(pgcn.elementwise("add", x, y), x + y)


def test_conv3d():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 4, 5, 5))
    k = rng.standard_normal((3, 2, 3, 3, 3))
    out = pgcn.conv3d(x, k, (1, 1, 1), (1, 1, 1))
    assert out.shape == (3, 4, 5, 5)
    # one hand-checked output element
    acc = 0.0
    for ic in range(2):
        for dt in range(3):
            for dh in range(3):
                for dw in range(3):
                    it, ih, iw = 2 + dt - 1, 2 + dh - 1, 2 + dw - 1
                    acc += x[ic, it, ih, iw] * k[1, ic, dt, dh, dw]
    assert abs(out[1, 2, 2, 2] - acc) < 1e-12


def test_max_pool_cube():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4, 4, 4))
    out = pgcn.max_pool_cube(x, (1, 1, 1))
    np.testing.assert_allclose(out, x[:, 0:3, 0:3, 0:3].max(axis=(1, 2, 3)))


def test_coordinate_mapping():
    layers = [(((1, 7, 7), (1, 2, 2), (0, 3, 3))), (((1, 3, 3), (1, 2, 2), (0, 1, 1)))]
    idx = pgcn.map_coordinate((1, 224, 224), layers, (0.0, 100.0, 100.0))
    assert tuple(idx) == (0, 25, 25)
    centers = pgcn.receptive_centers((1, 7, 7), [((1, 3, 3), (1, 2, 2), (0, 0, 0))])
    assert centers[1] == [1.0, 3.0, 5.0]


def test_skeleton():
    names = pgcn.skeleton_joints("sub15")
    assert len(names) == 16  # 15 joints + virtual root
    mats = pgcn.adjacency("sub15")
    assert len(mats) == 3
    for m in mats:
        assert m.shape == (16, 16)
        sums = m.sum(axis=0)
        assert np.all((np.abs(sums) < 1e-12) | (np.abs(sums - 1.0) < 1e-12))
    # the self-subset matrix is the identity
    np.testing.assert_allclose(mats[1], np.eye(16))


def test_synth_sample():
    a = pgcn.synth_sample(seed=4, split=0, index=5)
    b = pgcn.synth_sample(seed=4, split=0, index=5)
    assert a["label"] == 5
    np.testing.assert_array_equal(a["clip"], b["clip"])
    assert a["clip"].shape[0] == 3
    assert a["pose"].shape[2] == 3


def test_fuse_scores():
    ln = math.log
    fused = pgcn.fuse_scores([
        [ln(0.6), ln(0.2), ln(0.2)],
        [ln(0.6), ln(0.2), ln(0.2)],
        [ln(0.05), ln(0.9), ln(0.05)],
    ])
    assert abs(fused[0] - (0.6 + 0.6 + 0.05) / 3) < 1e-9
    assert abs(fused[1] - (0.2 + 0.2 + 0.9) / 3) < 1e-9
    assert fused[1] > fused[0]


def test_gradcheck():
    results = pgcn.gradcheck("matmul", seed=0)
    assert len(results) == 1
    assert results[0]["passed"]
    assert results[0]["max_rel_error"] < pgcn.gradcheck_tolerance


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for test in tests:
        test()
        print(f"ok {test.__name__}")
    print(f"{len(tests)} python binding checks passed")


if __name__ == "__main__":
    main()
