import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trimix.errors import DegenerateMaskError, DeterminismError, DimensionError, RankError
from trimix.layers import gelu, gelu_backward
from trimix.tensor import (
    Tensor,
    gradient_check,
    masked_softmax,
    masked_softmax_backward,
    matmul,
    matmul_backward,
    transpose,
)


def matmul_oracle(a, b):
    """Naive triple loop, the independent reference for matmul."""
    m, k = a.shape
    k2, p = b.shape
    out = np.zeros((m, p), dtype=np.float64)
    for i in range(m):
        for j in range(p):
            for t in range(k):
                out[i, j] += float(a[i, t]) * float(b[t, j])
    return out


def softmax_oracle(raw, mask, axis="source"):
    """Direct exp/sum normalization per slice, no max trick."""
    raw = np.asarray(raw, dtype=np.float64)
    out = np.zeros_like(raw)
    n = raw.shape[0]
    for i in range(n):
        sl = (slice(None), i) if axis == "source" else (i, slice(None))
        active = mask[sl] != 0
        e = np.where(active, np.exp(raw[sl]), 0.0)
        out[sl] = e / e[active].sum()
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_projector_selects_row(self):
        proj = np.array([[1.0, 0.0], [0.0, 0.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(matmul(proj, b), [[5.0, 6.0], [0.0, 0.0]])

    def test_against_triple_loop_oracle(self, rng):
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        assert np.abs(matmul(a, b) - matmul_oracle(a, b)).max() < 1e-6

    def test_random_shape_triples(self, rng):
        """100 random (m, k, p) cases agree with the oracle to 1e-6."""
        for _ in range(100):
            m, k, p = rng.integers(1, 9, size=3)
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, p))
            assert np.abs(matmul(a, b) - matmul_oracle(a, b)).max() < 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.ones((2, 3)), np.ones((2, 2)))

    def test_backward_matches_finite_differences(self, rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        c = rng.standard_normal((3, 2))  # fixed cotangent
        da, db = matmul_backward(c, a, b)
        h = 1e-6
        for arr, grad in ((a, da), (b, db)):
            flat, gflat = arr.reshape(-1), grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float((matmul(a, b) * c).sum())
                flat[i] = orig - h
                down = float((matmul(a, b) * c).sum())
                flat[i] = orig
                assert abs((up - down) / (2 * h) - gflat[i]) < 1e-6

    def test_no_nonfinite_for_bounded_inputs(self, rng):
        a = rng.uniform(-1e4, 1e4, size=(6, 6))
        assert np.isfinite(matmul(a, a)).all()


class TestTranspose:
    def test_basic(self):
        assert np.array_equal(transpose([[1.0, 2.0], [3.0, 4.0]]), [[1.0, 3.0], [2.0, 4.0]])

    def test_row_to_column(self):
        assert transpose(np.ones((1, 5))).shape == (5, 1)

    def test_involution_bitwise(self, rng):
        a = rng.standard_normal((7, 3)).astype(np.float32)
        assert transpose(transpose(a)).tobytes() == a.tobytes()

    def test_rank1_raises(self):
        with pytest.raises(RankError):
            transpose(np.ones(3))

    def test_batched_rank3(self, rng):
        a = rng.standard_normal((2, 3, 4))
        out = transpose(a)
        assert out.shape == (2, 4, 3)
        assert np.array_equal(out[1], a[1].T)


class TestMaskedSoftmax:
    def test_uniform_full_mask(self):
        out = masked_softmax(np.ones((4, 4)), np.ones((4, 4)), axis="source")
        assert np.allclose(out, 0.25)

    def test_two_active_entries(self):
        mask = np.triu(np.ones((4, 4)))
        out = masked_softmax(np.ones((4, 4)), mask, axis="source")
        assert np.allclose(out[:, 1], [0.5, 0.5, 0.0, 0.0])
        assert out[2, 1] == 0.0 and out[3, 1] == 0.0

    def test_exp_ratio_column(self):
        raw = np.array([[0.0, np.log(3.0)], [123.0, 0.0]])  # (2,1) is dropped
        mask = np.triu(np.ones((2, 2)))
        out = masked_softmax(raw, mask, axis="source")
        assert np.allclose(out[:, 1], [0.75, 0.25])
        oracle = softmax_oracle(raw, mask, "source")
        assert np.abs(out - oracle).max() < 1e-6

    def test_matches_oracle_on_random_masks(self, rng):
        for _ in range(25):
            n = int(rng.integers(2, 9))
            raw = rng.standard_normal((n, n))
            mask = (rng.random((n, n)) < 0.4).astype(np.float32)
            np.fill_diagonal(mask, 1.0)
            for axis in ("source", "target"):
                out = masked_softmax(raw, mask, axis)
                assert np.abs(out - softmax_oracle(raw, mask, axis)).max() < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.sampled_from(["source", "target"]))
    def test_slice_sums_and_exact_zeros(self, n, seed, axis):
        """Active slices sum to 1 within 1e-6; dropped entries are exact zeros."""
        r = np.random.default_rng(seed)
        raw = r.uniform(-1e4, 1e4, size=(n, n))
        mask = (r.random((n, n)) < 0.5).astype(np.float32)
        np.fill_diagonal(mask, 1.0)
        out = masked_softmax(raw, mask, axis)
        assert np.isfinite(out).all()
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.all(out[mask == 0] == 0.0)
        sums = out.sum(axis=0 if axis == "source" else 1)
        assert np.abs(sums - 1.0).max() < 1e-6

    def test_degenerate_mask_raises(self):
        mask = np.ones((3, 3))
        mask[:, 1] = 0.0
        with pytest.raises(DegenerateMaskError, match="column 1"):
            masked_softmax(np.ones((3, 3)), mask, axis="source")

    def test_degenerate_row_raises_for_target_axis(self):
        mask = np.ones((3, 3))
        mask[2, :] = 0.0
        with pytest.raises(DegenerateMaskError, match="row 2"):
            masked_softmax(np.ones((3, 3)), mask, axis="target")

    def test_backward_finite_differences(self, rng):
        n = 5
        raw = rng.standard_normal((n, n))
        mask = np.triu(np.ones((n, n)))
        cot = rng.standard_normal((n, n))
        for axis in ("source", "target"):
            out = masked_softmax(raw, mask, axis)
            draw = masked_softmax_backward(cot, out, mask, axis)
            assert np.all(draw[mask == 0] == 0.0)
            h = 1e-6
            flat = raw.reshape(-1)
            dflat = draw.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = float((masked_softmax(raw, mask, axis) * cot).sum())
                flat[i] = orig - h
                down = float((masked_softmax(raw, mask, axis) * cot).sum())
                flat[i] = orig
                assert abs((up - down) / (2 * h) - dflat[i]) < 1e-5


class TestTensor:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Tensor(np.array([1.0, np.nan]))

    def test_rejects_rank4(self):
        with pytest.raises(RankError):
            Tensor(np.zeros((1, 1, 1, 1)))

    def test_grad_shape(self):
        t = Tensor(np.zeros((2, 3)))
        assert t.ensure_grad().shape == (2, 3)


class TestGradientCheck:
    def test_square_function(self):
        w = Tensor(np.array([3.0], dtype=np.float64))

        def f():
            w.zero_grad()
            w.ensure_grad()[...] = 2.0 * w.data
            return float((w.data**2).sum())

        assert gradient_check(f, [w]) < 1e-9

    def test_gelu_sum(self):
        w = Tensor(np.array([-1.0, 0.5, 2.0], dtype=np.float64))

        def f():
            w.zero_grad()
            w.ensure_grad()[...] = gelu_backward(w.data, np.ones_like(w.data))
            return float(gelu(w.data).sum())

        assert gradient_check(f, [w]) < 1e-7

    def test_nondeterministic_closure_raises(self):
        w = Tensor(np.array([1.0], dtype=np.float64))
        state = {"calls": 0}

        def f():
            state["calls"] += 1
            w.ensure_grad()[...] = 1.0
            return float(w.data.sum()) + state["calls"]

        with pytest.raises(DeterminismError):
            gradient_check(f, [w])

    def test_requires_float64(self):
        w = Tensor(np.array([1.0], dtype=np.float32))
        from trimix.errors import ConfigError

        with pytest.raises(ConfigError):
            gradient_check(lambda: 0.0, [w])
