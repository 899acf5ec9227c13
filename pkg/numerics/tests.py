import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from .kernels import (
    NonFiniteError,
    ShapeError,
    as_matrix,
    check_finite,
    concat_rows,
    dropout_mask,
    elementwise,
    fan_in_bound,
    finite_difference_grad,
    make_rng,
    matmul,
    relative_error,
    softmax,
    split_rows,
    uniform_init,
)


class MatrixTestCase(SimpleTestCase):
    def test_vectors_become_columns(self):
        self.assertEqual(as_matrix([1, 2, 3]).shape, (3, 1))
        self.assertEqual(as_matrix(4.0).shape, (1, 1))
        with self.assertRaises(ShapeError):
            as_matrix(np.zeros((2, 2, 2)))

    def test_check_finite(self):
        check_finite(np.ones((2, 2)))
        with self.assertRaisesRegex(NonFiniteError, "2 non-finite"):
            check_finite(np.array([[np.nan, np.inf], [0.0, 1.0]]), "W")


class MatmulTestCase(SimpleTestCase):
    def test_identity(self):
        m = make_rng(0).normal(size=(3, 4))
        assert_array_equal(matmul(np.eye(3), m), m)

    def test_scalar(self):
        assert_array_equal(matmul(as_matrix(2.0), as_matrix(3.0)), [[6.0]])

    def test_matches_triple_loop(self):
        rng = make_rng(1)
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
        expected = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(5):
                    expected[i, j] += a[i, k] * b[k, j]
        assert_allclose(matmul(a, b), expected, rtol=1e-12)

    def test_associative(self):
        rng = make_rng(2)
        a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
        assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=1e-9)

    def test_mismatch(self):
        with self.assertRaises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))


class ElementwiseTestCase(SimpleTestCase):
    def test_activations_at_zero(self):
        self.assertEqual(elementwise("sigmoid", as_matrix(0.0))[0, 0], 0.5)
        self.assertEqual(elementwise("tanh", as_matrix(0.0))[0, 0], 0.0)

    def test_sigmoid_saturates_without_overflow(self):
        out = elementwise("sigmoid", as_matrix([-1000.0, 1000.0]))
        assert_array_equal(out, [[0.0], [1.0]])

    def test_hadamard_matches_scalar_loop(self):
        rng = make_rng(3)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        out = elementwise("hadamard", a, b)
        for i in range(3):
            for j in range(4):
                self.assertEqual(out[i, j], a[i, j] * b[i, j])

    def test_binary_ops_and_scale(self):
        a, b = as_matrix([1.0, 2.0]), as_matrix([3.0, 5.0])
        assert_array_equal(elementwise("add", a, b), [[4.0], [7.0]])
        assert_array_equal(elementwise("sub", a, b), [[-2.0], [-3.0]])
        assert_array_equal(elementwise("scale", a, 3), [[3.0], [6.0]])

    def test_shape_mismatch_and_unknown_op(self):
        with self.assertRaises(ShapeError):
            elementwise("add", np.ones((2, 1)), np.ones((1, 2)))
        with self.assertRaises(ValueError):
            elementwise("relu", np.ones((2, 1)))


class SoftmaxTestCase(SimpleTestCase):
    def test_symmetric(self):
        assert_allclose(softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]], atol=1e-15)

    def test_large_inputs_do_not_overflow(self):
        with np.errstate(over="raise"):
            out = softmax(np.array([[1000.0, 0.0]]))
        self.assertAlmostEqual(out[0, 0], 1.0, places=12)
        self.assertGreaterEqual(out[0, 1], 0.0)

    def test_matches_direct_formula(self):
        v = make_rng(4).normal(size=(1, 10))
        exact = np.exp(v.astype(np.longdouble))
        exact /= exact.sum()
        assert_allclose(softmax(v), exact.astype(np.float64), atol=1e-12)

    def test_sums_to_one_and_ignores_shift(self):
        v = make_rng(5).normal(scale=10.0, size=(1, 50))
        out = softmax(v)
        self.assertAlmostEqual(float(out.sum()), 1.0, delta=1e-12)
        assert_allclose(softmax(v + 123.0), out, atol=1e-12)

    def test_column_axis(self):
        v = make_rng(6).normal(size=(7, 3))
        assert_allclose(softmax(v, axis=0).sum(axis=0), np.ones(3), atol=1e-12)

    def test_empty(self):
        with self.assertRaises(ShapeError):
            softmax(np.zeros((1, 0)))


class ConcatTestCase(SimpleTestCase):
    def test_stacks_columns(self):
        self.assertEqual(concat_rows(np.ones((2, 1)), np.zeros((3, 1))).shape, (5, 1))

    def test_empty_is_identity(self):
        a = make_rng(7).normal(size=(3, 2))
        assert_array_equal(concat_rows(a, np.zeros((0, 2))), a)

    def test_split_recovers_parts(self):
        rng = make_rng(8)
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
        top, bottom = split_rows(concat_rows(a, b), 2)
        assert_array_equal(top, a)
        assert_array_equal(bottom, b)

    def test_mismatch(self):
        with self.assertRaises(ShapeError):
            concat_rows(np.ones((2, 1)), np.ones((2, 2)))
        with self.assertRaises(ShapeError):
            split_rows(np.ones((2, 1)), 3)


class RandomnessTestCase(SimpleTestCase):
    def test_keep_all_is_ones(self):
        assert_array_equal(dropout_mask(make_rng(0), (4, 3), 1.0), np.ones((4, 3)))

    def test_mask_mean_is_one(self):
        mask = dropout_mask(make_rng(1), (100_000, 1), 0.75)
        self.assertAlmostEqual(float(mask.mean()), 1.0, delta=0.02)
        self.assertEqual(set(np.unique(mask)), {0.0, 1.0 / 0.75})

    def test_same_seed_same_mask(self):
        assert_array_equal(dropout_mask(make_rng(9), (5, 5), 0.5), dropout_mask(make_rng(9), (5, 5), 0.5))

    def test_bad_keep_prob(self):
        for keep in (0.0, -0.5, 1.5):
            with self.subTest(keep=keep):
                with self.assertRaises(ValueError):
                    dropout_mask(make_rng(0), (2, 2), keep)

    def test_uniform_range(self):
        m = uniform_init(make_rng(2), (50, 40), 0.0001)
        self.assertLessEqual(float(np.abs(m).max()), 0.0001)

    def test_uniform_mean(self):
        bound = 1.0
        m = uniform_init(make_rng(3), (100_000, 1), bound)
        sigma = bound / np.sqrt(3.0)
        self.assertLess(abs(float(m.mean())), 3 * sigma / np.sqrt(m.size))

    def test_uniform_is_reproducible(self):
        assert_array_equal(uniform_init(make_rng(4), (3, 3), 0.5), uniform_init(make_rng(4), (3, 3), 0.5))

    def test_fan_in_bound(self):
        self.assertEqual(fan_in_bound(100), 0.1)


class FiniteDifferenceTestCase(SimpleTestCase):
    def test_square(self):
        grad = finite_difference_grad(lambda t: float(t[0, 0] ** 2), as_matrix(3.0))
        self.assertAlmostEqual(grad[0, 0], 6.0, delta=1e-6)

    def test_constant(self):
        assert_array_equal(finite_difference_grad(lambda t: 4.0, np.ones((3, 2))), np.zeros((3, 2)))

    def test_quadratic_form(self):
        rng = make_rng(5)
        a, x = rng.normal(size=(4, 4)), rng.normal(size=(4, 1))
        grad = finite_difference_grad(lambda t: (t.T @ a @ t).item(), x)
        assert_allclose(grad, (a + a.T) @ x, atol=1e-8)

    def test_leaves_params_untouched(self):
        x = make_rng(6).normal(size=(2, 2))
        before = x.copy()
        finite_difference_grad(lambda t: float(np.sum(t**3)), x)
        assert_array_equal(x, before)

    def test_non_finite_objective(self):
        with self.assertRaises(NonFiniteError):
            finite_difference_grad(lambda t: float(np.log(t[0, 0])), as_matrix(0.0))

    def test_bad_eps(self):
        with self.assertRaises(ValueError):
            finite_difference_grad(lambda t: 0.0, np.ones((1, 1)), eps=0.0)

    def test_relative_error(self):
        self.assertEqual(relative_error(np.zeros((2, 1)), np.zeros((2, 1))), 0.0)
        self.assertAlmostEqual(relative_error(as_matrix([1.0, 0.0]), as_matrix([0.0, 1.0])), np.sqrt(2.0))
