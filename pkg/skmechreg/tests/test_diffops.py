"""
Tests for diffops module
"""

import pytest
import numpy as np
from numpy.testing import (assert_almost_equal, assert_allclose,
                           assert_array_equal)
from scipy.spatial.transform import Rotation

from skmechreg.grid import DisplacementField, identity_grid
from skmechreg.diffops import (gradient, gradient_adjoint, jacobian, log_det,
                               strain, cofactor, eig_sym3)
from skmechreg.utils import ShapeError, ParameterError, DomainError

DIMS = (8, 9, 10)
INTERIOR = (slice(1, -1),) * 3


def linear_field(A, dims=DIMS, c=(0., 0., 0.)):
    x = identity_grid(dims) - np.asarray(c, dtype=float)[:, None, None, None]
    return DisplacementField(np.einsum('ij,j...->i...', np.asarray(A), x))


def rotation_field(theta, axis=(0., 0., 1.), c=(4., 4., 4.), dims=DIMS):
    R = Rotation.from_rotvec(theta * np.asarray(axis)).as_matrix()
    return linear_field(R - np.eye(3), dims, c)


class TestGradient:
    def test_constant(self):
        u = DisplacementField(np.ones((3,) + DIMS) * 2.5)
        assert_array_equal(gradient(u), 0.)

    def test_linear_exact(self):
        A = np.arange(9.).reshape(3, 3) / 10.
        G = gradient(linear_field(A))
        for i in range(3):
            for j in range(3):
                assert_allclose(G[i, j], A[i, j], atol=1e-12)

    def test_quadratic_interior(self):
        x = identity_grid(DIMS)[0]
        u = DisplacementField(np.stack([x ** 2, 0 * x, 0 * x]))
        G = gradient(u)
        assert_allclose(G[0, 0][INTERIOR], 2. * x[INTERIOR])

    def test_too_small(self):
        with pytest.raises(ShapeError):
            gradient(DisplacementField.zeros((2, 5, 5)))

    def test_adjoint(self):
        gen = np.random.default_rng(0)
        u = DisplacementField(gen.standard_normal((3,) + DIMS))
        g = gen.standard_normal((3, 3) + DIMS)
        assert_almost_equal(np.sum(gradient(u) * g),
                            np.sum(u.data * gradient_adjoint(g)))


class TestJacobian:
    def test_identity(self):
        J = jacobian(DisplacementField.zeros(DIMS))
        assert_allclose(J.det(), 1.)

    def test_stretch(self):
        J = jacobian(linear_field(np.diag([1., 0., 0.])))
        assert_allclose(J.det(), 2.)

    @pytest.mark.parametrize("scale, expected", [(-0.5, -0.6931),
                                                 (1., 0.6931)])
    def test_log_det_halving_doubling(self, scale, expected):
        u = linear_field(np.diag([scale, 0., 0.]))
        values = log_det(jacobian(u)).data
        assert np.max(np.abs(values - expected)) < 1e-4
        assert_allclose(values, np.log(1. + scale), atol=1e-12)

    def test_log_det_clamped(self):
        u = linear_field(np.diag([-1.5, 0., 0.]))
        assert_allclose(log_det(jacobian(u), 1e-6).data, np.log(1e-6))
        assert_almost_equal(np.log(1e-6), -13.8155, decimal=4)

    def test_log_det_eps(self):
        with pytest.raises(ParameterError):
            log_det(jacobian(DisplacementField.zeros(DIMS)), 0.)

    def test_mm_unit_spacing_matches_voxel(self):
        u = rotation_field(0.1)
        assert_array_equal(jacobian(u, mm=True).data, jacobian(u).data)

    def test_mm_identity_normalized(self):
        u = DisplacementField.zeros(DIMS, (1., 2., 3.))
        assert_allclose(jacobian(u, mm=True).det(), 1.)
        assert_allclose(jacobian(u, mm=True, normalize=False).det(), 6.)

    def test_cofactor_is_det_inverse_transpose(self):
        m = np.array([[2., 1., 0.], [0.5, 3., 1.], [1., 0., 1.5]])
        field = np.broadcast_to(m[:, :, None], (3, 3, 4)).copy()
        expected = np.linalg.det(m) * np.linalg.inv(m).T
        assert_allclose(cofactor(field)[:, :, 2], expected)


class TestStrain:
    def test_constant(self):
        u = DisplacementField(np.ones((3,) + DIMS))
        assert_array_equal(strain(u).data, 0.)

    def test_simple_shear(self):
        gamma = 0.3
        A = np.zeros((3, 3))
        A[0, 1] = gamma
        S = strain(linear_field(A)).full()
        assert_allclose(S[0, 1], gamma / 2., atol=1e-12)
        assert_allclose(S[1, 0], gamma / 2., atol=1e-12)
        for i in range(3):
            assert_allclose(S[i, i], 0., atol=1e-12)

    def test_simple_shear_mm(self):
        gamma = 0.3
        A = np.zeros((3, 3))
        A[0, 1] = gamma
        u = linear_field(A)
        u.spacing = (1., 2., 1.)
        assert_allclose(strain(u, mm=True).full()[0, 1], gamma / 4.,
                        atol=1e-12)

    def test_rotation_eigenvalues(self):
        theta = 0.1
        es = strain(rotation_field(theta)).eigen()
        values = es.values[INTERIOR]
        expected = [0., np.cos(theta) - 1., np.cos(theta) - 1.]
        assert_allclose(values, np.broadcast_to(expected, values.shape),
                        atol=1e-12)
        assert_almost_equal(expected[1], -0.004996, decimal=6)

    def test_rotation_center_invariance(self):
        a = strain(rotation_field(0.2, np.array([1., 2., 3.]) / np.sqrt(14.),
                                  c=(1., 2., 3.)))
        b = strain(rotation_field(0.2, np.array([1., 2., 3.]) / np.sqrt(14.),
                                  c=(6., -3., 9.)))
        assert_allclose(a.data, b.data, atol=1e-10)

    def test_translation_invariance(self):
        u = rotation_field(0.1)
        moved = DisplacementField(u.data + np.array([1., -2., 3.])[
            :, None, None, None])
        assert_allclose(strain(moved).data, strain(u).data, atol=1e-12)

    def test_mm_unit_spacing_matches_voxel(self):
        u = rotation_field(0.1)
        assert_array_equal(strain(u, mm=True).data, strain(u).data)

    def test_log_det_trace_first_order(self):
        # |log det J - trace S| shrinks as the square of the gradient size
        x, y, z = identity_grid((12, 12, 12))
        k = 2 * np.pi / 12
        base = np.stack([np.sin(k * y) + 0.5 * np.cos(k * x),
                         np.cos(k * z) - 0.3 * np.sin(k * y),
                         np.sin(k * x) + 0.2 * np.cos(k * z)])
        unit = base / np.max(np.abs(gradient(DisplacementField(base))))
        errors = []
        for eps in (0.01, 0.02, 0.04):
            u = DisplacementField(eps * unit)
            diff = log_det(jacobian(u)).data - strain(u).trace()
            errors.append(np.max(np.abs(diff)))
        slopes = np.diff(np.log(errors)) / np.log(2.)
        assert np.all(np.abs(slopes - 2.) < 0.2)


class TestEigSym3:
    def test_diagonal(self):
        es = eig_sym3(np.diag([3., 2., 1.]))
        assert_allclose(es.values, [3., 2., 1.], atol=1e-12)
        assert_allclose(es.vectors, np.eye(3), atol=1e-12)

    def test_zero(self):
        es = eig_sym3(np.zeros((3, 3)))
        assert_array_equal(es.values, 0.)

    def test_shear(self):
        S = np.array([[0., 0.2, 0.], [0.2, 0., 0.], [0., 0., 0.]])
        assert_allclose(eig_sym3(S).values, [0.2, 0., -0.2], atol=1e-12)

    def test_repeated_eigenvalues(self):
        es = eig_sym3(np.diag([1., 1., -2.]))
        assert_allclose(es.values, [1., 1., -2.], atol=1e-12)
        assert_allclose(es.vectors.T @ es.vectors, np.eye(3), atol=1e-12)

    def test_random_properties(self):
        gen = np.random.default_rng(1)
        M = gen.standard_normal((1000, 3, 3))
        S = 0.5 * (M + M.transpose(0, 2, 1))
        es = eig_sym3(S)
        frob = np.sum(S ** 2, axis=(1, 2))
        assert np.all(np.abs(np.sum(es.values ** 2, axis=1) - frob) <
                      1e-12 * frob)
        assert np.all(np.diff(es.values, axis=1) <= 0)
        norm = np.max(np.abs(S), axis=(1, 2))[:, None, None]
        assert np.all(np.abs(es.reconstruct() - S) <= 1e-9 * norm)
        gram = np.einsum('nji,njk->nik', es.vectors, es.vectors)
        assert_allclose(gram, np.broadcast_to(np.eye(3), gram.shape),
                        atol=1e-9)
        residual = np.einsum('nij,njk->nik', S, es.vectors) - \
            es.vectors * es.values[:, None, :]
        assert np.all(np.abs(residual) <= 1e-9 * norm)

    def test_sign_convention(self):
        gen = np.random.default_rng(2)
        M = gen.standard_normal((50, 3, 3))
        vectors = eig_sym3(M + M.transpose(0, 2, 1)).vectors
        idx = np.argmax(np.abs(vectors), axis=1)
        lead = np.take_along_axis(vectors, idx[:, None, :], axis=1)
        assert np.all(lead > 0)

    def test_asymmetric(self):
        with pytest.raises(DomainError):
            eig_sym3(np.array([[1., 2., 0.], [0., 1., 0.], [0., 0., 1.]]))

    def test_frobenius2_matches_eigenvalues(self):
        S = strain(rotation_field(0.2, (0., 1., 0.)))
        es = S.eigen()
        assert_allclose(np.sum(es.values ** 2, axis=-1), S.frobenius2(),
                        rtol=1e-10, atol=1e-15)
