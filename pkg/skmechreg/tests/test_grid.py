"""
Tests for grid module
"""

import pytest
import numpy as np
from scipy.linalg import expm
from scipy.spatial.transform import Rotation
from numpy.testing import (assert_almost_equal, assert_allclose,
                           assert_array_equal)

from skmechreg.grid import (ScalarVolume, DisplacementField, VelocityField,
                            Trilinear, identity_grid, interpolate, warp,
                            warp_labels, compose, integrate_svf,
                            integrate_svf_adjoint, downsample_volume,
                            upsample_field)
from skmechreg.utils import ShapeError, ParameterError, DomainError, DataError


def smooth_field(dims, amplitude=0.3, offset=0.17):
    x, y, z = identity_grid(dims)
    n = max(dims)
    return DisplacementField(np.stack([
        offset + amplitude * np.sin(2 * np.pi * y / n),
        offset + amplitude * np.cos(2 * np.pi * z / n),
        offset + amplitude * np.sin(2 * np.pi * x / n)]))


def interior(margin):
    return (slice(None),) + (slice(margin, -margin),) * 3


def linear_field(matrix, dims, center):
    grid = np.stack(identity_grid(dims)) - center
    return np.einsum('ij,j...->i...', matrix, grid)


class TestContainers:
    def test_volume_shape(self):
        with pytest.raises(ShapeError):
            ScalarVolume(np.zeros((4, 4)))

    def test_volume_finite(self):
        data = np.zeros((4, 4, 4))
        data[1, 1, 1] = np.nan
        with pytest.raises(DataError):
            ScalarVolume(data)

    @pytest.mark.parametrize("spacing", [(1., 0., 1.), (-1., 1., 1.)])
    def test_spacing_positive(self, spacing):
        with pytest.raises(ParameterError):
            ScalarVolume(np.zeros((4, 4, 4)), spacing)

    def test_field_shape(self):
        with pytest.raises(ShapeError):
            DisplacementField(np.zeros((2, 4, 4, 4)))

    def test_zeros(self):
        u = DisplacementField.zeros((4, 5, 6), (1., 2., 3.))
        assert u.dims == (4, 5, 6)
        assert u.spacing == (1., 2., 3.)
        assert_array_equal(u.norm(), 0.)

    def test_velocity_is_field(self):
        v = VelocityField(np.zeros((3, 4, 4, 4)))
        assert isinstance(v, DisplacementField)
        assert isinstance(-v, VelocityField)


class TestInterpolate:
    def setup_method(self):
        x, y, z = identity_grid((5, 6, 7))
        self.vol = ScalarVolume(2. * x - y + 0.5 * z + 1.)

    def test_exact_on_nodes(self):
        assert_almost_equal(interpolate(self.vol, (2, 3, 4)),
                            self.vol.data[2, 3, 4])

    def test_linear_inside(self):
        assert_almost_equal(interpolate(self.vol, (1.25, 2.5, 3.75)),
                            2. * 1.25 - 2.5 + 0.5 * 3.75 + 1.)

    def test_clamped_outside(self):
        assert_almost_equal(interpolate(self.vol, (-3., 0., 0.)),
                            self.vol.data[0, 0, 0])
        assert_almost_equal(interpolate(self.vol, (10., 5., 6.)),
                            self.vol.data[4, 5, 6])

    def test_non_finite(self):
        with pytest.raises(DomainError):
            interpolate(self.vol, (np.nan, 0., 0.))


class TestTrilinear:
    def setup_method(self):
        gen = np.random.default_rng(0)
        self.dims = (5, 6, 4)
        self.data = gen.standard_normal(self.dims)
        self.coords = gen.uniform(0.1, 2.9, size=(3, 7, 5))

    def test_push_is_adjoint_of_pull(self):
        sampler = Trilinear(self.coords, self.dims)
        values = np.random.default_rng(1).standard_normal((7, 5))
        lhs = np.sum(sampler.pull(self.data) * values)
        rhs = np.sum(self.data * sampler.push(values))
        assert_almost_equal(lhs, rhs)

    def test_grad_of_linear_function(self):
        x, y, z = identity_grid(self.dims)
        sampler = Trilinear(self.coords, self.dims)
        g = sampler.grad(3. * x - 2. * y + z)
        assert g.shape == (3, 7, 5)
        assert_allclose(g[0], 3.)
        assert_allclose(g[1], -2.)
        assert_allclose(g[2], 1.)

    def test_grad_zero_when_clamped(self):
        coords = np.array([[-1.], [1.5], [1.5]])
        x, _, _ = identity_grid(self.dims)
        g = Trilinear(coords, self.dims).grad(x)
        assert_almost_equal(g[0, 0], 0.)


class TestWarp:
    def setup_method(self):
        gen = np.random.default_rng(2)
        self.vol = ScalarVolume(gen.uniform(size=(6, 6, 6)))

    def test_identity(self):
        out = warp(self.vol, DisplacementField.zeros(self.vol.dims))
        assert_array_equal(out.data, self.vol.data)

    def test_integer_shift(self):
        u = DisplacementField.zeros(self.vol.dims)
        u.data[0] = 1.
        out = warp(self.vol, u)
        assert_array_equal(out.data[:-1], self.vol.data[1:])

    def test_dims_mismatch(self):
        with pytest.raises(ShapeError):
            warp(self.vol, DisplacementField.zeros((5, 6, 6)))

    def test_labels_stay_labels(self):
        labels = ScalarVolume(np.random.default_rng(3).integers(
            0, 4, size=(6, 6, 6)).astype(float))
        u = smooth_field((6, 6, 6), amplitude=0.8)
        out = warp_labels(labels, u)
        assert set(np.unique(out.data)) <= {0., 1., 2., 3.}

    def test_round_trip_inside(self):
        x, y, _ = identity_grid((32, 32, 32))
        vol = ScalarVolume(np.cos(2 * np.pi * x / 32) +
                           np.sin(2 * np.pi * y / 32))
        u = smooth_field(vol.dims)
        back = warp(warp(vol, u), -u)
        assert_allclose(back.data[2:-2, 2:-2, 2:-2],
                        vol.data[2:-2, 2:-2, 2:-2], atol=0.05)


class TestCompose:
    def test_translations_add(self):
        a = DisplacementField(np.ones((3, 5, 5, 5)) * 0.5)
        b = DisplacementField(np.ones((3, 5, 5, 5)) * 0.25)
        c = compose(a, b)
        inner = (slice(None),) + (slice(0, 4),) * 3
        assert_allclose(c.data[inner], 0.75)

    def test_zero_is_neutral(self):
        u = smooth_field((6, 6, 6))
        zero = DisplacementField.zeros(u.dims)
        assert_allclose(compose(u, zero).data, u.data)
        assert_allclose(compose(zero, u).data, u.data)

    def test_not_commutative(self):
        dims = (16, 16, 16)
        R = Rotation.from_rotvec([0., 0., 0.1]).as_matrix()
        a = DisplacementField(linear_field(R - np.eye(3), dims, 7.5))
        b = DisplacementField(np.zeros((3,) + dims))
        b.data[0] = 1.
        diff = compose(a, b).data - compose(b, a).data
        expected = (R - np.eye(3)) @ np.array([1., 0., 0.])
        assert np.linalg.norm(expected) > 0.09
        for i in range(3):
            assert_allclose(diff[interior(3)][i], expected[i], atol=1e-10)

    def test_associative_inside(self):
        a = smooth_field((64, 64, 64), 2., 0.)
        b = DisplacementField(np.roll(a.data, 1, axis=0))
        c = DisplacementField(-0.5 * a.data[::-1])
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        gap = np.linalg.norm(left.data - right.data, axis=0)
        assert gap[8:-8, 8:-8, 8:-8].max() < 0.05


class TestIntegrateSvf:
    def test_zero_velocity(self):
        v = VelocityField(np.zeros((3, 6, 6, 6)))
        assert_array_equal(integrate_svf(v).data, 0.)

    def test_constant_velocity_is_translation(self):
        v = VelocityField(np.full((3, 8, 8, 8), 0.5))
        u = integrate_svf(v, steps=4)
        assert_allclose(u.data[:, :4, :4, :4], 0.5, atol=1e-12)

    def test_small_velocity_first_order(self):
        v = VelocityField(smooth_field((8, 8, 8), 0.01, 0.).data)
        u = integrate_svf(v)
        assert_allclose(u.data, v.data, atol=1e-3)

    def test_invalid_steps(self):
        with pytest.raises(ParameterError):
            integrate_svf(VelocityField(np.zeros((3, 4, 4, 4))), steps=0)

    def test_linear_velocity_matches_expm(self):
        dims = (64, 64, 64)
        A = np.array([[0.02, -0.03, 0.01],
                      [0.03, -0.01, 0.],
                      [0., 0.02, 0.01]])
        v = VelocityField(linear_field(A, dims, 31.5))
        u = integrate_svf(v, steps=7)
        expected = linear_field(expm(A) - np.eye(3), dims, 31.5)
        err = np.abs(u.data - expected)[interior(16)]
        assert err.max() < 1e-3

    def test_inverse_consistency_inside(self):
        v = VelocityField(smooth_field((64, 64, 64), 2., 0.).data)
        c = compose(integrate_svf(v), integrate_svf(-v))
        assert c.norm()[10:-10, 10:-10, 10:-10].max() < 0.05

    def test_adjoint_matches_directional_derivative(self):
        v = VelocityField(smooth_field((6, 6, 6), 0.4, 0.21).data)
        w = np.random.default_rng(4).standard_normal(v.data.shape)
        d = np.random.default_rng(5).standard_normal(v.data.shape)
        d /= np.linalg.norm(d)

        def f(data):
            return np.sum(w * integrate_svf(VelocityField(data), 3).data)

        _, history = integrate_svf(v, 3, return_steps=True)
        g = integrate_svf_adjoint(w, history)
        h = 1e-6
        numeric = (f(v.data + h * d) - f(v.data - h * d)) / (2 * h)
        assert_allclose(np.vdot(g, d), numeric, rtol=1e-4)


class TestPyramid:
    def test_downsample_halves(self):
        vol = ScalarVolume(np.ones((8, 10, 6)), (1., 2., 3.))
        out = downsample_volume(vol)
        assert out.dims == (4, 5, 3)
        assert out.spacing == (2., 4., 6.)
        assert_allclose(out.data, 1.)

    def test_upsample_doubles_vectors(self):
        u = DisplacementField(np.ones((3, 4, 4, 4)), (2., 2., 2.))
        out = upsample_field(u, (8, 8, 8))
        assert out.dims == (8, 8, 8)
        assert out.spacing == (1., 1., 1.)
        assert_allclose(out.data, 2.)

    def test_upsample_keeps_type(self):
        v = VelocityField(np.zeros((3, 4, 4, 4)))
        assert isinstance(upsample_field(v, (7, 7, 7)), VelocityField)
