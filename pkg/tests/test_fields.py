import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hjchar.fields import (
    CallbackField,
    Constant,
    GaussOffset,
    NormSquaredHalf,
    Quadratic,
    SphereAngles,
    field_from_dict,
    random_angles,
    sphere_angles,
    sphere_embed,
    sphere_grid,
)

vec3 = arrays(np.float64, 3, elements=st.floats(-3, 3))

FIELDS = [
    Constant(2.0, 3),
    NormSquaredHalf(3),
    Quadratic(np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 0.25]]), -0.5),
    GaussOffset(1.0, 3.0, 4.0, [1.0, 1.0, 0.0]),
]


@pytest.mark.parametrize("f", FIELDS, ids=lambda f: type(f).__name__)
@given(x=vec3)
def test_gradient_matches_central_differences(f, x):
    _, g = f.eval_grad(x)
    h = 1e-6
    fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.allclose(g, fd, atol=1e-5)


@pytest.mark.parametrize("f", FIELDS, ids=lambda f: type(f).__name__)
def test_vectorised_values_agree(f, rng):
    pts = rng.uniform(-2, 2, size=(25, 3))
    assert np.allclose(f.values(pts), [f(p) for p in pts])


@pytest.mark.parametrize("f", FIELDS, ids=lambda f: type(f).__name__)
def test_dict_round_trip(f, rng):
    g = field_from_dict(f.to_dict(), 3)
    x = rng.normal(size=3)
    assert g(x) == pytest.approx(f(x))


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        NormSquaredHalf(2)(np.zeros(3))


def test_gauss_sign_bounds():
    assert GaussOffset(-1.0, -3.0, 4.0, [1, 1]).sign_bounds() == (-4.0, -1.0)


def test_callback_field_not_packable():
    f = CallbackField(lambda x: float(x @ x), lambda x: 2 * x, 2)
    assert f.pack() is None
    assert f(np.array([1.0, 2.0])) == 5.0


def test_diag_padding_from_dict():
    f = field_from_dict({"type": "quadratic", "diag": [0.25, 1.0], "diag_fill": 0.5}, 4)
    assert f(np.array([0, 0, 2.0, 0])) == pytest.approx(1.0)


@given(st.integers(2, 6), st.integers(0, 1000))
def test_embedding_is_unit(m, seed):
    th = random_angles(np.random.default_rng(seed), m, 3)
    for t in th:
        assert np.linalg.norm(sphere_embed(t)) == pytest.approx(1.0)


@given(st.integers(2, 7), st.integers(0, 1000), st.floats(0.1, 10.0))
def test_angles_invert_embedding(m, seed, scale):
    for t in random_angles(np.random.default_rng(seed), m, 3):
        v = sphere_embed(t)
        assert np.allclose(sphere_embed(sphere_angles(scale * v)), v, atol=1e-12)


def test_angles_of_zero_vector_rejected():
    with pytest.raises(ValueError):
        sphere_angles(np.zeros(3))


def test_circle_embedding_matches_polar():
    v = sphere_embed([0.3])
    assert np.allclose(v, [math.sin(0.3), math.cos(0.3)])


def test_sphere_grid_shape_and_ranges():
    g = sphere_grid(4, (10, 5, 5))
    assert g.shape == (250, 3)
    assert g[:, 0].min() >= 0 and g[:, 0].max() < 2 * math.pi
    assert np.all((g[:, 1:] > 0) & (g[:, 1:] < math.pi))


def test_sphere_angles_box():
    with pytest.raises(ValueError):
        SphereAngles([0.1, 4.0])
    assert SphereAngles([0.1, 1.0]).m == 3
