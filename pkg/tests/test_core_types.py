import math

import numpy as np
import pytest

from fg_transport import core_types
from fg_transport.core_types import Control2, DiagNoise, Pose2, pose_boxminus, pose_boxplus, wrap_angle, wrap_angles


@pytest.mark.parametrize('angle, expected', [
    (0.0, 0.0),
    (math.pi, math.pi),
    (-math.pi, math.pi),
    (3.0 * math.pi, math.pi),
    (2.0 * math.pi, 0.0),
    (-0.5, -0.5),
    (7.0, 7.0 - 2.0 * math.pi),
])
def test_wrap_angle(angle, expected):
    assert wrap_angle(angle) == pytest.approx(expected, abs=1e-12)


def test_wrap_angle_range(rng):
    for a in rng.uniform(-100.0, 100.0, 1000):
        w = wrap_angle(float(a))
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_wrap_angles_matches_scalar(rng):
    angles = np.concatenate([rng.uniform(-20.0, 20.0, 200), [math.pi, -math.pi, 0.0]])
    expected = [wrap_angle(float(a)) for a in angles]
    assert np.allclose(wrap_angles(angles), expected, atol=1e-12)


def test_wrap_angle_rejects_non_finite():
    with pytest.raises(core_types.Error) as ex:
        wrap_angle(float('nan'))
    assert ex.value.code is core_types.Error.Code.DOMAIN


def test_pose_wraps_heading():
    assert Pose2(1.0, 2.0, 3.0 * math.pi).theta == pytest.approx(math.pi)


def test_pose_rejects_non_finite():
    with pytest.raises(core_types.Error):
        Pose2(float('inf'), 0.0, 0.0)


def test_pose_vector_and_distance():
    p = Pose2(1.0, 2.0, 0.5)
    assert np.array_equal(p.vector(), [1.0, 2.0, 0.5])
    assert Pose2.from_vector(p.vector()) == p
    assert p.distance_to(Pose2(4.0, 6.0, 0.0)) == pytest.approx(5.0)
    assert p.distance_to((1.0, 0.0)) == pytest.approx(2.0)


def test_boxminus_wraps_across_pi():
    a = Pose2(0.0, 0.0, math.pi - 0.1)
    b = Pose2(0.0, 0.0, -math.pi + 0.1)
    assert pose_boxminus(a, b)[2] == pytest.approx(-0.2)


def test_boxplus_boxminus_inverse(rng):
    for _ in range(100):
        a = Pose2(*rng.uniform(-5.0, 5.0, 2), rng.uniform(-3.0, 3.0))
        d = rng.uniform(-1.0, 1.0, 3)
        assert np.allclose(pose_boxminus(pose_boxplus(a, d), a), d, atol=1e-12)


def test_control_vector():
    assert Control2.from_vector([0.5, -0.1]) == Control2(0.5, -0.1)


def test_diag_noise_whitening():
    noise = DiagNoise.from_variances(0.04, 0.01)
    assert np.allclose(noise.sigmas, [0.2, 0.1])
    assert np.allclose(noise.information, [25.0, 100.0])
    assert np.allclose(noise.whiten(np.array([0.2, 0.1])), [1.0, 1.0])
    assert np.allclose(noise.whiten(np.ones((2, 3))), [[5.0] * 3, [10.0] * 3])


@pytest.mark.parametrize('variances', [(0.0,), (-1.0, 1.0), (float('nan'),), ()])
def test_diag_noise_rejects_invalid(variances):
    with pytest.raises(core_types.Error) as ex:
        DiagNoise(variances)
    assert ex.value.code is core_types.Error.Code.INVALID_NOISE


def test_error_message():
    ex = core_types.Error('bad', core_types.Error.Code.DOMAIN, 'f')
    assert str(ex) == 'f failed: bad (DOMAIN)'
    assert ex.func == 'f'
    assert ex.message == 'bad'
