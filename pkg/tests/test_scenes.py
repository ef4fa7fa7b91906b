import numpy as np
import pytest

from lfdiff.errors import GenerationError
from lfdiff.images import SceneSpec, gamma_to_hdr
from lfdiff.scenes import generate_scene, saturated_fraction


def test_same_seed_bit_identical():
    spec = SceneSpec(seed=21, size=(32, 32), motion_magnitude=3.0, saturation_fraction=0.1)
    a, b = generate_scene(spec), generate_scene(spec)
    for fa, fb in zip(a.frames, b.frames):
        np.testing.assert_array_equal(fa.pixels, fb.pixels)
    np.testing.assert_array_equal(a.ground_truth.pixels, b.ground_truth.pixels)


def test_different_seeds_differ():
    a = generate_scene(SceneSpec(seed=1, size=(32, 32)))
    b = generate_scene(SceneSpec(seed=2, size=(32, 32)))
    assert not np.array_equal(a.ground_truth.pixels, b.ground_truth.pixels)


def test_static_unsaturated_scene_inverts_exactly():
    spec = SceneSpec(seed=5, size=(32, 32), motion_magnitude=0.0, saturation_fraction=0.0)
    stack = generate_scene(spec)
    mid = stack.frames[1]
    recovered = gamma_to_hdr(mid)
    unsat = ~np.any(mid.pixels >= 1.0, axis=2)
    err = np.abs(recovered - stack.ground_truth.pixels)[unsat]
    assert err.max() <= 1e-6


@pytest.mark.parametrize("target", [0.1, 0.2])
def test_saturation_fraction_reached(target):
    spec = SceneSpec(seed=13, size=(64, 64), motion_magnitude=2.0, saturation_fraction=target)
    stack = generate_scene(spec)
    assert saturated_fraction(stack.frames[2].pixels) >= target


def test_frames_respect_ldr_invariants():
    stack = generate_scene(SceneSpec(seed=3, size=(48, 48), saturation_fraction=0.15))
    evs = [f.exposure_value for f in stack.frames]
    assert evs == sorted(evs)
    for f in stack.frames:
        assert f.pixels.min() >= 0.0 and f.pixels.max() <= 1.0
        assert np.all(np.isfinite(f.pixels))


def test_motion_moves_nonreference_frames():
    still = generate_scene(SceneSpec(seed=8, size=(32, 32), motion_magnitude=0.0))
    moved = generate_scene(SceneSpec(seed=8, size=(32, 32), motion_magnitude=6.0))
    # reference frame identical, side frames displaced
    np.testing.assert_array_equal(still.frames[1].pixels, moved.frames[1].pixels)
    assert not np.array_equal(still.frames[0].pixels, moved.frames[0].pixels)
    assert not np.array_equal(still.frames[2].pixels, moved.frames[2].pixels)


def test_unattainable_saturation_raises():
    # bright content cannot cover nearly the whole frame at this exposure
    spec = SceneSpec(
        seed=0, size=(64, 64), motion_magnitude=0.0, saturation_fraction=0.99,
        exposure_set=(-2.0, 0.0, 2.0),
    )
    with pytest.raises(GenerationError):
        generate_scene(spec)


def test_shifted_exposure_set_saturates_reference():
    spec = SceneSpec(seed=4, size=(64, 64), motion_magnitude=3.0, saturation_fraction=0.2,
                     exposure_set=(0.0, 2.0, 4.0))
    stack = generate_scene(spec)
    assert saturated_fraction(stack.frames[1].pixels) > 0.0
    assert saturated_fraction(stack.frames[0].pixels) == 0.0
