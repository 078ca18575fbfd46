import numpy as np
import pytest

from ppide import rng


@pytest.mark.parametrize("counter,key,expected", [
    ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
    ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
    ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
     (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
])
def test_philox_known_answers(counter, key, expected):
    out = rng.philox4x32(np.array([counter], dtype=np.uint64), key)
    assert tuple(int(v) for v in out[0]) == expected


def test_compiled_kernel_matches_reference():
    paths = np.arange(37)
    for step in (0, 5, 1000):
        a = rng.uniforms(11, rng.Stream.BROWNIAN, paths, step, 7)
        b = rng.uniforms_reference(11, rng.Stream.BROWNIAN, paths, step, 7)
        np.testing.assert_array_equal(a, b)


def test_uniforms_depend_only_on_counter():
    full = rng.uniforms(3, rng.Stream.JUMP_MARK, np.arange(10), 4, 3)
    part = rng.uniforms(3, rng.Stream.JUMP_MARK, np.array([7, 2]), 4, 3)
    np.testing.assert_array_equal(part, full[[7, 2]])
    assert np.all((full > 0) & (full < 1))


def test_streams_and_seeds_differ():
    p = np.arange(4)
    a = rng.uniforms(1, rng.Stream.BROWNIAN, p, 0, 2)
    assert not np.array_equal(a, rng.uniforms(1, rng.Stream.JUMP_COUNT, p, 0, 2))
    assert not np.array_equal(a, rng.uniforms(2, rng.Stream.BROWNIAN, p, 0, 2))


def test_normals_moments():
    z = rng.normals(5, rng.Stream.BROWNIAN, np.arange(20000), 0, 2).ravel()
    assert abs(z.mean()) < 3 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.03


def test_poisson_inverse_cdf():
    u = rng.uniforms(9, rng.Stream.JUMP_COUNT, np.arange(50000), 0, 1).ravel()
    k = rng.poisson(u, 0.7)
    assert abs(k.mean() - 0.7) < 3 * np.sqrt(0.7 / k.size)
    assert np.all(np.diff(k[np.argsort(u)]) >= 0)
