import math

import numpy as np
import pytest

from cmrmeta import pgm
from cmrmeta.kspace import ParameterError
from cmrmeta.phantom import generate_phantom, phantom_geometry, render_frame


def test_same_seed_bit_identical():
    a = generate_phantom(123, 64, 4)
    b = generate_phantom(123, 64, 4)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, generate_phantom(124, 64, 4))


def test_two_frames():
    stack = generate_phantom(5, 32, 2)
    assert stack.shape == (2, 32, 32)
    assert 0.0 <= stack.min() and stack.max() <= 1.0


@pytest.mark.parametrize("size,frames", [(16, 4), (48, 4), (64, 1), (100, 8)])
def test_invalid_arguments(size, frames):
    with pytest.raises(ParameterError):
        generate_phantom(0, size, frames)


def test_scene_layout():
    stack = generate_phantom(9, 64, 8)
    frame = stack[0]
    assert frame[:3, :3].mean() < 0.05  # dark background corner
    geom = phantom_geometry(9)
    hy, hx = geom.heart_centre
    row = int((hy + 1) / 2 * 64)
    col = int((hx + 1) / 2 * 64)
    assert frame[row, col] > 0.6  # bright blood pool


@pytest.mark.parametrize("seed", [0, 7, 31])
def test_inner_radius_is_one_sinusoidal_cycle(seed):
    """Measure the blood-pool radius from noise-free renders and fit a sinusoid."""
    geom = phantom_geometry(seed)
    frames, size = 12, 512
    measured = []
    for t in range(frames):
        radius = geom.inner_mean + geom.inner_amplitude * math.cos(2 * math.pi * t / frames)
        img = render_frame(geom, size, radius)
        area = np.count_nonzero(img == geom.blood_level) * (2.0 / size) ** 2
        measured.append(math.sqrt(area / math.pi))
    t = np.arange(frames)
    design = np.stack([np.ones(frames), np.cos(2 * np.pi * t / frames), np.sin(2 * np.pi * t / frames),
                       np.cos(4 * np.pi * t / frames)], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.array(measured), rcond=None)
    assert coef[0] == pytest.approx(geom.inner_mean, abs=2e-3)
    assert coef[1] == pytest.approx(geom.inner_amplitude, abs=2e-3)
    assert abs(coef[2]) < 2e-3 and abs(coef[3]) < 2e-3


def test_contraction_visible_in_generated_stack():
    geom = phantom_geometry(3)
    stack = generate_phantom(3, 64, 16)
    bright = [(f > (geom.blood_level + geom.myo_level) / 2).sum() for f in stack]
    assert bright[0] > bright[8]  # relaxed (largest pool) at frame 0, contracted at mid-cycle


# -- PGM persistence -------------------------------------------------------------------

def test_pgm_round_trip(tmp_path):
    img = pgm.quantize(np.random.default_rng(0).random((32, 64)))
    pgm.write_pgm(tmp_path / "a.pgm", img)
    back = pgm.read_pgm(tmp_path / "a.pgm")
    assert back.shape == (32, 64)
    assert np.array_equal(back, img)


def test_pgm_header_is_p5_16bit():
    raw = pgm.encode(np.ones((32, 32)))
    assert raw.startswith(b"P5\n32 32\n65535\n")
    assert len(raw) == len(b"P5\n32 32\n65535\n") + 32 * 32 * 2
    assert raw[-2:] == b"\xff\xff"  # big-endian maxval


def test_pgm_decode_skips_comments():
    body = np.array([[0, 65535]], dtype=">u2").tobytes()
    img = pgm.decode(b"P5\n# made by hand\n2 1\n65535\n" + body)
    assert img.tolist() == [[0.0, 1.0]]


def test_pgm_rejects_other_formats():
    with pytest.raises(ValueError):
        pgm.decode(b"P2\n1 1\n255\n0")
