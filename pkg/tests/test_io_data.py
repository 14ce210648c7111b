import numpy as np
import pytest
from PIL import Image

from cawm import DegradationSpec, load_png, save_png
from cawm.data import FILES, load_triples, make_triple, make_triples, write_triples
from cawm.errors import UnsupportedFormatError
from cawm.imageio import quantize


def test_png_round_trip_is_exact_on_8bit_values(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (3, 5, 7)) / 255.0
    save_png(rgb, tmp_path / "a.png")
    back = load_png(tmp_path / "a.png")
    assert back.shape == (1, 3, 5, 7) and back.dtype == np.float32
    np.testing.assert_array_equal(quantize(back.data[0]), quantize(rgb))

    gray = rng.uniform(size=(1, 1, 4, 6))
    save_png(gray, tmp_path / "g.png")
    assert load_png(tmp_path / "g.png").shape == (1, 1, 4, 6)


def test_quantize_rounds_half_up_and_clips():
    np.testing.assert_array_equal(quantize(np.array([-0.2, 0.5 / 255, 1.49 / 255, 2.0])),
                                  [0, 1, 1, 255])


@pytest.mark.parametrize("mode, fmt, suffix", [("RGBA", "PNG", "png"), ("I;16", "PNG", "png"),
                                               ("RGB", "JPEG", "jpg"), ("P", "PNG", "png")])
def test_unsupported_images_rejected(tmp_path, mode, fmt, suffix):
    path = tmp_path / f"x.{suffix}"
    Image.new(mode, (4, 4)).save(path, format=fmt)
    with pytest.raises(UnsupportedFormatError):
        load_png(path)


def test_garbage_file_rejected(tmp_path):
    path = tmp_path / "x.png"
    path.write_bytes(b"not an image")
    with pytest.raises(UnsupportedFormatError):
        load_png(path)


def test_save_rejects_odd_channel_counts(tmp_path):
    with pytest.raises(UnsupportedFormatError):
        save_png(np.zeros((2, 4, 4)), tmp_path / "x.png")
    with pytest.raises(UnsupportedFormatError):
        save_png(np.zeros((2, 3, 4, 4)), tmp_path / "x.png")


def test_triples_are_seeded_per_pair():
    spec = DegradationSpec.of(["haze", "rain"], 0.5, 3)
    a, b = make_triples(2, 16, spec)
    assert (a.name, b.name) == ("pair_0000", "pair_0001")
    assert not np.array_equal(a.clean_vi.data, b.clean_vi.data)
    again = make_triple(1, 16, spec)
    np.testing.assert_array_equal(again.degraded_vi.data, b.degraded_vi.data)


def test_write_and_load_triples(tmp_path):
    spec = DegradationSpec.of(["snow"], 0.8, 1)
    triples = make_triples(3, 16, spec)
    write_triples(tmp_path, triples)
    (tmp_path / "stray.txt").write_text("ignored")
    loaded = load_triples(tmp_path)
    assert [t.name for t in loaded] == ["pair_0000", "pair_0001", "pair_0002"]
    for t, u in zip(triples, loaded):
        np.testing.assert_array_equal(quantize(t.degraded_vi.data), quantize(u.degraded_vi.data))
        assert u.ir.shape == (1, 1, 16, 16)


def test_load_triples_missing_pieces(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_triples(tmp_path / "nope")
    with pytest.raises(FileNotFoundError):
        load_triples(tmp_path)
    write_triples(tmp_path, make_triples(1, 16, DegradationSpec.of(["rain"], 0.5, 0)))
    (tmp_path / "pair_0000" / FILES[2]).unlink()
    with pytest.raises(FileNotFoundError):
        load_triples(tmp_path)
