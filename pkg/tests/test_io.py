import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geodiag.io import (
    atomic_write,
    dumps_masks,
    loads_masks,
    loads_scene,
    read_png,
    read_scene,
    rle_decode,
    rle_encode,
    write_png,
    write_scene,
)


@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_rle_round_trip(mask):
    h, w = mask.shape
    runs = rle_encode(mask)
    assert np.array_equal(rle_decode(runs, w, h), mask)
    assert sum(runs[1::2]) == mask.sum()


def test_rle_example():
    m = np.array([[0, 1, 1], [1, 0, 0]], bool)
    assert rle_encode(m) == [1, 3]
    assert rle_encode(np.zeros((2, 2), bool)) == []


def test_masks_document_round_trip():
    a = np.zeros((4, 5), bool)
    a[1, 2:4] = True
    back = loads_masks(dumps_masks({"L0": a}, 5, 4))
    assert list(back) == ["L0"] and np.array_equal(back["L0"], a)


def test_atomic_write_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "x.txt"
    atomic_write(p, "hello\n")
    atomic_write(p, b"bye\n")
    assert p.read_bytes() == b"bye\n"
    assert [q.name for q in p.parent.iterdir()] == ["x.txt"]


def test_scene_file_round_trip(tmp_path, scenes):
    sc = scenes(1)[0]
    write_scene(sc, tmp_path / "s.json")
    assert read_scene(tmp_path / "s.json") == sc


def test_scene_ignores_extra_keys(scenes):
    from geodiag.io import scene_to_dict

    sc = scenes(1)[0]
    d = scene_to_dict(sc)
    d["diagnostics"] = {"unknown_glyphs": []}
    assert loads_scene(json.dumps(d)) == sc


def test_png_round_trip(tmp_path):
    img = (np.arange(60, dtype=np.uint8).reshape(6, 10) * 4)
    write_png(img, tmp_path / "a.png")
    assert np.array_equal(read_png(tmp_path / "a.png"), img)


def test_png_garbage_raises(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"\x89PNG\r\n\x1a\nnot really")
    with pytest.raises(ValueError):
        read_png(p)
