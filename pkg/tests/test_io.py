import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank.image import ImageBuffer
from lowrank.io import (
    CsvFormatError,
    MalformedHeaderError,
    ReportDocument,
    TruncatedPayloadError,
    UnsupportedFormatError,
    UnsupportedMaxvalError,
    decode_pgm,
    encode_pgm,
    read_csv_matrix,
    read_pgm,
    read_report,
    write_csv_matrix,
    write_pgm,
    write_report,
    write_table,
)


def test_pgm_roundtrip_small(tmp_path):
    img = ImageBuffer(np.array([[0, 255], [128, 7]], dtype=float))
    path = tmp_path / "a.pgm"
    write_pgm(img, path)
    assert path.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 255, 128, 7])
    back = read_pgm(path)
    assert np.array_equal(back.pixels, img.pixels)
    assert back.name == "a"


def test_pgm_write_rounds_half_away_and_clamps(tmp_path):
    px = np.array([[0.5, 1.49, 254.5, 300.0]])
    path = tmp_path / "r.pgm"
    write_pgm(px, path)
    assert list(read_pgm(path).pixels[0]) == [1, 1, 255, 255]


def test_pgm_ascii_rejected():
    with pytest.raises(UnsupportedFormatError):
        decode_pgm(b"P2\n2 2\n255\n0 1 2 3\n")


def test_pgm_comments_skipped():
    data = b"P5\n# made by hand\n3 # width\n1\n# maxval next\n255\n" + bytes([1, 2, 3])
    img = decode_pgm(data)
    assert img.shape == (1, 3)
    assert list(img.pixels[0]) == [1, 2, 3]


def test_pgm_errors_are_distinct():
    with pytest.raises(UnsupportedMaxvalError):
        decode_pgm(b"P5 1 1 65535\n" + b"\x00\x00")
    with pytest.raises(TruncatedPayloadError):
        decode_pgm(b"P5 2 2 255\n" + b"\x00")
    with pytest.raises(MalformedHeaderError):
        decode_pgm(b"P5 2 x 255\n" + b"\x00" * 4)
    with pytest.raises(MalformedHeaderError):
        decode_pgm(b"P5 2")


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_pgm_roundtrip_property(h, w, seed):
    px = np.random.default_rng(seed).integers(0, 256, (h, w)).astype(float)
    data = encode_pgm(ImageBuffer(px))
    assert np.array_equal(decode_pgm(data).pixels, px)
    assert encode_pgm(decode_pgm(data)) == data


def test_csv_examples(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("1,2\n3,4\n")
    np.testing.assert_array_equal(read_csv_matrix(p), [[1, 2], [3, 4]])
    p.write_text("1,2\n3\n")
    with pytest.raises(CsvFormatError, match="row 2"):
        read_csv_matrix(p)
    p.write_text("1,a\n")
    with pytest.raises(CsvFormatError, match="row 1"):
        read_csv_matrix(p)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_csv_roundtrip_exact(tmp_path_factory, m, n, seed):
    M = np.random.default_rng(seed).standard_normal((m, n)) * 10.0 ** np.random.default_rng(seed).integers(-8, 8)
    p = tmp_path_factory.mktemp("csv") / "x.csv"
    write_csv_matrix(M, p)
    assert np.max(np.abs(read_csv_matrix(p) - M)) == 0


def make_doc(**kw):
    base = dict(
        method="DWLP",
        image="camera",
        noise_level=0.1,
        parameters={"solver": {"p": 0.65}, "seed": 1},
        psnr=31.5,
        ssim=0.9,
        runtime_seconds=1.25,
    )
    base.update(kw)
    return ReportDocument(**base)


def test_report_roundtrip(tmp_path):
    p = tmp_path / "r.json"
    doc = make_doc()
    write_report(doc, p)
    assert read_report(p) == doc
    first = p.read_bytes()
    write_report(read_report(p), p)
    assert p.read_bytes() == first


def test_report_infinite_psnr(tmp_path):
    p = tmp_path / "r.json"
    write_report(make_doc(psnr=math.inf), p)
    assert json.loads(p.read_text())["psnr"] == "inf"
    assert read_report(p).psnr == math.inf


def test_report_keys_sorted(tmp_path):
    p = tmp_path / "r.json"
    write_report(make_doc(), p)
    keys = list(json.loads(p.read_text()).keys())
    assert keys == sorted(keys)


def test_report_batch_aggregation(tmp_path):
    docs = [make_doc(image=f"img{i}", psnr=20.0 + i, ssim=0.5 + i / 100) for i in range(10)]
    p = tmp_path / "batch.json"
    write_report(docs, p)
    back = read_report(p)
    assert back == docs
    table = tmp_path / "t.csv"
    write_table([{"image": d.image, "psnr": d.psnr, "ssim": d.ssim} for d in back], table, ["image", "psnr", "ssim"])
    lines = table.read_text().splitlines()
    assert lines[0] == "image,psnr,ssim"
    for doc, line in zip(docs, lines[1:]):
        name, ps, ss = line.split(",")
        assert name == doc.image
        assert float(ps) == pytest.approx(doc.psnr, abs=1e-6)
        assert float(ss) == pytest.approx(doc.ssim, abs=1e-6)
