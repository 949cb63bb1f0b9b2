"""File formats: binary PGM (P5) images, headerless CSV matrices, JSON reports."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from lowrank.image import ImageBuffer, Provenance
from lowrank.linalg import as_matrix


class PgmError(ValueError):
    """Base class for PGM decoding failures."""


class UnsupportedFormatError(PgmError):
    pass


class MalformedHeaderError(PgmError):
    pass


class UnsupportedMaxvalError(PgmError):
    pass


class TruncatedPayloadError(PgmError):
    pass


class CsvFormatError(ValueError):
    pass


_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last token.
    """
    tokens = []
    i, n = 0, len(data)
    while len(tokens) < count:
        while i < n and data[i] in _WHITESPACE:
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] not in b"\r\n":
                i += 1
            continue
        if i >= n:
            raise MalformedHeaderError("unexpected end of file inside PGM header")
        start = i
        while i < n and data[i] not in _WHITESPACE and data[i] != ord("#"):
            i += 1
        tokens.append(data[start:i])
    return tokens, i


def decode_pgm(data: bytes, name: str = "") -> ImageBuffer:
    if data[:2] != b"P5":
        magic = data[:2].decode("ascii", errors="replace")
        raise UnsupportedFormatError(f"only binary PGM (P5) is supported, got magic {magic!r}")
    tokens, end = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedHeaderError(f"non-integer PGM header field: {exc}") from exc
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"only maxval 255 is supported, got {maxval}")
    if end >= len(data) or data[end] not in _WHITESPACE:
        raise MalformedHeaderError("PGM header must end with a single whitespace byte")
    payload = data[end + 1 :]
    if len(payload) < width * height:
        raise TruncatedPayloadError(
            f"PGM payload has {len(payload)} bytes, expected {width * height}"
        )
    px = np.frombuffer(payload[: width * height], dtype=np.uint8).reshape(height, width)
    return ImageBuffer(px.astype(np.float64), Provenance.CLEAN, name)


def read_pgm(path) -> ImageBuffer:
    path = Path(path)
    return decode_pgm(path.read_bytes(), path.stem)


def quantize(pixels) -> np.ndarray:
    """Round half away from zero, then clamp to ``[0, 255]`` as uint8."""
    px = np.asarray(pixels, dtype=np.float64)
    rounded = np.sign(px) * np.floor(np.abs(px) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def encode_pgm(img) -> bytes:
    px = quantize(img.pixels if isinstance(img, ImageBuffer) else img)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def write_pgm(img, path) -> None:
    Path(path).write_bytes(encode_pgm(img))


def read_csv_matrix(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError as exc:
                raise CsvFormatError(f"row {lineno}: non-numeric cell ({exc})") from exc
            if len(rows[-1]) != len(rows[0]):
                raise CsvFormatError(
                    f"row {lineno}: expected {len(rows[0])} columns, found {len(rows[-1])}"
                )
    if not rows:
        raise CsvFormatError("CSV file contains no rows")
    try:
        return as_matrix(rows)
    except ValueError as exc:
        raise CsvFormatError(str(exc)) from exc


def write_csv_matrix(M, path) -> None:
    M = as_matrix(M)
    with open(path, "w", newline="") as fh:
        for row in M:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def encode_float(x):
    """JSON-safe float: infinities become the strings ``"inf"`` / ``"-inf"``."""
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def decode_float(x):
    if x == "inf":
        return math.inf
    if x == "-inf":
        return -math.inf
    return x


@dataclass
class ReportDocument:
    method: str
    image: str
    noise_level: float
    parameters: dict
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    runtime_seconds: float = 0.0
    trace_path: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["psnr"] = encode_float(d["psnr"])
        for key in ("noise_level", "psnr", "ssim", "runtime_seconds"):
            v = d[key]
            if isinstance(v, float) and math.isnan(v):
                raise ValueError(f"report field {key} is NaN")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReportDocument":
        d = dict(d)
        d["psnr"] = decode_float(d.get("psnr"))
        return cls(**d)


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_report(doc, path) -> None:
    """Write one report (or a list of reports) as stable-key-order UTF-8 JSON."""
    if isinstance(doc, ReportDocument):
        payload = doc.to_dict()
    else:
        payload = [d.to_dict() for d in doc]
    Path(path).write_text(dumps_json(payload), encoding="utf-8")


def read_report(path):
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(payload, list):
        return [ReportDocument.from_dict(d) for d in payload]
    return ReportDocument.from_dict(payload)


def write_table(rows, path, columns) -> None:
    """Write dict rows to CSV with a fixed column order and ``%.6f``-style floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt_cell(row.get(c)) for c in columns])


def _fmt_cell(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return "" if v is None else v
