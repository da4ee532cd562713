"""Minimal RIFF/WAVE reader and writer.

Handles mono PCM 16-bit and IEEE float32 files, plus raw little-endian
float32 streams. Internal sample format is float64 in [-1, 1].
"""

from __future__ import annotations

import struct

import numpy as np


class WavError(Exception):
    pass


def write_wav(path: str, samples: np.ndarray, sample_rate: int = 48000, fmt: str = "int16") -> None:
    samples = np.asarray(samples, dtype=np.float64)
    if fmt == "int16":
        data = (np.clip(samples, -1.0, 1.0) * 32767).astype("<i2").tobytes()
        audio_fmt, bits = 1, 16
    elif fmt == "float32":
        data = samples.astype("<f4").tobytes()
        audio_fmt, bits = 3, 32
    else:
        raise WavError(f"unsupported format {fmt!r}")
    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        audio_fmt,
        1,
        sample_rate,
        sample_rate * block,
        block,
        bits,
        b"data",
        len(data),
    )
    with open(path, "wb") as fh:
        fh.write(header + data)


def read_wav(path: str) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 44 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavError("not a RIFF/WAVE file")
    pos = 12
    fmt_chunk = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            fmt_chunk = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt_chunk is None or data is None:
        raise WavError("missing fmt or data chunk")
    audio_fmt, channels, sample_rate, _, _, bits = fmt_chunk
    if channels != 1:
        raise WavError("only mono files are supported")
    if audio_fmt == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0
    elif audio_fmt == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"unsupported encoding (fmt={audio_fmt}, bits={bits})")
    return samples, sample_rate


def write_raw_f32(path: str, samples: np.ndarray) -> None:
    np.asarray(samples, dtype="<f4").tofile(path)


def read_raw_f32(path: str) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").astype(np.float64)
