"""Software-defined acoustic physical layer.

Banked multi-frequency FSK: 96 tones from 1875 Hz, spaced 46.875 Hz
apart, split into 6 banks of 16 tones. Each symbol superimposes one tone
per bank, so a symbol carries 6 nibbles = 3 bytes. At the default
profile (48 kHz, 1024-sample symbols) the tone spacing equals the DFT
bin width, making the tones orthogonal over one symbol.

Frames are kind | length | payload | CRC-32, protected by Reed-Solomon
parity, wrapped in a 4-symbol sync preamble and a 1-symbol end marker.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .ecc import ReedSolomonError, rs_decode, rs_encode

BANK_COUNT = 6
BANK_SIZE = 16
BYTES_PER_SYMBOL = 3
PREAMBLE_SYMBOLS = 4
END_SYMBOLS = 1
MAX_PAYLOAD = 64
HEADER_LEN = 2  # kind + length
CRC_LEN = 4

# Reserved nibble patterns for sync; chosen to alternate within and
# across banks so the correlator has a sharp peak.
_PREAMBLE_A = (0x2, 0xD, 0x2, 0xD, 0x2, 0xD)
_PREAMBLE_B = (0xD, 0x2, 0xD, 0x2, 0xD, 0x2)
_END_MARKER = (0x5, 0xA, 0x5, 0xA, 0x5, 0xA)

# Mean per-bank concentration (0..1) a preamble candidate must reach.
SYNC_THRESHOLD = 0.55

_EDGE_RAMP = 64  # samples of raised-cosine ramp at each symbol edge


class ModemError(Exception):
    pass


@dataclass(frozen=True)
class ModemProfile:
    sample_rate: int = 48000
    base_freq: float = 1875.0
    tone_spacing: float = 46.875
    tone_count: int = 96
    tones_per_symbol: int = BANK_COUNT
    symbol_len: int = 1024
    guard_len: int = 0
    ecc_parity_bytes: int = 8

    def __post_init__(self):
        top = self.base_freq + self.tone_count * self.tone_spacing
        if top >= self.sample_rate / 2:
            raise ModemError("tone band exceeds Nyquist frequency")

    @property
    def symbol_stride(self) -> int:
        return self.symbol_len + self.guard_len


def tone_frequency(profile: ModemProfile, index: int) -> float:
    """Frequency of tone ``index``; valid indices are 0..tone_count-1."""
    if not 0 <= index < profile.tone_count:
        raise ModemError(f"tone index {index} out of range 0..{profile.tone_count - 1}")
    return profile.base_freq + index * profile.tone_spacing


class FrameKind(enum.IntEnum):
    NETWORK_INIT = 1
    VERIFY_HASH = 2


@dataclass(frozen=True)
class OobFrame:
    kind: FrameKind
    payload: bytes
    crc: int = field(default=-1)

    def __post_init__(self):
        if len(self.payload) > MAX_PAYLOAD:
            raise ModemError(f"payload exceeds {MAX_PAYLOAD} bytes")
        if self.crc == -1:
            object.__setattr__(self, "crc", frame_crc(self.kind, self.payload))

    def crc_ok(self) -> bool:
        return self.crc == frame_crc(self.kind, self.payload)


def frame_crc(kind: FrameKind, payload: bytes) -> int:
    return zlib.crc32(bytes([kind]) + payload) & 0xFFFFFFFF


def make_network_init(network_id: bytes, network_key: bytes, session_id: bytes) -> OobFrame:
    if len(network_id) != 6 or len(network_key) != 8 or len(session_id) != 16:
        raise ModemError("network init fields must be 6 + 8 + 16 bytes")
    return OobFrame(FrameKind.NETWORK_INIT, network_id + network_key + session_id)


def make_verify_hash(oob_truncation: bytes, session_id: bytes) -> OobFrame:
    if len(oob_truncation) != 16 or len(session_id) != 16:
        raise ModemError("verify hash fields must be 16 + 16 bytes")
    return OobFrame(FrameKind.VERIFY_HASH, oob_truncation + session_id)


class DecodeStatus(enum.Enum):
    FRAME = "frame"
    NO_FRAME = "no-frame"
    CORRUPT = "corrupt-frame"


@dataclass(frozen=True)
class DecodeResult:
    status: DecodeStatus
    frame: OobFrame | None = None


class ListenVerdict(enum.Enum):
    MATCH = "match"
    MISMATCH = "mismatch"
    FOREIGN_FRAME = "foreign-frame"
    NOTHING = "nothing"


# --- encode ---------------------------------------------------------------


def _frame_bytes(profile: ModemProfile, frame: OobFrame) -> bytes:
    raw = bytes([frame.kind, len(frame.payload)]) + frame.payload
    raw += struct.pack(">I", frame.crc)
    return rs_encode(raw, profile.ecc_parity_bytes)


def _symbols_for_payload(profile: ModemProfile, payload_len: int) -> int:
    raw = HEADER_LEN + payload_len + CRC_LEN + profile.ecc_parity_bytes
    return -(-raw // BYTES_PER_SYMBOL)


def encoded_sample_count(profile: ModemProfile, payload_len: int) -> int:
    """Exact length in samples of an encoded frame with the given payload size."""
    nsym = PREAMBLE_SYMBOLS + _symbols_for_payload(profile, payload_len) + END_SYMBOLS
    return nsym * profile.symbol_stride


def _bytes_to_nibble_rows(data: bytes) -> list[tuple[int, ...]]:
    padded = data + bytes(-len(data) % BYTES_PER_SYMBOL)
    rows = []
    for i in range(0, len(padded), BYTES_PER_SYMBOL):
        b0, b1, b2 = padded[i : i + BYTES_PER_SYMBOL]
        rows.append((b0 >> 4, b0 & 0xF, b1 >> 4, b1 & 0xF, b2 >> 4, b2 & 0xF))
    return rows


def _symbol_window(profile: ModemProfile) -> np.ndarray:
    n = profile.symbol_len
    win = np.ones(n)
    ramp = min(_EDGE_RAMP, n // 4)
    edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    win[:ramp] = edge
    win[-ramp:] = edge[::-1]
    return win


def _synth_symbol(profile: ModemProfile, nibbles: tuple[int, ...], t: np.ndarray, win: np.ndarray) -> np.ndarray:
    out = np.zeros(profile.symbol_len)
    for bank, nib in enumerate(nibbles):
        freq = tone_frequency(profile, bank * BANK_SIZE + nib)
        out += np.cos(2.0 * np.pi * freq * t)
    return (out / BANK_COUNT) * win


def encode(profile: ModemProfile, frame: OobFrame) -> np.ndarray:
    """Modulate a frame into a float PCM buffer with peak magnitude <= 1."""
    data = _frame_bytes(profile, frame)
    rows = (
        [_PREAMBLE_A, _PREAMBLE_B] * (PREAMBLE_SYMBOLS // 2)
        + _bytes_to_nibble_rows(data)
        + [_END_MARKER] * END_SYMBOLS
    )
    t = np.arange(profile.symbol_len) / profile.sample_rate
    win = _symbol_window(profile)
    out = np.zeros(len(rows) * profile.symbol_stride, dtype=np.float32)
    for i, row in enumerate(rows):
        start = i * profile.symbol_stride
        out[start : start + profile.symbol_len] = _synth_symbol(profile, row, t, win)
    return out


# --- decode ---------------------------------------------------------------


def _bank_mags(profile: ModemProfile, windows: np.ndarray) -> np.ndarray:
    """Per-window tone magnitudes, shape (n_windows, BANK_COUNT, BANK_SIZE).

    Tone k sits near DFT bin round(freq * symbol_len / sample_rate); at the
    default profile the mapping is exact (one tone per bin).
    """
    spec = np.abs(np.fft.rfft(windows, axis=-1))
    bins = np.array(
        [
            int(round(tone_frequency(profile, k) * profile.symbol_len / profile.sample_rate))
            for k in range(profile.tone_count)
        ]
    )
    mags = spec[:, bins]
    return mags.reshape(len(windows), BANK_COUNT, BANK_SIZE)


def _pattern_score(mags: np.ndarray, pattern: tuple[int, ...]) -> np.ndarray:
    """Mean fraction of per-bank energy on the pattern tones, per window."""
    energy = mags**2
    total = energy.sum(axis=-1) + 1e-12
    on = energy[:, np.arange(BANK_COUNT), pattern]
    return (on / total).mean(axis=-1)


_PREAMBLE_PATTERNS = (_PREAMBLE_A, _PREAMBLE_B, _PREAMBLE_A, _PREAMBLE_B)


def _preamble_score_at(profile: ModemProfile, samples: np.ndarray, offset: int) -> float:
    stride = profile.symbol_stride
    wins = np.stack(
        [samples[offset + i * stride : offset + i * stride + profile.symbol_len] for i in range(PREAMBLE_SYMBOLS)]
    )
    mags = _bank_mags(profile, wins)
    return float(
        np.mean([_pattern_score(mags[i : i + 1], p)[0] for i, p in enumerate(_PREAMBLE_PATTERNS)])
    )


def _find_preamble(profile: ModemProfile, samples: np.ndarray, start: int) -> int | None:
    """Leftmost sync position at or after ``start``; None when absent."""
    stride = profile.symbol_stride
    need = PREAMBLE_SYMBOLS * stride
    hop = profile.symbol_len // 4
    n = len(samples)
    if n - start < need:
        return None
    offsets = np.arange(start, n - need + 1, hop)
    if len(offsets) == 0:
        return None
    # One strided view covering every hop-aligned window.
    win_starts = np.arange(start, n - profile.symbol_len + 1, hop)
    windows = np.lib.stride_tricks.sliding_window_view(samples, profile.symbol_len)[
        win_starts
    ]
    mags = _bank_mags(profile, windows)
    per_sym = stride // hop
    scores = np.zeros(len(offsets))
    count = 0
    for i, pattern in enumerate(_PREAMBLE_PATTERNS):
        idx = np.arange(len(offsets)) + i * per_sym
        valid = idx < len(windows)
        scores[valid] += _pattern_score(mags[idx[valid]], pattern)
        count += 1
    scores /= count
    hits = np.nonzero(scores >= SYNC_THRESHOLD)[0]
    if len(hits) == 0:
        return None
    coarse = int(offsets[hits[0]])
    # Refine alignment around the coarse hit.
    best, best_score = coarse, -1.0
    for off in range(max(start, coarse - hop), min(n - need, coarse + hop) + 1, 16):
        s = _preamble_score_at(profile, samples, off)
        if s > best_score:
            best, best_score = off, s
    return best


def _demod_symbols(profile: ModemProfile, samples: np.ndarray, offset: int, count: int) -> bytes | None:
    """Demodulate ``count`` data symbols starting at ``offset``; None if short."""
    stride = profile.symbol_stride
    if offset + (count - 1) * stride + profile.symbol_len > len(samples):
        return None
    wins = np.stack(
        [samples[offset + i * stride : offset + i * stride + profile.symbol_len] for i in range(count)]
    )
    mags = _bank_mags(profile, wins)
    nibbles = mags.argmax(axis=-1)  # (count, BANK_COUNT)
    out = bytearray()
    for row in nibbles:
        out.append((row[0] << 4) | row[1])
        out.append((row[2] << 4) | row[3])
        out.append((row[4] << 4) | row[5])
    return bytes(out)


def _decode_at(
    profile: ModemProfile, samples: np.ndarray, sync: int
) -> tuple[DecodeResult, int]:
    """Decode one frame whose preamble starts at ``sync``.

    Returns the result and the offset just past the frame (for multi-frame
    scans); on corruption the skip is one symbol past the preamble.
    """
    stride = profile.symbol_stride
    data_start = sync + PREAMBLE_SYMBOLS * stride
    resync = sync + stride  # rescan point when this candidate is corrupt
    head = _demod_symbols(profile, samples, data_start, 1)
    if head is None:
        return DecodeResult(DecodeStatus.CORRUPT), resync
    kind_byte, length = head[0], head[1]
    if kind_byte not in (FrameKind.NETWORK_INIT, FrameKind.VERIFY_HASH) or length > MAX_PAYLOAD:
        return DecodeResult(DecodeStatus.CORRUPT), resync
    nsym = _symbols_for_payload(profile, length)
    raw_len = HEADER_LEN + length + CRC_LEN + profile.ecc_parity_bytes
    body = _demod_symbols(profile, samples, data_start, nsym)
    if body is None:
        return DecodeResult(DecodeStatus.CORRUPT), resync
    try:
        raw = rs_decode(body[:raw_len], profile.ecc_parity_bytes)
    except ReedSolomonError:
        return DecodeResult(DecodeStatus.CORRUPT), resync
    kind_byte, length2 = raw[0], raw[1]
    if (
        kind_byte not in (FrameKind.NETWORK_INIT, FrameKind.VERIFY_HASH)
        or length2 != length
        or len(raw) != HEADER_LEN + length + CRC_LEN
    ):
        return DecodeResult(DecodeStatus.CORRUPT), resync
    payload = raw[HEADER_LEN : HEADER_LEN + length]
    (crc,) = struct.unpack(">I", raw[HEADER_LEN + length :])
    if crc != frame_crc(FrameKind(kind_byte), payload):
        return DecodeResult(DecodeStatus.CORRUPT), resync
    frame = OobFrame(FrameKind(kind_byte), payload, crc)
    end = data_start + (nsym + END_SYMBOLS) * stride
    return DecodeResult(DecodeStatus.FRAME, frame), end


def decode_all(profile: ModemProfile, samples: np.ndarray) -> list[DecodeResult]:
    """Scan a buffer for every frame (decodable or corrupt) it contains."""
    samples = np.asarray(samples, dtype=np.float64)
    results: list[DecodeResult] = []
    pos = 0
    while True:
        sync = _find_preamble(profile, samples, pos)
        if sync is None:
            return results
        result, pos = _decode_at(profile, samples, sync)
        results.append(result)


def decode(profile: ModemProfile, samples: np.ndarray) -> DecodeResult:
    """Decode the first frame found in a buffer."""
    results = decode_all(profile, samples)
    for r in results:
        if r.status is DecodeStatus.FRAME:
            return r
    if results:
        return results[0]
    return DecodeResult(DecodeStatus.NO_FRAME)


def listen_window(
    profile: ModemProfile, samples: np.ndarray, expected: bytes
) -> ListenVerdict:
    """Judge a verification listen window.

    MATCH requires exactly one decodable frame, a VERIFY_HASH whose payload
    equals ``expected``, and nothing else; any other or corrupt frame yields
    FOREIGN_FRAME; a decodable-but-different verify hash alone is MISMATCH.
    """
    results = decode_all(profile, samples)
    if not results:
        return ListenVerdict.NOTHING
    frames = [r.frame for r in results if r.status is DecodeStatus.FRAME]
    corrupt = sum(1 for r in results if r.status is DecodeStatus.CORRUPT)
    expected_frame = OobFrame(FrameKind.VERIFY_HASH, expected)
    matches = [f for f in frames if f == expected_frame]
    others = [f for f in frames if f != expected_frame]
    if corrupt or len(matches) > 1 or (matches and others):
        return ListenVerdict.FOREIGN_FRAME
    if len(matches) == 1:
        return ListenVerdict.MATCH
    if others:
        if len(others) == 1 and others[0].kind is FrameKind.VERIFY_HASH:
            return ListenVerdict.MISMATCH
        return ListenVerdict.FOREIGN_FRAME
    return ListenVerdict.NOTHING
