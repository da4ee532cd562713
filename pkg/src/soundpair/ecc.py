"""Reed-Solomon error correction over GF(256).

Systematic RS code with configurable parity length; 8 parity bytes
correct up to 4 byte errors per frame, enough to ride out short
impulsive-noise hits on the acoustic channel. CRC-32 (zlib) is used as
the end-to-end integrity check on top.

Polynomials are lists of GF(256) coefficients, highest order first.
"""

from __future__ import annotations

_PRIM_POLY = 0x11D  # x^8 + x^4 + x^3 + x^2 + 1

_EXP = [0] * 512
_LOG = [0] * 256


def _build_tables() -> None:
    x = 1
    for i in range(255):
        _EXP[i] = x
        _LOG[x] = i
        x <<= 1
        if x & 0x100:
            x ^= _PRIM_POLY
    for i in range(255, 512):
        _EXP[i] = _EXP[i - 255]


_build_tables()


class ReedSolomonError(Exception):
    """Raised when a codeword has more errors than the code can correct."""


def _mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return _EXP[_LOG[a] + _LOG[b]]


def _div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError
    if a == 0:
        return 0
    return _EXP[(_LOG[a] - _LOG[b]) % 255]


def _inv(a: int) -> int:
    return _EXP[255 - _LOG[a]]


def _pow(a: int, n: int) -> int:
    return _EXP[(_LOG[a] * n) % 255]


def _poly_scale(p: list[int], x: int) -> list[int]:
    return [_mul(c, x) for c in p]


def _poly_add(p: list[int], q: list[int]) -> list[int]:
    out = [0] * max(len(p), len(q))
    out[len(out) - len(p) :] = p
    for i, c in enumerate(q):
        out[i + len(out) - len(q)] ^= c
    return out


def _poly_mul(p: list[int], q: list[int]) -> list[int]:
    out = [0] * (len(p) + len(q) - 1)
    for i, pi in enumerate(p):
        if pi == 0:
            continue
        for j, qj in enumerate(q):
            out[i + j] ^= _mul(pi, qj)
    return out


def _poly_eval(poly: list[int], x: int) -> int:
    y = poly[0]
    for coef in poly[1:]:
        y = _mul(y, x) ^ coef
    return y


def _generator_poly(nsym: int) -> list[int]:
    g = [1]
    for i in range(nsym):
        g = _poly_mul(g, [1, _EXP[i]])
    return g


def rs_encode(data: bytes, nsym: int) -> bytes:
    """Append nsym parity bytes; len(data) + nsym must be <= 255."""
    if len(data) + nsym > 255:
        raise ValueError("codeword exceeds 255 bytes")
    gen = _generator_poly(nsym)
    rem = list(data) + [0] * nsym
    for i in range(len(data)):
        coef = rem[i]
        if coef == 0:
            continue
        for j in range(1, len(gen)):
            rem[i + j] ^= _mul(gen[j], coef)
    return data + bytes(rem[len(data) :])


def _syndromes(msg: list[int], nsym: int) -> list[int]:
    return [_poly_eval(msg, _EXP[i]) for i in range(nsym)]


def _error_locator(synd: list[int], nsym: int) -> list[int]:
    """Berlekamp-Massey; returns the locator polynomial, highest order first."""
    err_loc = [1]
    old_loc = [1]
    for i in range(nsym):
        old_loc = old_loc + [0]
        delta = synd[i]
        for j in range(1, len(err_loc)):
            delta ^= _mul(err_loc[-(j + 1)], synd[i - j])
        if delta != 0:
            if len(old_loc) > len(err_loc):
                new_loc = _poly_scale(old_loc, delta)
                old_loc = _poly_scale(err_loc, _inv(delta))
                err_loc = new_loc
            err_loc = _poly_add(err_loc, _poly_scale(old_loc, delta))
    while len(err_loc) and err_loc[0] == 0:
        err_loc.pop(0)
    errs = len(err_loc) - 1
    if errs * 2 > nsym:
        raise ReedSolomonError("too many errors to correct")
    return err_loc


def _find_errors(err_loc: list[int], nmess: int) -> list[int]:
    """Chien search; returns error positions in the message."""
    errs = len(err_loc) - 1
    err_pos = []
    for i in range(nmess):
        if _poly_eval(err_loc, _pow(2, i)) == 0:
            err_pos.append(nmess - 1 - i)
    if len(err_pos) != errs:
        raise ReedSolomonError("error locator root count mismatch")
    return err_pos


def _correct_errata(msg: list[int], synd: list[int], err_pos: list[int]) -> list[int]:
    """Forney algorithm: compute and subtract error magnitudes in place."""
    coef_pos = [len(msg) - 1 - p for p in err_pos]
    # errata locator: prod(1 - x * 2^ci)
    loc = [1]
    for ci in coef_pos:
        loc = _poly_mul(loc, _poly_add([1], [_pow(2, ci), 0]))
    # error evaluator: (x * synd_reversed * loc) mod x^(len(loc)-1 + 1)
    ev = _poly_mul(synd[::-1] + [0], loc)
    ev = ev[len(ev) - len(loc) :]

    x_vals = [_pow(2, ci) for ci in coef_pos]
    for i, xi in enumerate(x_vals):
        xi_inv = _inv(xi)
        loc_prime = 1
        for j, xj in enumerate(x_vals):
            if j != i:
                loc_prime = _mul(loc_prime, 1 ^ _mul(xi_inv, xj))
        if loc_prime == 0:
            raise ReedSolomonError("formal derivative is zero")
        y = _mul(xi, _poly_eval(ev, xi_inv))
        msg[err_pos[i]] ^= _div(y, loc_prime)
    return msg


def rs_decode(codeword: bytes, nsym: int) -> bytes:
    """Correct up to nsym // 2 byte errors; returns data without parity.

    Raises ReedSolomonError when correction fails.
    """
    if len(codeword) > 255:
        raise ValueError("codeword exceeds 255 bytes")
    if len(codeword) <= nsym:
        raise ReedSolomonError("codeword shorter than parity")
    msg = list(codeword)
    synd = _syndromes(msg, nsym)
    if max(synd) == 0:
        return bytes(msg[:-nsym])
    err_loc = _error_locator(synd, nsym)
    err_pos = _find_errors(err_loc[::-1], len(msg))
    msg = _correct_errata(msg, synd, err_pos)
    if max(_syndromes(msg, nsym)) != 0:
        raise ReedSolomonError("residual syndrome after correction")
    return bytes(msg[:-nsym])
