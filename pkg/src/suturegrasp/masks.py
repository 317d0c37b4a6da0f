"""Binary masks: PGM/PNG I/O, centerline extraction and tip localization."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import EmptyInputError, MaskFormatError, TipNotFoundError

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class Mask:
    """Row-major binary occupancy; ``bits[v, u]`` is True on suture pixels."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2-D array, got shape {bits.shape}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def __contains__(self, uv) -> bool:
        u, v = uv
        return 0 <= u < self.width and 0 <= v < self.height and bool(self.bits[v, u])

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))

    def pixels(self) -> list[tuple[int, int]]:
        """Foreground pixels as (u, v) in raster order."""
        vs, us = np.nonzero(self.bits)
        return list(zip(us.tolist(), vs.tolist()))

    @classmethod
    def from_pixels(cls, width: int, height: int, pixels) -> "Mask":
        bits = np.zeros((height, width), dtype=bool)
        for u, v in pixels:
            bits[v, u] = True
        return cls(bits)


@dataclass(frozen=True)
class Skeleton:
    """One-pixel-wide centerline pixels of ``source``."""

    pixels: frozenset
    source: Mask = field(repr=False, compare=False)

    def __len__(self):
        return len(self.pixels)

    def __contains__(self, uv):
        return tuple(uv) in self.pixels

    def as_mask(self) -> Mask:
        return Mask.from_pixels(self.source.width, self.source.height, self.pixels)

    def sorted_pixels(self) -> list[tuple[int, int]]:
        """Pixels in raster (v, u) order."""
        return sorted(self.pixels, key=lambda p: (p[1], p[0]))


@dataclass(frozen=True)
class TipSeed:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"tip seed radius must be positive, got {self.radius}")


# --------------------------------------------------------------------------
# PGM / PNG


def _read_header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 2
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MaskFormatError("truncated PNM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos:pos + 1].isspace():
        raise MaskFormatError("missing whitespace after PNM header")
    return tokens, pos + 1


def _parse_int(tok: bytes, what: str) -> int:
    try:
        val = int(tok)
    except ValueError:
        raise MaskFormatError(f"malformed {what}: {tok!r}") from None
    if val < 1:
        raise MaskFormatError(f"{what} must be positive, got {val}")
    return val


def decode_pnm(data: bytes) -> Mask:
    """Decode binary PGM (P5) or PBM (P4) bytes into a Mask."""
    magic = data[:2]
    if magic == b"P5":
        (tw, th, tm), off = _read_header_tokens(data, 3)
        w, h = _parse_int(tw, "width"), _parse_int(th, "height")
        maxval = _parse_int(tm, "maxval")
        if maxval > 255:
            raise MaskFormatError(f"unsupported bit depth: maxval {maxval}")
        raster = data[off:off + w * h]
        if len(raster) != w * h:
            raise MaskFormatError(f"expected {w * h} raster bytes, got {len(raster)}")
        arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
        if maxval == 255:
            return Mask(arr > 127)
        # rescale so the >127 threshold refers to the 8-bit range
        return Mask(arr.astype(np.float64) * (255.0 / maxval) > 127)
    if magic == b"P4":
        (tw, th), off = _read_header_tokens(data, 2)
        w, h = _parse_int(tw, "width"), _parse_int(th, "height")
        stride = (w + 7) // 8
        raster = data[off:off + stride * h]
        if len(raster) != stride * h:
            raise MaskFormatError(f"expected {stride * h} raster bytes, got {len(raster)}")
        packed = np.frombuffer(raster, dtype=np.uint8).reshape(h, stride)
        return Mask(np.unpackbits(packed, axis=1)[:, :w].astype(bool))
    raise MaskFormatError(f"unsupported magic number {magic!r}")


def encode_pgm(mask: Mask) -> bytes:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    return header + (mask.bits.astype(np.uint8) * 255).tobytes()


def encode_pbm(mask: Mask) -> bytes:
    header = f"P4\n{mask.width} {mask.height}\n".encode("ascii")
    return header + np.packbits(mask.bits.astype(np.uint8), axis=1).tobytes()


def load_mask(path) -> Mask:
    """Read a P4/P5 PNM or an 8-bit grayscale PNG; foreground is value > 127
    (bit 1 for P4)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    return decode_pnm(data)


def _load_png(path) -> Mask:
    try:
        from PIL import Image
    except ImportError:
        raise MaskFormatError("PNG support requires Pillow") from None
    with Image.open(path) as im:
        if im.mode == "1":
            return Mask(np.asarray(im, dtype=bool))
        if im.mode not in ("L", "P"):
            raise MaskFormatError(f"unsupported PNG mode {im.mode!r}; expected 8-bit grayscale")
        arr = np.asarray(im.convert("L"))
    return Mask(arr > 127)


def save_mask(mask: Mask, path, fmt: str | None = None) -> None:
    """Write ``mask`` as P5 (default) or P4 (``fmt="P4"`` or ``.pbm`` suffix)."""
    if fmt is None:
        fmt = "P4" if os.fspath(path).lower().endswith(".pbm") else "P5"
    data = encode_pbm(mask) if fmt.upper() == "P4" else encode_pgm(mask)
    with open(path, "wb") as fh:
        fh.write(data)


# --------------------------------------------------------------------------
# centerline


def _simple_point_table() -> np.ndarray:
    # Ring order: N, NE, E, SE, S, SW, W, NW as (dv, du) offsets.
    ring = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    edge = {0, 2, 4, 6}
    table = np.zeros(256, dtype=bool)
    for code in range(256):
        fg = [bool(code >> k & 1) for k in range(8)]
        # 8-components of foreground neighbours
        seen = set()
        n_fg = 0
        for k in range(8):
            if not fg[k] or k in seen:
                continue
            n_fg += 1
            stack = [k]
            seen.add(k)
            while stack:
                a = stack.pop()
                for b in range(8):
                    if fg[b] and b not in seen and max(abs(ring[a][0] - ring[b][0]),
                                                       abs(ring[a][1] - ring[b][1])) == 1:
                        seen.add(b)
                        stack.append(b)
        # 4-components of background neighbours that touch the centre's 4-neighbours
        if all(fg) or not any(fg):
            n_bg = 0 if all(fg) else 1
        else:
            start = next(k for k in range(8) if fg[k])
            n_bg = 0
            k = start
            in_run = False
            touches = False
            for step in range(1, 9):
                k = (start + step) % 8
                if not fg[k]:
                    in_run = True
                    touches = touches or k in edge
                elif in_run:
                    n_bg += touches
                    in_run = False
                    touches = False
            if in_run:
                n_bg += touches
        table[code] = n_fg == 1 and n_bg == 1
    return table


_SIMPLE = _simple_point_table()
_RING = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


def _ring_code(img: np.ndarray, v: int, u: int) -> int:
    code = 0
    for k, (dv, du) in enumerate(_RING):
        if img[v + dv, u + du]:
            code |= 1 << k
    return code


def _deletable_table() -> np.ndarray:
    # Simple pixels with at least three neighbours, or exactly two that are both
    # edge neighbours (a staircase corner). A two-neighbour pixel with a
    # diagonal neighbour is the end of a two-pixel-thick run; deleting it
    # would let the cleanup unzip the run from its end.
    edge_bits = 0b01010101
    out = np.zeros(256, dtype=bool)
    for code in range(256):
        n = bin(code).count("1")
        if _SIMPLE[code] and (n >= 3 or (n == 2 and code & ~edge_bits & 0xFF == 0)):
            out[code] = True
    return out


def _remove_redundant(img: np.ndarray) -> None:
    """Delete redundant simple pixels (staircase corners) in raster order, in place.

    ``img`` is zero-padded by one pixel on every side.
    """
    changed = True
    while changed:
        changed = False
        vs, us = np.nonzero(img)
        for v, u in zip(vs.tolist(), us.tolist()):
            code = _ring_code(img, v, u)
            if _DELETABLE[code]:
                img[v, u] = 0
                changed = True


_DELETABLE = _deletable_table()


def remove_small_components(mask: Mask, min_area: int) -> Mask:
    """Drop 8-connected foreground components with fewer than ``min_area`` pixels."""
    if min_area <= 1:
        return mask
    labels, n = ndimage.label(mask.bits, structure=_EIGHT)
    if n == 0:
        return mask
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return Mask(keep[labels])


def close_mask(mask: Mask, size: int = 3) -> Mask:
    """Binary closing with a ``size`` x ``size`` square, never removing pixels.

    Fills pinholes that pixel noise punches into thin strokes; such holes
    would otherwise count as out-of-zone pixels along the true continuation.
    """
    if size <= 1:
        return mask
    closed = ndimage.binary_closing(mask.bits, structure=np.ones((size, size), dtype=bool))
    return Mask(closed | mask.bits)


def preprocess_mask(mask: Mask, min_area: int = 10, closing: int = 3) -> Mask:
    """Speckle removal followed by closing; the result serves as both the
    thinning input and the search zone."""
    return close_mask(remove_small_components(mask, min_area), closing)


def extract_centerline(mask: Mask) -> Skeleton:
    """Zhang-Suen thinning of the mask foreground.

    Uses the Lu-Wang neighbour bound (3 <= B <= 6) so diagonal strokes are
    not erased. Staircase pixels whose removal keeps the local topology are then dropped
    so that curve pixels have exactly two neighbours, and any component the
    thinning erased completely (e.g. a 2x2 block) keeps one pixel.
    """
    if mask.count == 0:
        raise EmptyInputError("cannot extract a centerline from an empty mask")
    thin = kernels.zhang_suen(mask.bits, 3).astype(np.uint8)
    padded = np.pad(thin, 1)
    _remove_redundant(padded)
    thin = padded[1:-1, 1:-1].astype(bool)

    labels, n = ndimage.label(mask.bits, structure=_EIGHT)
    if n:
        kept = np.zeros(n + 1, dtype=bool)
        kept[np.unique(labels[thin])] = True
        for comp in np.nonzero(~kept[1:])[0] + 1:
            vs, us = np.nonzero(labels == comp)
            cv, cu = vs.mean(), us.mean()
            k = int(np.argmin((vs - cv) ** 2 + (us - cu) ** 2))
            thin[vs[k], us[k]] = True
    vs, us = np.nonzero(thin)
    return Skeleton(frozenset(zip(us.tolist(), vs.tolist())), mask)


def neighbour_count(pixels, uv) -> int:
    u, v = uv
    return sum((u + du, v + dv) in pixels
               for dv in (-1, 0, 1) for du in (-1, 0, 1) if du or dv)


def endpoints(skeleton: Skeleton) -> list[tuple[int, int]]:
    """Skeleton pixels with exactly one 8-connected skeleton neighbour."""
    px = skeleton.pixels
    return [p for p in skeleton.sorted_pixels() if neighbour_count(px, p) == 1]


def locate_tip(skeleton: Skeleton, seed: TipSeed) -> tuple[int, int]:
    """Endpoint nearest the seed centre inside the RoI, else the nearest pixel.

    Ties are broken by the smaller (v, u).
    """
    cu, cv = seed.center
    r2 = seed.radius * seed.radius
    in_roi = [p for p in skeleton.sorted_pixels()
              if (p[0] - cu) ** 2 + (p[1] - cv) ** 2 <= r2]
    if not in_roi:
        raise TipNotFoundError(
            f"no skeleton pixel within {seed.radius} px of ({cu}, {cv})")
    ends = [p for p in in_roi if neighbour_count(skeleton.pixels, p) == 1]
    pool = ends or in_roi
    return min(pool, key=lambda p: ((p[0] - cu) ** 2 + (p[1] - cv) ** 2, p[1], p[0]))
