"""Binary PGM (P5) and PPM (P6) images with maxval 255."""
import numpy as np

_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}


def _tokens(data, count, pos):
    out = []
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        out.append(data[start:pos])
    return out, pos


def decode_pnm(data):
    """Parse P5/P6 bytes into an (H, W, C) uint8 array."""
    data = bytes(data)
    magic = data[:2]
    if magic not in _MAGIC_CHANNELS:
        raise ValueError("only binary PGM (P5) and PPM (P6) are supported")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError("only 8-bit images (maxval 255) are supported")
    if w < 1 or h < 1:
        raise ValueError("image must be non-empty")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ValueError("missing whitespace after PNM header")
    pos += 1
    c = _MAGIC_CHANNELS[magic]
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w * c, offset=pos) \
        if len(data) - pos >= h * w * c else None
    if pixels is None:
        raise ValueError("truncated PNM pixel data")
    return pixels.reshape(h, w, c).copy()


def encode_pnm(x):
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] not in (1, 3) or x.dtype != np.uint8:
        raise ValueError("PNM output needs an H x W x 1 or H x W x 3 uint8 array")
    h, w, c = x.shape
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + x.tobytes()


def read_pnm(path):
    with open(path, "rb") as f:
        return decode_pnm(f.read())


def write_pnm(path, x):
    with open(path, "wb") as f:
        f.write(encode_pnm(x))
