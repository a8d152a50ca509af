"""
Binary container shared by checkpoints (magic ``IBAC``) and datasets (``IBDS``).

Layout, all little-endian:

    magic         4 bytes
    version       u16
    header_len    u32
    header        UTF-8 JSON, sorted keys, header_len bytes
    payload_len   u64
    payload       payload_len bytes
    crc32         u32 of the payload

The version is checked right after the magic, before anything else is parsed.
"""
import json
import struct
import zlib
from pathlib import Path
from typing import Tuple

from ibac.errors import ChecksumError, FormatError, TruncatedPayloadError, VersionError


def write_container(path, magic: bytes, version: int, header: dict, payload: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join([
        magic,
        struct.pack("<H", version),
        struct.pack("<I", len(header_bytes)),
        header_bytes,
        struct.pack("<Q", len(payload)),
        payload,
        struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
    ])
    path.write_bytes(blob)
    return path


def read_container(path, magic: bytes, supported_version: int) -> Tuple[int, dict, bytes]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc.strerror})")

    if blob[:4] != magic:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {magic!r}")
    pos = 4
    if len(blob) < pos + 6:
        raise TruncatedPayloadError(f"{path}: file ends inside the preamble")
    (version,) = struct.unpack_from("<H", blob, pos)
    if version != supported_version:
        raise VersionError(f"{path}: format version {version} is not supported (this build reads {supported_version})")
    (header_len,) = struct.unpack_from("<I", blob, pos + 2)
    pos += 6
    if len(blob) < pos + header_len + 8:
        raise TruncatedPayloadError(f"{path}: file ends inside the header")
    try:
        header = json.loads(blob[pos:pos + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})")
    pos += header_len
    (payload_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    if len(blob) < pos + payload_len + 4:
        raise TruncatedPayloadError(f"{path}: payload truncated ({len(blob) - pos} bytes left, "
                                    f"{payload_len + 4} expected)")
    payload = blob[pos:pos + payload_len]
    (crc,) = struct.unpack_from("<I", blob, pos + payload_len)
    if crc != zlib.crc32(payload) & 0xFFFFFFFF:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    if len(blob) != pos + payload_len + 4:
        raise FormatError(f"{path}: {len(blob) - pos - payload_len - 4} trailing bytes after checksum")
    return version, header, payload
