"""Rate literals and address formatting.

All rates are stored as integer bytes per second.
"""

import re
from fractions import Fraction

# bytes/second per unit
RATE_UNITS = {
    "B/s": 1,
    "KB/s": 10**3,
    "MB/s": 10**6,
    "GB/s": 10**9,
    "bps": Fraction(1, 8),
    "Kbps": 125,
    "Mbps": 125_000,
    "Gbps": 125_000_000,
}

RATE_RE = re.compile(r"(\d+(?:\.\d+)?)\s*(GB/s|MB/s|KB/s|B/s|Gbps|Mbps|Kbps|bps)")

MAX_RATE = 2**64 - 1


class RateError(ValueError):
    pass


def parse_rate(text):
    """Parse ``"50MB/s"``, ``"100Mbps"`` or a bare integer into bytes/second."""
    if isinstance(text, int):
        value = text
    else:
        text = str(text).strip()
        if text.isdigit():
            value = int(text)
        else:
            m = RATE_RE.fullmatch(text)
            if m is None:
                raise RateError(f"malformed rate literal {text!r}")
            value = Fraction(m.group(1)) * RATE_UNITS[m.group(2)]
            if value.denominator != 1:
                raise RateError(f"rate {text!r} is not a whole number of bytes/s")
            value = int(value)
    if value < 0 or value > MAX_RATE:
        raise RateError(f"rate {text!r} out of range")
    return value


def format_rate(value):
    """Render a bytes/second integer using the largest exact decimal unit."""
    for unit in ("GB/s", "MB/s", "KB/s"):
        scale = RATE_UNITS[unit]
        if value and value % scale == 0:
            return f"{value // scale}{unit}"
    return str(value)


def parse_mac(text):
    parts = text.split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise ValueError(f"malformed MAC address {text!r}")
    return int("".join(parts), 16)


def format_mac(value):
    raw = f"{value:012x}"
    return ":".join(raw[i:i + 2] for i in range(0, 12, 2))


def parse_ip(text):
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"malformed IPv4 address {text!r}")
    value = 0
    for p in parts:
        octet = int(p)
        if not 0 <= octet <= 255:
            raise ValueError(f"malformed IPv4 address {text!r}")
        value = (value << 8) | octet
    return value


def format_ip(value):
    return ".".join(str((value >> s) & 0xFF) for s in (24, 16, 8, 0))
