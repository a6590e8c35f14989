from __future__ import annotations

import ipaddress

from typing import Optional

UINT32_MAX = 0xFFFFFFFF


def ceil_log2(x: int) -> int:
    """Return ceil(log2(x)) for a positive integer, computed exactly."""
    if x < 1:
        raise ValueError(f"ceil_log2 of non-positive value: {x}")
    return (x - 1).bit_length()


def parse_ip(text: str) -> int:
    """Convert a host id to a 32-bit integer.

    Accepts dotted-quad IPv4 (`10.0.0.1`) or a decimal 32-bit integer
    (`167772161`). Surrounding whitespace is ignored.

    Raises:
        ValueError: if the text is neither form or the value does not fit
            into 32 bits.
    """
    text = text.strip()
    if text.isdigit():
        value = int(text)
        if value > UINT32_MAX:
            raise ValueError(f"host id does not fit 32 bits: {text!r}")
        return value
    try:
        return int(ipaddress.IPv4Address(text))
    except ipaddress.AddressValueError as e:
        raise ValueError(f"not an IPv4 address: {text!r}") from e


def format_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value & UINT32_MAX))


def parse_slices(text: str) -> Optional[frozenset[int]]:
    """Parse an activity pattern.

    Patterns:
        all: Every slice, returned as None.
        a-b: Inclusive range of slice indices.
        i,j,...: Comma separated slice indices; items may be ranges.
    """
    text = text.strip()
    if text in ("", "all", "*"):
        return None

    slices: set[int] = set()
    for item in text.split(','):
        item = item.strip()
        if '-' in item:
            first, last = item.split('-', 1)
            beg, end = int(first), int(last)
            if beg > end:
                raise ValueError(f"empty slice range: {item!r}")
            slices.update(range(beg, end + 1))
        else:
            slices.add(int(item))

    if any(s < 0 for s in slices):
        raise ValueError(f"negative slice index in {text!r}")
    return frozenset(slices)
