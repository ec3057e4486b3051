"""Durations in config files and flags: "90s", "2m", "1h30m", "2 days, 4:13:02" or a number of seconds."""
from datetime import timedelta
from typing import Union

import pytimeparse


_UNITS = (("d", 86400), ("h", 3600), ("m", 60))


def parse_timedelta(value: Union[str, int, float]) -> timedelta:
    if isinstance(value, (int, float)):
        seconds = value
    else:
        seconds = pytimeparse.parse(value)
        if seconds is None:
            raise ValueError(f"Could not parse {value!r} as a duration")
    if seconds < 0:
        raise ValueError(f"durations must be non-negative, got {value!r}")
    return timedelta(seconds=seconds)


def encode_timedelta(td: timedelta) -> str:
    """Largest units first with fractional seconds last, e.g. "1d2h0.5s". parse_timedelta reads it back exactly."""
    if td < timedelta(0):
        raise ValueError(f"durations must be non-negative, got {td}")
    whole, micros = divmod(td // timedelta(microseconds=1), 1_000_000)

    out = ""
    for suffix, size in _UNITS:
        count, whole = divmod(whole, size)
        if count:
            out += f"{count}{suffix}"
    if micros:
        out += f"{whole + micros / 1e6}s"
    elif whole or not out:
        out += f"{whole}s"
    return out
