import hashlib
import json
import os
import re
import tempfile
from contextlib import contextmanager
from typing import Iterator

import pandas as pd
from slugify import slugify

from src.errors import ValidationException

CHECKSUM_CHUNK = 1 << 20


def pretty_duration(seconds: float) -> str:
    minutes, seconds = divmod(seconds, 60)
    minutes = int(minutes)
    seconds = int(seconds)
    pretty_time = ""
    if minutes > 0:
        minutes_text = minutes > 1 and "minutes" or "minute"
        pretty_time += f"{minutes:.0f} {minutes_text}"
    if seconds > 0:
        if minutes > 0:
            pretty_time += " and "
        seconds_text = int(seconds) > 1 and "seconds" or "second"
        pretty_time += f"{seconds:.0f} {seconds_text}"
    return pretty_time or "less than a second"


PAIR_PATTERN = re.compile(r"^\s*([^:,]+):([^:,]+)\s*,\s*([^:,]+):([^:,]+)\s*$")
def parse_pair(text: str) -> tuple[str, str]:
    """
    Splits a ``A1:I1,A2:I2`` pair of sector references.
    :param text:
    :return: the two ``AREA:ITEM`` references
    """
    match = PAIR_PATTERN.match(text)
    if not match:
        raise ValidationException(f"shock pair {text!r} must look like AREA:ITEM,AREA:ITEM")
    first_area, first_item, second_area, second_item = (part.strip() for part in match.groups())
    return f"{first_area}:{first_item}", f"{second_area}:{second_item}"


def safe_name(name: str) -> str:
    """
    Directory name for a scenario: case and underscores are kept, other unsafe characters are replaced.
    """
    return slugify(name, lowercase=False, separator="_") or "unnamed"


def file_checksum(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for chunk in iter(lambda: file.read(CHECKSUM_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


def directory_checksums(path: str) -> dict[str, str]:
    """
    Checksums of every CSV file below ``path``, keyed by relative path with forward slashes.
    """
    checksums = {}
    for root, directories, files in os.walk(path):
        directories.sort()
        for name in sorted(files):
            if not name.endswith(".csv"):
                continue
            full_path = os.path.join(root, name)
            relative = os.path.relpath(full_path, path).replace(os.sep, "/")
            checksums[relative] = file_checksum(full_path)
    return checksums


def stable_hash(content: dict) -> str:
    text = json.dumps(content, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@contextmanager
def atomic_write(path: str, mode: str = "w") -> Iterator:
    """
    Opens a temporary file next to ``path`` and moves it into place when the block finishes without error.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temporary = tempfile.mkstemp(dir=directory, prefix=".", suffix=".tmp")
    try:
        encoding = None if "b" in mode else "utf-8"
        newline = None if "b" in mode else ""
        with os.fdopen(handle, mode, encoding=encoding, newline=newline) as file:
            yield file
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.remove(temporary)
        raise


def write_frame(frame: pd.DataFrame, path: str, float_format: str = "%.17g") -> str:
    with atomic_write(path) as file:
        frame.to_csv(file, index=False, float_format=float_format, lineterminator="\n")
    return path


def write_json(content: dict, path: str) -> str:
    with atomic_write(path) as file:
        json.dump(content, file, indent=2, sort_keys=True, default=str)
        file.write("\n")
    return path


