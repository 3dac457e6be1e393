import itertools
import re
from pathlib import Path
from typing import Iterable, TypeVar

T = TypeVar("T")


def batched(iterable: Iterable[T], size: int) -> Iterable[tuple[T, ...]]:
    if size < 1:
        raise ValueError(f"batch size must be positive, got {size}")
    it = iter(iterable)
    while True:
        batch = tuple(itertools.islice(it, size))
        if not batch:
            break
        yield batch


def numbered_files(directory: Path, pattern: re.Pattern) -> dict[int, Path]:
    """
    Map the integer captured by `pattern`'s first group to each matching file
    directly under `directory`. A missing directory yields an empty mapping.
    """
    if not directory.is_dir():
        return {}
    found = {}
    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        if match := pattern.search(path.name):
            found[int(match.group(1))] = path
    return found
