import json
from functools import lru_cache
from typing import Any

import xxhash


@lru_cache(maxsize=2048)
def hash_text(*text: str | bytes) -> str:
    bs = [t.encode() if not isinstance(t, bytes) else t for t in text]
    return xxhash.xxh3_128_hexdigest(b"".join(bs))


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def hash_json(obj: Any) -> str:
    return hash_text(canonical_json(obj))


class StreamHasher:
    """Incremental xxh3-128 over many byte chunks (dataset hashes)."""

    def __init__(self):
        self._h = xxhash.xxh3_128()

    def update(self, *chunks: str | bytes) -> "StreamHasher":
        for c in chunks:
            self._h.update(c.encode() if isinstance(c, str) else c)
        return self

    def hexdigest(self) -> str:
        return self._h.hexdigest()
