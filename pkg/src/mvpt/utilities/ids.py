import re
import uuid
from datetime import datetime, timezone

from pydantic import ConstrainedStr

STAMP_FORMAT = "%Y%m%dT%H%M%SZ"


class RunID(ConstrainedStr):
    """`run_<UTC start time>_<8 hex>`; sorts by start time."""

    regex = re.compile(r"^run_(\d{8}T\d{6}Z)_[0-9a-f]{8}$")

    @classmethod
    def new(cls, now: datetime | None = None) -> "RunID":
        stamp = (now or datetime.now(timezone.utc)).strftime(STAMP_FORMAT)
        return cls(f"run_{stamp}_{uuid.uuid4().hex[:8]}")

    @classmethod
    def started_at(cls, run_id: str) -> datetime:
        match = cls.regex.match(run_id)
        if match is None:
            raise ValueError(f"not a run id: {run_id!r}")
        return datetime.strptime(match.group(1), STAMP_FORMAT).replace(
            tzinfo=timezone.utc
        )
