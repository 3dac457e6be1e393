import logging
from functools import lru_cache

from rich.console import Console
from rich.logging import RichHandler

import mvpt


@lru_cache()
def get_logger(name: str | None = None) -> logging.Logger:
    """Loggers live under the `mvpt` namespace and share one rich handler."""
    parent = logging.getLogger("mvpt")
    if not parent.handlers:
        handler = RichHandler(
            console=Console(stderr=True),
            rich_tracebacks=True,
            markup=False,
            show_path=False,
        )
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        parent.addHandler(handler)
        parent.setLevel(mvpt.settings.log_level)
        parent.propagate = False
    if name and name.startswith("mvpt."):
        name = name[len("mvpt.") :]
    return parent.getChild(name) if name else parent


def set_log_level(level: str) -> None:
    get_logger().setLevel(level)


class LoggerMixin:
    @property
    def logger(self) -> logging.Logger:
        return get_logger(type(self).__name__)
