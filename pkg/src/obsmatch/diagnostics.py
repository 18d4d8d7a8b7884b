"""Non-fatal findings collected while processing data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

logger = logging.getLogger("obsmatch")


@dataclass(frozen=True)
class Diagnostic:
    level: str
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}[{self.code}]: {self.message}"


@dataclass
class Diagnostics:
    """An append-only channel of warnings and errors; also mirrored to logging."""

    items: list[Diagnostic] = field(default_factory=list)

    def warn(self, code: str, message: str) -> None:
        self.items.append(Diagnostic("warning", code, message))
        logger.warning("%s: %s", code, message)

    def error(self, code: str, message: str) -> None:
        self.items.append(Diagnostic("error", code, message))
        logger.error("%s: %s", code, message)

    def info(self, code: str, message: str) -> None:
        self.items.append(Diagnostic("info", code, message))
        logger.info("%s: %s", code, message)

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.items if d.level == "error"]

    @property
    def warnings(self) -> list[Diagnostic]:
        return [d for d in self.items if d.level == "warning"]

    def codes(self) -> list[str]:
        return [d.code for d in self.items]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)
