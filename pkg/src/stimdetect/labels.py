"""The closed label set shared by every stage."""

from __future__ import annotations

from enum import Enum


class ChunkLabel(str, Enum):
    NO_CLASS = "no-class"
    ARM_FLAPPING = "arm-flapping"
    HEADBANGING = "headbanging"
    SPINNING = "spinning"

    @classmethod
    def parse(cls, value: "str | ChunkLabel") -> "ChunkLabel":
        if isinstance(value, ChunkLabel):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "").replace(" ", "")
        try:
            return _ALIASES[key]
        except KeyError:
            raise ValueError(f"unknown label {value!r}") from None

    @property
    def is_action(self) -> bool:
        return self is not ChunkLabel.NO_CLASS

    @property
    def action_index(self) -> int:
        """Position in the identifier's softmax output; ``no-class`` has none."""
        return ACTION_LABELS.index(self)

    def __str__(self) -> str:
        return self.value


# Order of the identifier's three softmax outputs.
ACTION_LABELS: tuple[ChunkLabel, ...] = (
    ChunkLabel.ARM_FLAPPING,
    ChunkLabel.HEADBANGING,
    ChunkLabel.SPINNING,
)

# Row/column order of four-way confusion matrices.
ALL_LABELS: tuple[ChunkLabel, ...] = (ChunkLabel.NO_CLASS, *ACTION_LABELS)

_ALIASES = {
    "noclass": ChunkLabel.NO_CLASS,
    "armflapping": ChunkLabel.ARM_FLAPPING,
    "headbanging": ChunkLabel.HEADBANGING,
    "spinning": ChunkLabel.SPINNING,
}
