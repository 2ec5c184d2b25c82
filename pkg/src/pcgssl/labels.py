"""Label vocabularies and task definitions.

Class order is fixed: index 0 is the clinically severe class (Present for
murmur, Abnormal for outcome); ties in argmax resolve toward it.
"""
from dataclasses import dataclass
from enum import Enum


class Location(str, Enum):
    AV = "AV"
    PV = "PV"
    TV = "TV"
    MV = "MV"
    PHC = "Phc"
    OTHER = "Other"


class Murmur(str, Enum):
    PRESENT = "Present"
    UNKNOWN = "Unknown"
    ABSENT = "Absent"


class Outcome(str, Enum):
    ABNORMAL = "Abnormal"
    NORMAL = "Normal"


@dataclass(frozen=True)
class TaskSpec:
    name: str
    classes: tuple
    weights: tuple

    @property
    def n_classes(self):
        return len(self.classes)

    def index(self, label):
        return self.classes.index(self.classes[0].__class__(label))

    def label(self, index):
        return self.classes[index]


MURMUR = TaskSpec("murmur", (Murmur.PRESENT, Murmur.UNKNOWN, Murmur.ABSENT), (5.0, 3.0, 1.0))
OUTCOME = TaskSpec("outcome", (Outcome.ABNORMAL, Outcome.NORMAL), (5.0, 1.0))
TASKS = {"murmur": MURMUR, "outcome": OUTCOME}
