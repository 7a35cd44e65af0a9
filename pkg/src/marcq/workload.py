"""Workload description for multiserver-job queues.

A workload is a server count ``k`` plus a list of job classes.  Each class
has an integer server need, an arrival probability and a phase-type
duration given by ``(init, subgen)``; the exit-rate vector is always derived
from the row sums of ``subgen``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

TOL = 1e-12


class SpecError(ValueError):
    """Raised when a workload file is malformed or violates an invariant."""


@dataclass(frozen=True, eq=False)
class PhaseType:
    init: np.ndarray
    subgen: np.ndarray

    def __post_init__(self):
        init = np.array(self.init, dtype=float).reshape(-1)
        subgen = np.array(self.subgen, dtype=float)
        if subgen.ndim != 2 or subgen.shape[0] != subgen.shape[1]:
            raise SpecError("subgen must be a square matrix")
        if subgen.shape[0] != init.size or init.size == 0:
            raise SpecError("init and subgen dimensions disagree")
        if np.any(init < 0) or abs(init.sum() - 1.0) > TOL:
            raise SpecError("init must be a probability vector (entries >= 0, sum 1)")
        off = subgen - np.diag(np.diag(subgen))
        if np.any(off < 0):
            raise SpecError("subgen off-diagonal entries must be >= 0")
        if np.any(np.diag(subgen) > 0):
            raise SpecError("subgen diagonal entries must be <= 0")
        exit_ = -subgen.sum(axis=1)
        if np.any(exit_ < -TOL):
            raise SpecError("subgen row sums must be <= 0 (negative exit rate)")
        exit_ = np.where(np.abs(exit_) <= TOL, 0.0, exit_)
        if not np.any(exit_ > 0):
            raise SpecError("duration is improper: no phase has a positive exit rate")
        init.setflags(write=False)
        subgen.setflags(write=False)
        exit_.setflags(write=False)
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "subgen", subgen)
        object.__setattr__(self, "_exit", exit_)
        mean = self.mean
        if not np.isfinite(mean) or mean <= 0:
            raise SpecError("duration has no finite positive mean")

    @property
    def exit(self) -> np.ndarray:
        return self._exit

    @property
    def n_phases(self) -> int:
        return self.init.size

    @property
    def mean(self) -> float:
        """Mean duration, ``init @ inv(-subgen) @ 1``."""
        try:
            x = np.linalg.solve(-self.subgen, np.ones(self.n_phases))
        except np.linalg.LinAlgError:
            return float("inf")
        return float(self.init @ x)

    @classmethod
    def exponential(cls, rate: float) -> "PhaseType":
        if not rate > 0:
            raise SpecError(f"exponential rate must be positive, got {rate!r}")
        return cls(np.array([1.0]), np.array([[-float(rate)]]))

    def is_exponential(self) -> bool:
        return self.n_phases == 1

    def to_dict(self) -> dict:
        if self.is_exponential():
            return {"type": "exp", "rate": float(-self.subgen[0, 0])}
        return {"type": "phase", "init": self.init.tolist(), "subgen": self.subgen.tolist()}

    def __eq__(self, other):
        if not isinstance(other, PhaseType):
            return NotImplemented
        return (
            self.init.shape == other.init.shape
            and np.array_equal(self.init, other.init)
            and np.array_equal(self.subgen, other.subgen)
        )

    def __hash__(self):
        return hash((self.init.tobytes(), self.subgen.tobytes()))


@dataclass(frozen=True)
class JobClass:
    need: int
    prob: float
    duration: PhaseType

    def to_dict(self) -> dict:
        return {"need": int(self.need), "prob": float(self.prob), "duration": self.duration.to_dict()}


class JobState(NamedTuple):
    """A job as seen by the service process: its class and current phase."""

    class_id: int
    phase: int


@dataclass(frozen=True)
class WorkloadSpec:
    k: int
    classes: tuple

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        validate(self)

    @property
    def probs(self) -> np.ndarray:
        return np.array([c.prob for c in self.classes])

    @property
    def needs(self) -> np.ndarray:
        return np.array([c.need for c in self.classes], dtype=np.int64)

    @property
    def max_phases(self) -> int:
        return max(c.duration.n_phases for c in self.classes)

    def fresh_states(self):
        """Job states a new arrival can start in, with their probabilities."""
        out = []
        for ci, c in enumerate(self.classes):
            for ph, p0 in enumerate(c.duration.init):
                if p0 > 0:
                    out.append((JobState(ci, ph), c.prob * p0))
        return out

    def to_dict(self) -> dict:
        return {"k": int(self.k), "classes": [c.to_dict() for c in self.classes]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def validate(spec: WorkloadSpec) -> None:
    if not isinstance(spec.k, (int, np.integer)) or isinstance(spec.k, bool) or spec.k < 1:
        raise SpecError(f"k must be a positive integer, got {spec.k!r}")
    if not spec.classes:
        raise SpecError("workload needs at least one job class")
    for i, c in enumerate(spec.classes):
        if not isinstance(c.need, (int, np.integer)) or isinstance(c.need, bool):
            raise SpecError(f"class {i}: server need must be an integer")
        if c.need < 1:
            raise SpecError(f"class {i}: server need must be >= 1")
        if c.need > spec.k:
            raise SpecError(f"class {i}: server need {c.need} exceeds k={spec.k}")
        if not c.prob > 0:
            raise SpecError(f"class {i}: probability must be > 0")
    total = sum(c.prob for c in spec.classes)
    if abs(total - 1.0) > TOL:
        raise SpecError(f"probabilities sum != 1 (sum is {total!r})")


def exponential_class(need: int, prob: float, rate: float) -> JobClass:
    return JobClass(int(need), float(prob), PhaseType.exponential(rate))


def _parse_duration(d, where):
    if not isinstance(d, dict) or "type" not in d:
        raise SpecError(f"{where}: duration must be an object with a 'type' field")
    if d["type"] == "exp":
        if "rate" not in d:
            raise SpecError(f"{where}: exponential duration needs 'rate'")
        return PhaseType.exponential(_number(d["rate"], where + ".rate"))
    if d["type"] == "phase":
        if "exit" in d:
            raise SpecError(f"{where}: 'exit' is derived and must not be supplied")
        try:
            return PhaseType(np.array(d["init"], dtype=float), np.array(d["subgen"], dtype=float))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SpecError):
                raise SpecError(f"{where}: {e}") from None
            raise SpecError(f"{where}: bad phase-type duration ({e})") from None
    raise SpecError(f"{where}: unknown duration type {d['type']!r}")


def _number(x, where):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise SpecError(f"{where}: expected a number, got {x!r}")
    return float(x)


def spec_from_dict(doc) -> WorkloadSpec:
    if not isinstance(doc, dict):
        raise SpecError("workload document must be a JSON object")
    if "k" not in doc or "classes" not in doc:
        raise SpecError("workload document needs 'k' and 'classes'")
    k = doc["k"]
    if isinstance(k, bool) or not isinstance(k, int):
        raise SpecError(f"k must be an integer, got {k!r}")
    if not isinstance(doc["classes"], list):
        raise SpecError("'classes' must be a list")
    classes = []
    for i, c in enumerate(doc["classes"]):
        where = f"classes[{i}]"
        if not isinstance(c, dict):
            raise SpecError(f"{where}: must be an object")
        need = c.get("need")
        if isinstance(need, bool) or not isinstance(need, int):
            raise SpecError(f"{where}: need must be an integer")
        prob = _number(c.get("prob"), where + ".prob")
        classes.append(JobClass(need, prob, _parse_duration(c.get("duration"), where + ".duration")))
    return WorkloadSpec(k, tuple(classes))


def load_spec(path) -> WorkloadSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SpecError(f"{path}: not valid JSON ({e})") from None
    return spec_from_dict(doc)


def save_spec(spec: WorkloadSpec, path) -> None:
    Path(path).write_text(spec.to_json() + "\n")
