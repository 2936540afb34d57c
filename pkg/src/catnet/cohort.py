"""Patient records, vocabularies, temporal intervals, and dataset handling.

A cohort is a JSONL file (one patient per line) plus a ``vocab.json`` sidecar
giving the per-event-type code counts.  Records are treated as immutable after
loading and are safe to share across threads for reading.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

EVENT_TYPES = ("med", "diag", "lab", "proc")
TASKS = EVENT_TYPES + ("mortality",)
MODES = ("task-aware", "task-unaware")


@dataclass
class VocabSpec:
    """Code-space sizes per event type, with optional display names."""

    med: int
    diag: int
    lab: int
    proc: int
    names: dict = field(default_factory=dict)

    def __post_init__(self):
        for etype in EVENT_TYPES:
            if self.size(etype) < 0:
                raise ValueError(f"vocab size for {etype} must be non-negative")
        if self.total() < 1:
            raise ValueError("vocabulary must contain at least one code overall")

    def size(self, event_type: str) -> int:
        return int(getattr(self, event_type))

    def total(self) -> int:
        return sum(self.size(t) for t in EVENT_TYPES)

    def code_name(self, event_type: str, index: int) -> str:
        named = self.names.get(event_type)
        if named and 0 <= index < len(named) and named[index]:
            return named[index]
        return f"{event_type}:{index}"

    def to_dict(self) -> dict:
        d = {t: self.size(t) for t in EVENT_TYPES}
        if self.names:
            d["names"] = self.names
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VocabSpec":
        return cls(med=d["med"], diag=d["diag"], lab=d["lab"], proc=d["proc"],
                   names=d.get("names", {}))


@dataclass
class Visit:
    """One timestamped encounter holding sorted, duplicate-free code lists."""

    time_days: float
    codes: dict

    def validate(self, vocab: VocabSpec, owner: str = "?"):
        if not (np.isfinite(self.time_days) and self.time_days >= 0):
            raise ValueError(f"patient {owner}: visit time must be finite and >= 0")
        for etype in EVENT_TYPES:
            lst = self.codes.get(etype, [])
            if any(int(c) != c for c in lst):
                raise ValueError(f"patient {owner}: non-integer {etype} code")
            if list(lst) != sorted(set(int(c) for c in lst)):
                raise ValueError(
                    f"patient {owner}: {etype} codes must be sorted and duplicate-free")
            for c in lst:
                if not 0 <= c < vocab.size(etype):
                    raise ValueError(
                        f"patient {owner}: {etype} code {c} outside vocab of size "
                        f"{vocab.size(etype)}")

    def codes_for(self, event_type: str):
        return self.codes.get(event_type, [])


@dataclass
class PatientRecord:
    """Demographics plus at least two visits in strictly increasing time."""

    patient_id: str
    age_years: float
    sex: str
    visits: list
    mortality: bool

    def validate(self, vocab: VocabSpec):
        pid = self.patient_id
        if not 0.0 <= self.age_years <= 120.0:
            raise ValueError(f"patient {pid}: age_years {self.age_years} outside [0, 120]")
        if self.sex not in ("F", "M"):
            raise ValueError(f"patient {pid}: sex must be 'F' or 'M'")
        if len(self.visits) < 2:
            raise ValueError(f"patient {pid}: records need at least two visits")
        times = [v.time_days for v in self.visits]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"patient {pid}: visit times must be strictly increasing")
        for v in self.visits:
            v.validate(vocab, owner=pid)

    def demographics_vector(self) -> np.ndarray:
        """Raw demographic features: (age/100, female one-hot, male one-hot)."""
        return np.array([self.age_years / 100.0,
                         1.0 if self.sex == "F" else 0.0,
                         1.0 if self.sex == "M" else 0.0])

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "demographics": {"age_years": self.age_years, "sex": self.sex},
            "mortality": int(self.mortality),
            "visits": [
                {"time_days": v.time_days,
                 "codes": {t: list(v.codes_for(t)) for t in EVENT_TYPES}}
                for v in self.visits
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatientRecord":
        demo = d["demographics"]
        visits = [Visit(time_days=float(v["time_days"]),
                        codes={t: [int(c) for c in v["codes"].get(t, [])]
                               for t in EVENT_TYPES})
                  for v in d["visits"]]
        return cls(patient_id=str(d["patient_id"]), age_years=float(demo["age_years"]),
                   sex=str(demo["sex"]), visits=visits, mortality=bool(d["mortality"]))


@dataclass
class IntervalView:
    """Per-visit gaps: since the previous visit and since the first visit."""

    delta_prev_days: np.ndarray
    delta_global_days: np.ndarray


@dataclass
class TaskSpec:
    """Prediction target and attention mode.

    Code targets read the label from the final visit's multi-hot of the target
    type (inputs are all earlier visits); the mortality target is the record's
    flag (inputs are all visits).
    """

    target: str
    mode: str = "task-aware"

    def __post_init__(self):
        if self.target not in TASKS:
            raise ValueError(f"unknown task target {self.target!r}; expected one of {TASKS}")
        if self.mode not in MODES:
            raise ValueError(f"unknown attention mode {self.mode!r}; expected one of {MODES}")
        if self.target == "mortality" and self.mode == "task-aware":
            raise ValueError("mortality prediction has no primary event type; "
                             "mode must be task-unaware")

    @property
    def is_code_task(self) -> bool:
        return self.target != "mortality"

    def target_dim(self, vocab: VocabSpec) -> int:
        return vocab.size(self.target) if self.is_code_task else 1


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def derive_intervals(record: PatientRecord) -> IntervalView:
    """Backward-looking gaps: delta_prev[0] = 0, delta_global[i] = t_i - t_1."""
    times = np.array([v.time_days for v in record.visits], dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise ValueError(f"patient {record.patient_id}: visit times must be strictly increasing")
    delta_prev = np.diff(times, prepend=times[0])
    delta_global = times - times[0]
    return IntervalView(delta_prev_days=delta_prev, delta_global_days=delta_global)


def extract_task_instances(record: PatientRecord, task: TaskSpec, vocab: VocabSpec):
    """Input visits and the target label vector for one record.

    Code tasks use all but the final visit as input and the final visit's
    multi-hot of the target type as the label; mortality uses every visit and
    the record's flag.
    """
    if task.is_code_task:
        if len(record.visits) < 2:
            raise ValueError(f"patient {record.patient_id}: code tasks need >= 2 visits")
        target = np.zeros(vocab.size(task.target), dtype=np.float64)
        target[list(record.visits[-1].codes_for(task.target))] = 1.0
        return record.visits[:-1], target
    return record.visits, np.array([1.0 if record.mortality else 0.0])


def split_dataset(records, seed: int):
    """Deterministic shuffle and 8:1:1 split with floor-sized val/test."""
    n = len(records)
    if n < 10:
        raise ValueError(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    k = n // 10
    shuffled = [records[i] for i in order]
    return shuffled[: n - 2 * k], shuffled[n - 2 * k: n - k], shuffled[n - k:]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_dataset(records, vocab: VocabSpec, data_path: str, vocab_path: str = None):
    """Write the cohort JSONL and its vocab.json sidecar."""
    if vocab_path is None:
        vocab_path = os.path.join(os.path.dirname(data_path), "vocab.json")
    with open(data_path, "w") as fh:
        for rec in records:
            fh.write(_dumps(rec.to_dict()))
            fh.write("\n")
    with open(vocab_path, "w") as fh:
        fh.write(_dumps(vocab.to_dict()))
        fh.write("\n")


def load_vocab(vocab_path: str) -> VocabSpec:
    with open(vocab_path) as fh:
        return VocabSpec.from_dict(json.load(fh))


def load_dataset(data_path: str, vocab_path: str = None):
    """Read a cohort, validating every record; errors carry line numbers."""
    if vocab_path is None:
        vocab_path = os.path.join(os.path.dirname(data_path), "vocab.json")
    vocab = load_vocab(vocab_path)
    records = []
    with open(data_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = PatientRecord.from_dict(json.loads(line))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{data_path}:{lineno}: malformed record: {exc}") from exc
            rec.validate(vocab)
            records.append(rec)
    return records, vocab
