"""Run records and their line-delimited JSON store."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

OUTCOMES = ("steps_to_target", "excess_risk", "diverged", "not-reached")


@dataclass
class RunRecord:
    run_id: str
    module: str  # sgd_sim | trainer | risk_oracle
    spec_hash: str
    batch_size: int
    lr: float
    seed: int
    outcome: str
    value: float | None = None
    n_millions: float | None = None
    data_size: int | None = None
    tau: float | None = None
    beta2: float | None = None
    target: float | None = None
    wall_time: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {self.outcome!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> RunRecord:
        return cls(**json.loads(line))

    def content(self) -> dict:
        """Everything except the wall time."""
        d = asdict(self)
        d.pop("wall_time")
        return d


def stable_hash(obj, length=16) -> str:
    """Digest of a JSON-serialisable object, independent of dict ordering."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.blake2b(blob.encode(), digest_size=16).hexdigest()[:length]


def derive_seed(base_seed, coords: dict, replica: int = 0) -> int:
    """63-bit seed from the sweep seed and grid coordinates only."""
    digest = hashlib.blake2b(
        json.dumps([base_seed, coords, replica], sort_keys=True, default=str).encode(),
        digest_size=8,
    ).digest()
    return int.from_bytes(digest, "big") >> 1


def append_records(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            fh.flush()


def read_records(path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                out.append(RunRecord.from_json(line))
            except json.JSONDecodeError:
                # a torn final line from an interrupted write; the run reruns
                continue
    return out


CSV_FIELDS = [f.name for f in fields(RunRecord)]
_INT_FIELDS = {"batch_size", "seed", "data_size"}
_FLOAT_FIELDS = {"lr", "value", "n_millions", "tau", "beta2", "target", "wall_time"}


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for rec in records:
            row = asdict(rec)
            row["params"] = json.dumps(row["params"], sort_keys=True)
            writer.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v))
                             for k, v in row.items()})


def read_records_csv(path) -> list[RunRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                if k == "params":
                    kw[k] = json.loads(v) if v else {}
                elif v == "":
                    kw[k] = None
                elif k in _INT_FIELDS:
                    kw[k] = int(v)
                elif k in _FLOAT_FIELDS:
                    kw[k] = float(v)
                else:
                    kw[k] = v
            out.append(RunRecord(**kw))
    return out


