"""Result tables with provenance; no timestamps, so reruns are byte-identical."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np


def _plain(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


@dataclass
class ResultTable:
    name: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    predicates: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, **row):
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"row is missing column(s) {sorted(missing)}")
        self.rows.append({k: _plain(row[k]) for k in self.columns})

    @property
    def passed(self) -> bool:
        return all(self.predicates.values())

    def column(self, name) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "columns": self.columns,
                "rows": self.rows,
                "predicates": {k: bool(v) for k, v in self.predicates.items()},
                "passed": self.passed,
                "provenance": self.provenance,
            },
            sort_keys=True,
            indent=2,
        )

    def write(self, out_dir) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for ext, text in (("csv", self.to_csv()), ("json", self.to_json())):
            path = os.path.join(out_dir, f"{self.name}.{ext}")
            with open(path, "w") as fh:
                fh.write(text)
            paths.append(path)
        return paths

    def summary(self) -> str:
        lines = [f"{self.name}: {len(self.rows)} rows"]
        for k, v in self.predicates.items():
            lines.append(f"  [{'PASS' if v else 'FAIL'}] {k}")
        return "\n".join(lines)
