"""Structured pass/fail records with residuals, tolerances and provenance."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field


def verdict_from(residuals: dict, tolerances: dict) -> str:
    """Three-valued verdict; residuals within 3x of tolerance are inconclusive,
    so quadrature noise cannot masquerade as rigidity."""
    worst = max(residuals[k] / tolerances[k] for k in tolerances)
    if worst < 1.0:
        return "pass"
    if worst < 3.0:
        return "inconclusive"
    return "fail"


def inputs_digest(description: dict) -> str:
    blob = json.dumps(description, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class CheckReport:
    check: str
    inputs: dict
    residuals: dict
    tolerances: dict
    verdict: str
    numbers: dict = field(default_factory=dict)
    notes: tuple = ()

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "inputs": inputs_digest(self.inputs),
            "residuals": {k: float(v) for k, v in sorted(self.residuals.items())},
            "tolerances": {k: float(v) for k, v in sorted(self.tolerances.items())},
            "verdict": self.verdict,
            "numbers": {k: float(v) for k, v in sorted(self.numbers.items())},
            "notes": list(self.notes),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def make_report(check: str, inputs: dict, residuals: dict, tolerances: dict,
                numbers=None, notes=()) -> CheckReport:
    return CheckReport(check=check, inputs=inputs, residuals=residuals,
                       tolerances=tolerances,
                       verdict=verdict_from(residuals, tolerances),
                       numbers=numbers or {}, notes=tuple(notes))
