"""Severity regrouping and cost-delta estimation for recovered diagnoses.

A recovered disease is mapped to its CC/MCC level through the ICD table;
if any recovered level is more severe than the record's current tier, the
record moves to that tier within the same ADRG and the published average
cost of the new group is used to estimate the reimbursement difference.

All currency is integer minor units, so totals are exact. Full grouper
logic (ADRG assignment, principal-diagnosis CC exclusion lists) is out of
scope and flagged in report metadata.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .core import (
    CcLevel,
    DrgAssignment,
    IcdIndex,
    MedicalRecord,
    Tier,
    _cost_to_minor,
    _minor_to_major,
    normalize_disease_name,
    tier_for_cc_level,
)
from .errors import MissingGroupRow, ParseError
from .relation_model import RELATIONS

_SEVERITY_RANK = {CcLevel.MCC: 2, CcLevel.CC: 1, CcLevel.NONE: 0}


class DrgGroupTable:
    """(adrg, tier) -> average cost, with cost-ordering sanity warnings."""

    def __init__(self, rows: dict[tuple[str, Tier], int]):
        self.rows = dict(rows)
        self.warnings: list[str] = []
        adrgs = sorted({adrg for adrg, _ in self.rows})
        for adrg in adrgs:
            by_severity = [
                (tier, self.rows[(adrg, tier)])
                for tier in (Tier.MCC, Tier.CC, Tier.NO_CC)
                if (adrg, tier) in self.rows
            ]
            for (t_hi, c_hi), (t_lo, c_lo) in zip(by_severity, by_severity[1:]):
                if c_hi < c_lo:
                    self.warnings.append(
                        f"{adrg}: tier {t_hi.value} costs less than tier {t_lo.value}")

    @classmethod
    def load(cls, path: str | Path) -> "DrgGroupTable":
        rows: dict[tuple[str, Tier], int] = {}
        with open(path, encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            required = {"adrg", "tier", "avg_cost"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise ParseError(f"group table must carry header {sorted(required)}")
            for line_no, row in enumerate(reader, start=2):
                try:
                    tier = Tier(int(row["tier"]))
                except ValueError:
                    raise ParseError(f"bad tier {row['tier']!r}", line_no)
                key = (row["adrg"].strip(), tier)
                if key in rows:
                    raise ParseError(f"duplicate group row {key}", line_no)
                rows[key] = _cost_to_minor(row["avg_cost"].strip(), line_no)
        return cls(rows)

    def cost(self, adrg: str, tier: Tier) -> int:
        try:
            return self.rows[(adrg, tier)]
        except KeyError:
            raise MissingGroupRow(f"no row for ({adrg}, tier {tier.value})")


def cc_mcc_level(
    disease: str,
    icd: IcdIndex,
    relation_model=None,
    threshold: float = 0.8,
) -> CcLevel:
    """CC/MCC level of a disease surface, or NONE when unresolvable.

    Resolution is exact normalized-title match first; otherwise the
    relation model's best similarity/inclusion title above ``threshold``.
    Several entries under one title resolve to the most severe level.
    """
    exact = icd.by_title(disease)
    if exact:
        return max((e.cc_level for e in exact), key=_SEVERITY_RANK.get)
    if relation_model is None:
        return CcLevel.NONE
    name = normalize_disease_name(disease)
    best: tuple[float, CcLevel] | None = None
    for entry in icd.entries():
        title = normalize_disease_name(entry.title)
        probs = relation_model.predict_proba(name, title)
        idx = int(probs.argmax())
        if RELATIONS[idx] not in ("similarity", "inclusion"):
            continue
        prob = float(probs[idx])
        if prob >= threshold and (best is None or prob > best[0]):
            best = (prob, entry.cc_level)
    return best[1] if best is not None else CcLevel.NONE


def regroup(
    original: DrgAssignment,
    recovered_levels: list[CcLevel],
    table: DrgGroupTable,
) -> DrgAssignment:
    """Most severe of the original tier and the recovered levels.

    The ADRG never changes; idempotent; never lowers severity.
    """
    best = original.tier
    for level in recovered_levels:
        tier = tier_for_cc_level(level)
        if tier is not None and tier.severity > best.severity:
            best = tier
    if best is original.tier:
        return original
    return DrgAssignment(adrg=original.adrg, tier=best,
                         avg_cost=table.cost(original.adrg, best))


@dataclass
class RecordDelta:
    record_id: str
    adrg: str
    old_tier: int
    new_tier: int
    old_cost_minor: int
    new_cost_minor: int

    @property
    def delta_minor(self) -> int:
        return self.new_cost_minor - self.old_cost_minor


@dataclass
class DrgImpactReport:
    deltas: list[RecordDelta]
    skipped_no_drg: int
    total_original_minor: int
    precision: float | None = None
    table_warnings: list[str] = field(default_factory=list)

    @property
    def total_delta_minor(self) -> int:
        return sum(d.delta_minor for d in self.deltas)

    @property
    def percent(self) -> float:
        if self.total_original_minor == 0:
            return 0.0
        return self.total_delta_minor / self.total_original_minor

    def to_dict(self) -> dict:
        out = {
            "records": [
                {
                    "record_id": d.record_id,
                    "adrg": d.adrg,
                    "old_tier": d.old_tier,
                    "new_tier": d.new_tier,
                    "old_cost": _minor_to_major(d.old_cost_minor),
                    "new_cost": _minor_to_major(d.new_cost_minor),
                    "delta": _minor_to_major(d.delta_minor),
                }
                for d in self.deltas
            ],
            "skipped_no_drg": self.skipped_no_drg,
            "total_delta": _minor_to_major(self.total_delta_minor),
            "total_original": _minor_to_major(self.total_original_minor),
            "percent": self.percent,
            "notes": ["principal-diagnosis CC exclusion rules not applied"]
            + self.table_warnings,
        }
        if self.precision is not None:
            out["precision"] = self.precision
            out["precision_scaled_total_delta"] = (
                _minor_to_major(round(self.total_delta_minor * self.precision)))
        return out


def cost_delta_report(
    corpus_findings,
    table: DrgGroupTable,
    precision: float | None = None,
) -> DrgImpactReport:
    """Per-record cost deltas for (record, recovered CC levels) pairs.

    Records without a DRG assignment are skipped and counted. Deltas are
    signed; an inverted published table can produce negative ones.
    """
    deltas: list[RecordDelta] = []
    skipped = 0
    total_original = 0
    for record, levels in corpus_findings:
        if record.drg is None:
            skipped += 1
            continue
        total_original += record.drg.avg_cost
        new = regroup(record.drg, levels, table)
        deltas.append(RecordDelta(
            record_id=record.record_id,
            adrg=record.drg.adrg,
            old_tier=record.drg.tier.value,
            new_tier=new.tier.value,
            old_cost_minor=record.drg.avg_cost,
            new_cost_minor=new.avg_cost,
        ))
    return DrgImpactReport(
        deltas=deltas,
        skipped_no_drg=skipped,
        total_original_minor=total_original,
        precision=precision,
        table_warnings=list(table.warnings),
    )


def recovered_levels_for_records(
    records: list[MedicalRecord],
    findings_by_record: dict[str, list[dict]],
    icd: IcdIndex,
    relation_model=None,
    threshold: float = 0.8,
) -> list[tuple[MedicalRecord, list[CcLevel]]]:
    """Join a detect report onto records, resolving each finding's level."""
    out = []
    for record in records:
        levels = [
            cc_mcc_level(f["disease"], icd, relation_model, threshold)
            for f in findings_by_record.get(record.record_id, [])
        ]
        out.append((record, levels))
    return out
