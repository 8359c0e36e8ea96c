"""Post-simulation report records, construction and text rendering."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from pgpss.model import BlockRef

if TYPE_CHECKING:
    from pgpss.engine import SimulationEngine


def float32_text(value: float) -> str:
    """Shortest decimal text that round-trips through a 32-bit float."""
    target = struct.unpack("f", struct.pack("f", value))[0]
    for digits in range(1, 10):
        text = f"{target:.{digits}g}"
        if struct.unpack("f", struct.pack("f", float(text)))[0] == target:
            break
    if "e" in text:
        return text
    return text if "." in text else f"{text}.0"


@dataclass(frozen=True)
class BlockRow:
    ref: BlockRef
    current: int
    total: int
    description: str


@dataclass(frozen=True)
class PartitionBlocks:
    name: str
    number: int
    rows: tuple[BlockRow, ...]


@dataclass(frozen=True)
class FacilityRow:
    name: str
    average_usage: float
    captures: int
    average_hold: float
    owner: int | None


@dataclass(frozen=True)
class QueueRow:
    name: str
    max_content: int
    average_content: float
    entries: int
    zero_entries: int
    percent_zeros: float
    average_time: float
    current_content: int


@dataclass(frozen=True)
class StorageRow:
    name: str
    average_usage: float
    entries: int
    average_time: float


@dataclass
class ReportSet:
    end_time: int | None = None
    end_transaction: str | None = None
    performance: float | None = None
    partitions: list[PartitionBlocks] = field(default_factory=list)
    facilities: list[FacilityRow] = field(default_factory=list)
    queues: list[QueueRow] = field(default_factory=list)
    storages: list[StorageRow] = field(default_factory=list)
    chain: list[str] | None = None

    def block_totals(self) -> dict[BlockRef, int]:
        return {row.ref: row.total for part in self.partitions for row in part.rows}

    def block_currents(self) -> dict[BlockRef, int]:
        return {row.ref: row.current for part in self.partitions for row in part.rows}

    def queue(self, name: str) -> QueueRow:
        return next(q for q in self.queues if q.name == name)

    def storage(self, name: str) -> StorageRow:
        return next(s for s in self.storages if s.name == name)

    def facility(self, name: str) -> FacilityRow:
        return next(f for f in self.facilities if f.name == name)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def build_report(
    engine: SimulationEngine,
    end_time: int | None = None,
    wall_seconds: float | None = None,
    include_chain: bool = False,
) -> ReportSet:
    st = engine.state
    end = st.end_transaction
    if end_time is None:
        end_time = end.move_time if end is not None else st.clock
    span = end_time + 1
    integrals = engine.accumulate_tick_statistics(span)
    report = ReportSet(
        end_time=end_time,
        end_transaction=str(end) if end is not None else None,
        performance=_ratio(end_time, wall_seconds) if wall_seconds else None,
    )
    for p in st.partitions:
        part = engine.model.partition(p)
        rows = []
        for i in range(1, len(part.blocks) + 1):
            ref = BlockRef(p, i)
            current, total = st.block_counters[ref]
            rows.append(BlockRow(ref, current, total, f"Block: {engine.describe(ref)}"))
        report.partitions.append(PartitionBlocks(part.name, p, tuple(rows)))
        for name in part.facilities():
            fac = st.facilities[(p, name)]
            busy = integrals["facility"][(p, name)]
            report.facilities.append(
                FacilityRow(name, _ratio(busy, span), fac.captures, _ratio(busy, fac.captures), fac.owner)
            )
        for name in part.queues():
            q = st.queues[(p, name)]
            area = integrals["queue"][(p, name)]
            report.queues.append(
                QueueRow(
                    name,
                    q.max_content,
                    _ratio(area, span),
                    q.entries,
                    q.zero_entries,
                    100.0 * _ratio(q.zero_entries, q.entries),
                    _ratio(area, q.entries),
                    q.content,
                )
            )
        for name, capacity in part.storages.items():
            s = st.storages[(p, name)]
            area = integrals["storage"][(p, name)]
            report.storages.append(
                StorageRow(name, _ratio(area, span * capacity), s.entries, _ratio(area, s.entries))
            )
    if include_chain:
        report.chain = [str(x) for x in st.chain]
    return report


def merge_reports(fragments: list[ReportSet]) -> ReportSet:
    """Combine per-partition fragments in partition order."""
    merged = ReportSet()
    for frag in sorted(fragments, key=lambda f: f.partitions[0].number if f.partitions else 0):
        merged.partitions.extend(frag.partitions)
        merged.facilities.extend(frag.facilities)
        merged.queues.extend(frag.queues)
        merged.storages.extend(frag.storages)
        if frag.chain is not None:
            merged.chain = (merged.chain or []) + frag.chain
    return merged


def render_block_section(report: ReportSet) -> list[str]:
    out = ["Block report section:", "Block          current          total", "               xacts          xacts"]
    for part in report.partitions:
        out.append(f"Partition: {part.name}")
        for row in part.rows:
            out.append(f"{str(row.ref):<15}{row.current:<15}{row.total:<3}{row.description}")
    return out


def render_summary_section(report: ReportSet) -> list[str]:
    out = ["Summary entity report section:"]
    if report.facilities:
        out.append("Facility average usage total average current")
        for f in report.facilities:
            owner = "" if f.owner is None else str(f.owner)
            out.append(
                f"{f.name} {float32_text(f.average_usage)} {f.captures} {float32_text(f.average_hold)} {owner}".rstrip()
            )
    if report.queues:
        out.append("Queue maximum average total zero percent average current")
        out.append("      content content entries entries zeros time/unit content")
        for q in report.queues:
            out.append(
                f"{q.name} {q.max_content} {float32_text(q.average_content)} {q.entries} {q.zero_entries} "
                f"{float32_text(q.percent_zeros)} {float32_text(q.average_time)} {q.current_content}"
            )
    if report.storages:
        out.append("Storage average usage total average time/unit")
        for s in report.storages:
            out.append(f"{s.name} {float32_text(s.average_usage)} {s.entries} {float32_text(s.average_time)}")
    return out


def render_report(report: ReportSet) -> str:
    out = ["***** Simulation report *****"]
    out.append(f"The simulation was completed at the simulation time: {report.end_time}")
    if report.end_transaction:
        out.append(f"by the transaction {report.end_transaction}")
    if report.performance is not None:
        out.append(
            "The average simulation performance in simulation time per second real time was: "
            f"{report.performance:.6f} (time units/s)"
        )
    out.append("")
    out.extend(render_block_section(report))
    out.append("")
    out.extend(render_summary_section(report))
    if report.chain is not None:
        out.append("")
        out.append("Transaction chain report section:")
        out.extend(report.chain)
    return "\n".join(out) + "\n"
