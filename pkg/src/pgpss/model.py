"""GPSS model text parser, validator and renderer."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

MAX_COUNT = 2147483647

BLOCK_KINDS = (
    "GENERATE",
    "TERMINATE",
    "ADVANCE",
    "SEIZE",
    "RELEASE",
    "ENTER",
    "LEAVE",
    "QUEUE",
    "DEPART",
    "TRANSFER",
)
DECLARATIONS = ("PARTITION", "STORAGE")
RESERVED = frozenset(BLOCK_KINDS + DECLARATIONS)

_IDENT = re.compile(r"^[A-Za-z0-9_]+$")
_COUNT = re.compile(r"^\d+$")
_REAL = re.compile(r"^(\d+(\.\d*)?|\.\d+)$")


class ParseError(ValueError):
    """Model text could not be parsed or failed validation."""

    def __init__(self, message: str, line_no: int | None = None) -> None:
        self.message = message
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True, order=True)
class BlockRef:
    partition_no: int
    block_no: int

    def __post_init__(self) -> None:
        if self.partition_no < 1 or self.block_no < 1:
            raise ValueError(f"invalid block reference ({self.partition_no},{self.block_no})")

    def __str__(self) -> str:
        return f"({self.partition_no},{self.block_no})"


@dataclass(frozen=True)
class Generate:
    avg_interarrival: int = 0
    half_range: int = 0
    offset: int | None = None
    limit: int | None = None
    priority: int = 0


@dataclass(frozen=True)
class Terminate:
    decrement: int = 0


@dataclass(frozen=True)
class Advance:
    avg_hold: int = 0
    half_range: int = 0


@dataclass(frozen=True)
class FacilityUse:
    facility: str


@dataclass(frozen=True)
class StorageUse:
    storage: str
    usage_count: int = 1


@dataclass(frozen=True)
class QueueUse:
    queue: str


@dataclass(frozen=True)
class Transfer:
    destination: str
    probability: float = 1.0
    target: BlockRef | None = None


BlockParams = Union[Generate, Terminate, Advance, FacilityUse, StorageUse, QueueUse, Transfer]


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    params: BlockParams
    label: str | None = None


@dataclass
class PartitionSpec:
    name: str
    number: int
    termination_counter: int | None = None
    blocks: list[BlockSpec] = field(default_factory=list)
    storages: dict[str, int] = field(default_factory=dict)
    label_table: dict[str, BlockRef] = field(default_factory=dict)

    def block(self, block_no: int) -> BlockSpec:
        return self.blocks[block_no - 1]

    def queues(self) -> list[str]:
        return _first_use(self.blocks, QueueUse, "queue")

    def facilities(self) -> list[str]:
        return _first_use(self.blocks, FacilityUse, "facility")

    @property
    def has_default_name(self) -> bool:
        return self.name == f"Partition {self.number}"


@dataclass
class ModelSpec:
    partitions: list[PartitionSpec]

    def partition(self, number: int) -> PartitionSpec:
        return self.partitions[number - 1]

    def block(self, ref: BlockRef) -> BlockSpec:
        return self.partitions[ref.partition_no - 1].block(ref.block_no)

    def has_block(self, ref: BlockRef) -> bool:
        if ref.partition_no > len(self.partitions):
            return False
        return ref.block_no <= len(self.partitions[ref.partition_no - 1].blocks)

    def resolve(self, label: str) -> BlockRef:
        for part in self.partitions:
            if label in part.label_table:
                return part.label_table[label]
        raise KeyError(label)


def _first_use(blocks: list[BlockSpec], cls: type, attr: str) -> list[str]:
    seen: dict[str, None] = {}
    for block in blocks:
        if isinstance(block.params, cls):
            seen.setdefault(getattr(block.params, attr), None)
    return list(seen)


# ---------------------------------------------------------------- parsing


def _split_params(token: str | None) -> list[str]:
    return [] if token is None else token.split(",")


def _slot(params: list[str], i: int) -> str | None:
    if i < len(params) and params[i] != "":
        return params[i]
    return None


def _count(raw: str | None, what: str, line_no: int, default: int | None) -> int | None:
    if raw is None:
        return default
    if not _COUNT.match(raw):
        raise ParseError(f"{what} must be a non-negative integer, got {raw!r}", line_no)
    value = int(raw)
    if value > MAX_COUNT:
        raise ParseError(f"{what} {value} exceeds {MAX_COUNT}", line_no)
    return value


def _ident(raw: str | None, what: str, line_no: int) -> str:
    if raw is None:
        raise ParseError(f"missing {what}", line_no)
    if not _IDENT.match(raw):
        raise ParseError(f"invalid {what} {raw!r}", line_no)
    if raw.upper() in RESERVED:
        raise ParseError(f"{what} {raw!r} is a reserved word", line_no)
    return raw


def _arity(params: list[str], most: int, kind: str, line_no: int) -> None:
    if len(params) > most:
        raise ParseError(f"too many parameters for {kind}", line_no)


def _parse_block(kind: str, params: list[str], part: PartitionSpec, line_no: int) -> BlockParams:
    if kind == "GENERATE":
        _arity(params, 5, kind, line_no)
        avg = _count(_slot(params, 0), "average interarrival time", line_no, 0)
        half = _count(_slot(params, 1), "half range", line_no, 0)
        if half > avg:
            raise ParseError(f"half range {half} exceeds average {avg}", line_no)
        return Generate(
            avg,
            half,
            _count(_slot(params, 2), "offset", line_no, None),
            _count(_slot(params, 3), "limit", line_no, None),
            _count(_slot(params, 4), "priority", line_no, 0),
        )
    if kind == "TERMINATE":
        _arity(params, 1, kind, line_no)
        return Terminate(_count(_slot(params, 0), "termination decrement", line_no, 0))
    if kind == "ADVANCE":
        _arity(params, 2, kind, line_no)
        avg = _count(_slot(params, 0), "average holding time", line_no, 0)
        half = _count(_slot(params, 1), "half range", line_no, 0)
        if half > avg:
            raise ParseError(f"half range {half} exceeds average {avg}", line_no)
        return Advance(avg, half)
    if kind in ("SEIZE", "RELEASE"):
        _arity(params, 1, kind, line_no)
        return FacilityUse(_ident(_slot(params, 0), "facility name", line_no))
    if kind in ("QUEUE", "DEPART"):
        _arity(params, 1, kind, line_no)
        return QueueUse(_ident(_slot(params, 0), "queue name", line_no))
    if kind in ("ENTER", "LEAVE"):
        _arity(params, 2, kind, line_no)
        name = _ident(_slot(params, 0), "storage name", line_no)
        if name not in part.storages:
            raise ParseError(f"storage {name!r} used before its declaration", line_no)
        usage = _count(_slot(params, 1), "usage count", line_no, 1)
        if usage < 1:
            raise ParseError("usage count must be at least 1", line_no)
        if usage > part.storages[name]:
            raise ParseError(
                f"usage count {usage} exceeds capacity {part.storages[name]} of storage {name!r}", line_no
            )
        return StorageUse(name, usage)
    if kind == "TRANSFER":
        _arity(params, 2, kind, line_no)
        if len(params) <= 1:
            return Transfer(_ident(_slot(params, 0), "transfer destination", line_no))
        raw = _slot(params, 0)
        probability = 1.0
        if raw is not None:
            if not _REAL.match(raw):
                raise ParseError(f"transfer probability must be a number, got {raw!r}", line_no)
            probability = float(raw)
            if not 0.0 <= probability <= 1.0:
                raise ParseError(f"transfer probability {raw} outside [0,1]", line_no)
        return Transfer(_ident(_slot(params, 1), "transfer destination", line_no), probability)
    raise ParseError(f"unknown reserved word {kind!r}", line_no)


def parse_model(text: str) -> ModelSpec:
    """Parse model text into a validated model; raises ParseError."""
    partitions: list[PartitionSpec] = []
    labels: dict[str, int] = {}

    def current() -> PartitionSpec:
        if not partitions:
            partitions.append(PartitionSpec(name="Partition 1", number=1))
        return partitions[-1]

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("*"):
            continue
        tokens = line.split()
        label: str | None = None
        if tokens[0].upper() not in RESERVED:
            if len(tokens) < 2 or tokens[1].upper() not in RESERVED:
                word = tokens[1] if len(tokens) > 1 else tokens[0]
                raise ParseError(f"unknown reserved word {word!r}", line_no)
            label = _ident(tokens[0], "label", line_no)
            tokens = tokens[1:]
        kind = tokens[0].upper()
        params = _split_params(tokens[1] if len(tokens) > 1 else None)

        if kind == "PARTITION":
            if label is not None:
                raise ParseError("PARTITION cannot carry a label", line_no)
            _arity(params, 2, kind, line_no)
            number = len(partitions) + 1
            raw_name = _slot(params, 0)
            name = f"Partition {number}" if raw_name is None else _ident(raw_name, "partition name", line_no)
            if len(params) == 2 and params[1] == "":
                raise ParseError("PARTITION has a trailing comma but no termination counter", line_no)
            tc = _count(_slot(params, 1), "termination counter", line_no, None)
            if any(p.name == name for p in partitions):
                raise ParseError(f"duplicate partition name {name!r}", line_no)
            partitions.append(PartitionSpec(name=name, number=number, termination_counter=tc))
            continue

        part = current()
        if kind == "STORAGE":
            if label is not None:
                raise ParseError("STORAGE cannot carry a label", line_no)
            _arity(params, 2, kind, line_no)
            name = _ident(_slot(params, 0), "storage name", line_no)
            if name in part.storages:
                raise ParseError(f"duplicate storage {name!r}", line_no)
            capacity = _count(_slot(params, 1), "storage capacity", line_no, MAX_COUNT)
            if capacity < 1:
                raise ParseError("storage capacity must be at least 1", line_no)
            part.storages[name] = capacity
            continue

        block = BlockSpec(kind, _parse_block(kind, params, part, line_no), label)
        part.blocks.append(block)
        if label is not None:
            if label in labels:
                raise ParseError(f"duplicate label {label!r}", line_no)
            labels[label] = line_no
            part.label_table[label] = BlockRef(part.number, len(part.blocks))

    if not partitions:
        raise ParseError("model contains no partitions or blocks")
    return _resolve_transfers(ModelSpec(partitions), labels)


def _resolve_transfers(model: ModelSpec, labels: dict[str, int]) -> ModelSpec:
    for part in model.partitions:
        for i, block in enumerate(part.blocks):
            if isinstance(block.params, Transfer):
                try:
                    target = model.resolve(block.params.destination)
                except KeyError:
                    raise ParseError(f"unresolved transfer destination {block.params.destination!r}") from None
                params = Transfer(block.params.destination, block.params.probability, target)
                part.blocks[i] = BlockSpec(block.kind, params, block.label)
    return model


# -------------------------------------------------------------- rendering


def _opt(value: int | None, absent: str) -> str:
    return absent if value is None else str(value)


def describe_block(block: BlockSpec, part: PartitionSpec) -> str:
    """Block description in the report and log layout, e.g. 'GENERATE 3,2,(no offset),(no limit),0'."""
    p = block.params
    if isinstance(p, Generate):
        body = f"{p.avg_interarrival},{p.half_range},{_opt(p.offset, '(no offset)')},{_opt(p.limit, '(no limit)')},{p.priority}"
    elif isinstance(p, Terminate):
        body = str(p.decrement)
    elif isinstance(p, Advance):
        body = f"{p.avg_hold},{p.half_range}"
    elif isinstance(p, FacilityUse):
        body = f"(Facility: {p.facility})"
    elif isinstance(p, QueueUse):
        body = f"(Queue: {p.queue})"
    elif isinstance(p, StorageUse):
        body = f"(Storage: {p.storage}, capacity: {part.storages[p.storage]}),{p.usage_count}"
    else:
        assert isinstance(p, Transfer) and p.target is not None
        t = p.target
        body = f"{p.probability!r},(Label: {p.destination}, partition: {t.partition_no}, block: {t.block_no})"
    return f"{block.kind} {body}"


def render_model(model: ModelSpec) -> str:
    """Textual dump of the parsed model structure."""
    out = ["Model details:"]
    for part in model.partitions:
        tc = "unspecified" if part.termination_counter is None else str(part.termination_counter)
        out.append("  Partition details:")
        out.append(f"    Name: {part.name}")
        out.append(f"    Partition No: {part.number}")
        out.append(f"    Partition's termination counter: {tc}")
        for name, capacity in part.storages.items():
            out.append(f"    Storage: {name}, capacity: {capacity}")
        for label, ref in part.label_table.items():
            out.append(f"    Label: {label}, partition: {ref.partition_no}, block: {ref.block_no}")
        for name in part.queues():
            out.append(f"    Queue: {name}")
        for name in part.facilities():
            out.append(f"    Facility: {name}")
        for i, block in enumerate(part.blocks, start=1):
            out.append(f"   ({i}) Block: {describe_block(block, part)}")
    return "\n".join(out) + "\n"


def to_source(model: ModelSpec) -> str:
    """Emit canonical model text that parses back to an equal model."""
    out: list[str] = []
    for part in model.partitions:
        tc = "" if part.termination_counter is None else f",{part.termination_counter}"
        name = "" if part.has_default_name else part.name
        if name or tc or part.number > 1:
            out.append(f"PARTITION {name}{tc}".rstrip())
        for storage, capacity in part.storages.items():
            out.append(f"STORAGE {storage},{capacity}")
        for block in part.blocks:
            prefix = f"{block.label} " if block.label else ""
            out.append(f"{prefix}{block.kind} {_source_params(block.params)}")
    return "\n".join(out) + "\n"


def _source_params(p: BlockParams) -> str:
    if isinstance(p, Generate):
        return f"{p.avg_interarrival},{p.half_range},{_opt(p.offset, '')},{_opt(p.limit, '')},{p.priority}"
    if isinstance(p, Terminate):
        return str(p.decrement)
    if isinstance(p, Advance):
        return f"{p.avg_hold},{p.half_range}"
    if isinstance(p, FacilityUse):
        return p.facility
    if isinstance(p, QueueUse):
        return p.queue
    if isinstance(p, StorageUse):
        return f"{p.storage},{p.usage_count}"
    assert isinstance(p, Transfer)
    return f"{p.probability!r},{p.destination}"
