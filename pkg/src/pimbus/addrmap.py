"""Physical-address <-> DRAM-coordinate codecs and DRAM/PIM range routing.

Two bit layouts are provided:

* ``locality_centric`` slices the address MSB->LSB in the fixed order
  channel, rank, bank group, bank, row, column, byte offset.  A
  contiguous region therefore stays inside one bank until the bank's
  full row/column span is exhausted, which is what bank-level PIM
  needs.
* ``mlp_centric`` places the channel bits directly above the byte
  offset (then bank group, bank, column, rank, row), and optionally
  XOR-folds each channel bit with the parity of a mask of higher
  address bits.  Consecutive lines then spread across channels and bank
  groups, maximizing memory-level parallelism for arbitrary strides.

XOR folding is applied to the channel bits only: the raw channel field
is kept in the address and the decoded channel is
``raw ^ parity(mask & addr)``, which makes both layouts exact
bijections over their full capacity.
"""

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Sequence


class Region(str, Enum):
    DRAM = "dram"
    PIM = "pim"


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


_GEOMETRY_FIELDS = (
    "channels",
    "ranks_per_channel",
    "bankgroups_per_rank",
    "banks_per_bankgroup",
    "rows_per_bank",
    "columns_per_row",
)


@dataclass(frozen=True)
class GeometryConfig:
    """Counts for one memory subsystem (a set of channels of DIMMs)."""

    channels: int = 4
    ranks_per_channel: int = 2
    bankgroups_per_rank: int = 4
    banks_per_bankgroup: int = 4
    rows_per_bank: int = 8192
    columns_per_row: int = 128
    line_bytes: int = 64

    def __post_init__(self):
        for name in _GEOMETRY_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, int) or not _is_pow2(value):
                raise ValueError(f"geometry.{name} must be a power of two >= 1, got {value!r}")
        if not isinstance(self.line_bytes, int) or not _is_pow2(self.line_bytes) or self.line_bytes < 8:
            raise ValueError(f"geometry.line_bytes must be a power of two >= 8, got {self.line_bytes!r}")
        if self.capacity_bytes >= 1 << 64:
            raise ValueError(f"geometry capacity {self.capacity_bytes} does not fit a 64-bit address")

    # -- derived sizes ------------------------------------------------

    @property
    def capacity_bytes(self) -> int:
        return (
            self.channels
            * self.ranks_per_channel
            * self.bankgroups_per_rank
            * self.banks_per_bankgroup
            * self.rows_per_bank
            * self.columns_per_row
            * self.line_bytes
        )

    @property
    def total_lines(self) -> int:
        return self.capacity_bytes // self.line_bytes

    @property
    def row_span_bytes(self) -> int:
        return self.columns_per_row * self.line_bytes

    @property
    def bank_span_bytes(self) -> int:
        return self.rows_per_bank * self.row_span_bytes

    @property
    def banks_per_rank(self) -> int:
        return self.bankgroups_per_rank * self.banks_per_bankgroup

    @property
    def banks_per_channel(self) -> int:
        return self.ranks_per_channel * self.banks_per_rank

    @property
    def total_banks(self) -> int:
        return self.channels * self.banks_per_channel


class DramCoord(NamedTuple):
    """A fully decoded DRAM location."""

    channel: int
    rank: int
    bankgroup: int
    bank: int
    row: int
    column: int
    byte_offset: int


class MappingKind(str, Enum):
    MLP_CENTRIC = "mlp_centric"
    LOCALITY_CENTRIC = "locality_centric"


def _field_widths(g: GeometryConfig) -> dict:
    return {
        "byte_offset": g.line_bytes.bit_length() - 1,
        "column": g.columns_per_row.bit_length() - 1,
        "row": g.rows_per_bank.bit_length() - 1,
        "bank": g.banks_per_bankgroup.bit_length() - 1,
        "bankgroup": g.bankgroups_per_rank.bit_length() - 1,
        "rank": g.ranks_per_channel.bit_length() - 1,
        "channel": g.channels.bit_length() - 1,
    }


# Field order from LSB upward, per layout.
_LAYOUT_ORDER = {
    MappingKind.LOCALITY_CENTRIC: (
        "byte_offset", "column", "row", "bank", "bankgroup", "rank", "channel"),
    MappingKind.MLP_CENTRIC: (
        "byte_offset", "channel", "bankgroup", "bank", "column", "rank", "row"),
}

_COORD_INDEX = {name: i for i, name in enumerate(DramCoord._fields)}
_COORD_BOUNDS = (
    ("channel", "channels"),
    ("rank", "ranks_per_channel"),
    ("bankgroup", "bankgroups_per_rank"),
    ("bank", "banks_per_bankgroup"),
    ("row", "rows_per_bank"),
    ("column", "columns_per_row"),
    ("byte_offset", "line_bytes"),
)


def default_xor_masks(geometry: GeometryConfig) -> tuple:
    """One mask per channel bit: a row-field bit XOR a bank-field bit.

    Mask bits always sit strictly above the channel field of the
    mlp_centric layout so the fold stays invertible.  Geometries with
    no row/bank bits above the channel field get no hashing.
    """
    fn_shifts = _layout_shifts(geometry, MappingKind.MLP_CENTRIC)
    widths = _field_widths(geometry)
    ch_bits = widths["channel"]
    masks = []
    for i in range(ch_bits):
        mask = 0
        if widths["row"] > 0:
            mask |= 1 << (fn_shifts["row"] + (i % widths["row"]))
        if widths["bank"] > 0:
            mask |= 1 << (fn_shifts["bank"] + (i % widths["bank"]))
        if mask:
            masks.append(mask)
    return tuple(masks) if len(masks) == ch_bits else ()


def _layout_shifts(g: GeometryConfig, kind: MappingKind) -> dict:
    widths = _field_widths(g)
    shifts = {}
    shift = 0
    for name in _LAYOUT_ORDER[kind]:
        shifts[name] = shift
        shift += widths[name]
    return shifts


@dataclass(frozen=True)
class MappingFunction:
    """A bijective physical-address <-> DramCoord codec."""

    kind: MappingKind
    geometry: GeometryConfig
    xor_masks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", MappingKind(self.kind))
        object.__setattr__(self, "xor_masks", tuple(self.xor_masks))
        widths = _field_widths(self.geometry)
        shifts = _layout_shifts(self.geometry, self.kind)
        if self.xor_masks:
            if self.kind is not MappingKind.MLP_CENTRIC:
                raise ValueError("xor_masks only apply to the mlp_centric layout")
            ch_bits = widths["channel"]
            if len(self.xor_masks) != ch_bits:
                raise ValueError(
                    f"need one xor mask per channel bit ({ch_bits}), got {len(self.xor_masks)}")
            addr_bits = self.geometry.capacity_bytes.bit_length() - 1
            below = (1 << (shifts["channel"] + ch_bits)) - 1
            for i, mask in enumerate(self.xor_masks):
                if mask == 0:
                    raise ValueError(f"xor_masks[{i}] is empty")
                if mask >> addr_bits:
                    raise ValueError(f"xor_masks[{i}] selects bits beyond the {addr_bits}-bit address")
                if mask & below:
                    raise ValueError(
                        f"xor_masks[{i}] must only select bits above the channel field (bit {shifts['channel'] + ch_bits - 1})")
        # Cache the per-field (shift, mask) table for the hot paths.
        table = {name: (shifts[name], (1 << widths[name]) - 1) for name in shifts}
        object.__setattr__(self, "_table", table)
        object.__setattr__(self, "_capacity", self.geometry.capacity_bytes)

    # -- constructors ---------------------------------------------------

    @classmethod
    def mlp_centric(cls, geometry: GeometryConfig, xor_masks: Optional[Sequence[int]] = None):
        if xor_masks is None:
            xor_masks = default_xor_masks(geometry)
        return cls(MappingKind.MLP_CENTRIC, geometry, tuple(xor_masks))

    @classmethod
    def locality_centric(cls, geometry: GeometryConfig):
        return cls(MappingKind.LOCALITY_CENTRIC, geometry)

    # -- codec ----------------------------------------------------------

    def decode(self, addr: int) -> DramCoord:
        if not 0 <= addr < self._capacity:
            raise ValueError(
                f"address {addr:#x} out of range for capacity {self._capacity} bytes")
        t = self._table
        sh, m = t["channel"]
        channel = (addr >> sh) & m
        for i, mask in enumerate(self.xor_masks):
            if (addr & mask).bit_count() & 1:
                channel ^= 1 << i
        return DramCoord(
            channel=channel,
            rank=(addr >> t["rank"][0]) & t["rank"][1],
            bankgroup=(addr >> t["bankgroup"][0]) & t["bankgroup"][1],
            bank=(addr >> t["bank"][0]) & t["bank"][1],
            row=(addr >> t["row"][0]) & t["row"][1],
            column=(addr >> t["column"][0]) & t["column"][1],
            byte_offset=addr & t["byte_offset"][1],
        )

    def encode(self, coord: DramCoord) -> int:
        g = self.geometry
        for field, bound_name in _COORD_BOUNDS:
            value = coord[_COORD_INDEX[field]]
            bound = getattr(g, bound_name)
            if not 0 <= value < bound:
                raise ValueError(
                    f"coordinate field '{field}' = {value} out of range [0, {bound})")
        t = self._table
        addr = coord.byte_offset
        addr |= coord.column << t["column"][0]
        addr |= coord.row << t["row"][0]
        addr |= coord.bank << t["bank"][0]
        addr |= coord.bankgroup << t["bankgroup"][0]
        addr |= coord.rank << t["rank"][0]
        channel = coord.channel
        # Masks never touch the channel field, so parity over the plain
        # fields equals parity over the final address.
        for i, mask in enumerate(self.xor_masks):
            if (addr & mask).bit_count() & 1:
                channel ^= 1 << i
        return addr | (channel << t["channel"][0])


def decode(addr: int, fn: MappingFunction) -> DramCoord:
    return fn.decode(addr)


def encode(coord: DramCoord, fn: MappingFunction) -> int:
    return fn.encode(coord)


def channel_balance(addrs, fn: MappingFunction):
    """Per-channel hit counts for a sequence of physical addresses."""
    counts = [0] * fn.geometry.channels
    for a in addrs:
        counts[fn.decode(a).channel] += 1
    return counts


@dataclass(frozen=True)
class HetMapConfig:
    """Range-routed dual mapping: [0, dram_bytes) is DRAM space, the rest PIM."""

    dram_fn: MappingFunction
    pim_fn: MappingFunction
    dram_bytes: int

    def __post_init__(self):
        if self.dram_bytes != self.dram_fn.geometry.capacity_bytes:
            raise ValueError(
                f"dram_bytes {self.dram_bytes} != DRAM geometry capacity "
                f"{self.dram_fn.geometry.capacity_bytes}")

    @property
    def pim_bytes(self) -> int:
        return self.pim_fn.geometry.capacity_bytes

    @property
    def total_bytes(self) -> int:
        return self.dram_bytes + self.pim_bytes

    def route(self, addr: int):
        if not 0 <= addr < self.total_bytes:
            raise ValueError(
                f"address {addr:#x} out of range for combined capacity {self.total_bytes} bytes")
        if addr < self.dram_bytes:
            return Region.DRAM, self.dram_fn.decode(addr)
        return Region.PIM, self.pim_fn.decode(addr - self.dram_bytes)


def route(addr: int, het: HetMapConfig):
    return het.route(addr)
