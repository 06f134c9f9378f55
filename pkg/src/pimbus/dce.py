"""Data copy engine: offloaded DRAM<->PIM transfers.

The engine owns a 64 KiB address buffer (one 16-byte entry per
participating PIM core: 8 B source base, 4 B core id, 4 B offset) and a
16 KiB line-granular data buffer.  A transfer proceeds as a pipeline:
the scheduler picks the next (core, offset), the AGU translates it and
enqueues the read; completed reads land in the data buffer, are
transposed on the fly, and the AGU enqueues the write to the
destination derived from the core id and the heap base.  Reads stall
when the data buffer or the target read queue is full, so buffer
overflow is impossible by construction.

Two emission orders are supported:

* ``pim_ms``: per PIM channel in parallel, repeated passes of the
  bank -> rank -> bankgroup nest, so consecutive column accesses within
  a channel alternate bank groups and all banks stay busy.
* ``naive``: strict descriptor order through a single issue port,
  modeling a conventional DMA engine with no PIM awareness.
"""

from collections import deque
from dataclasses import dataclass
from typing import Optional, Tuple

from pimbus.addrmap import DramCoord, GeometryConfig, MappingFunction
from pimbus.dram import NEVER
from pimbus.errors import ConfigError
from pimbus.system import MemorySystem

DRAM_TO_PIM = "dram_to_pim"
PIM_TO_DRAM = "pim_to_dram"

ADDRESS_BUFFER_ENTRY_BYTES = 16

# out[8*i + j] = in[8*j + i] within each 64-byte block: the byte at
# (word i, lane j) moves to (word j, lane i), so each chip lane ends up
# holding one whole 8-byte word.
_TRANSPOSE_IDX = tuple((i % 8) * 8 + i // 8 for i in range(64))


def transpose8x8(block):
    """Transpose an 8x8 byte matrix: out[i][j] == in[j][i]."""
    if len(block) != 8 or any(len(row) != 8 for row in block):
        raise ValueError("transpose block must be 8x8")
    return [[block[j][i] for j in range(8)] for i in range(8)]


def transpose_line(line: bytes) -> bytes:
    """Transpose every 64-byte block of a line in place."""
    if len(line) % 64:
        raise ValueError(f"line length {len(line)} is not a multiple of 64")
    if len(line) == 64:
        return bytes(line[k] for k in _TRANSPOSE_IDX)
    out = bytearray(len(line))
    for base in range(0, len(line), 64):
        for k in range(64):
            out[base + k] = line[base + _TRANSPOSE_IDX[k]]
    return bytes(out)


def transpose_buffer(data: bytes) -> bytes:
    """Straight-line oracle: transpose a whole byte image block by block."""
    return b"".join(transpose_line(data[i:i + 64]) for i in range(0, len(data), 64))


# -- PIM core identifiers -------------------------------------------------

def get_pim_core_id(ra: int, bg: int, bk: int, geometry: GeometryConfig) -> int:
    """Core index within one channel: ra*banks*bankgroups + bg*banks + bk."""
    if not 0 <= ra < geometry.ranks_per_channel:
        raise ValueError(f"rank {ra} out of range [0, {geometry.ranks_per_channel})")
    if not 0 <= bg < geometry.bankgroups_per_rank:
        raise ValueError(f"bankgroup {bg} out of range [0, {geometry.bankgroups_per_rank})")
    if not 0 <= bk < geometry.banks_per_bankgroup:
        raise ValueError(f"bank {bk} out of range [0, {geometry.banks_per_bankgroup})")
    num_banks = geometry.banks_per_bankgroup
    num_bankgroups = geometry.bankgroups_per_rank
    return ra * num_banks * num_bankgroups + bg * num_banks + bk


def pim_core_coord(core_id: int, geometry: GeometryConfig):
    """Inverse of the global core numbering: (channel, rank, bankgroup, bank)."""
    per_channel = geometry.banks_per_channel
    if not 0 <= core_id < geometry.total_banks:
        raise ValueError(f"pim core {core_id} out of range [0, {geometry.total_banks})")
    ch, rem = divmod(core_id, per_channel)
    ra, rem = divmod(rem, geometry.banks_per_rank)
    bg, bk = divmod(rem, geometry.banks_per_bankgroup)
    return ch, ra, bg, bk


def pim_core_line_addr(core_id: int, byte_offset: int, pim_fn: MappingFunction) -> int:
    """PIM-space physical address of a byte inside a core's bank, via the
    locality-centric encode."""
    g = pim_fn.geometry
    if not 0 <= byte_offset < g.bank_span_bytes:
        raise ValueError(
            f"byte offset {byte_offset} outside the {g.bank_span_bytes}-byte bank span")
    ch, ra, bg, bk = pim_core_coord(core_id, g)
    row, rem = divmod(byte_offset, g.row_span_bytes)
    col, off = divmod(rem, g.line_bytes)
    return pim_fn.encode(DramCoord(ch, ra, bg, bk, row, col, off))


# -- transfer descriptor ---------------------------------------------------

@dataclass(frozen=True)
class TransferDescriptor:
    """Software view of one offloaded transfer (one entry per PIM core).

    ``src_bases`` are DRAM-space physical addresses: sources for
    dram_to_pim, destinations for pim_to_dram.  The PIM-side address of
    core i is derived from ``dst_pim_ids[i]`` and ``pim_heap_base``.
    """

    direction: str
    xfer_per_bank: int
    src_bases: Tuple[int, ...]
    dst_pim_ids: Tuple[int, ...]
    pim_heap_base: int = 0

    def __post_init__(self):
        object.__setattr__(self, "src_bases", tuple(self.src_bases))
        object.__setattr__(self, "dst_pim_ids", tuple(self.dst_pim_ids))

    @property
    def cores(self) -> int:
        return len(self.dst_pim_ids)

    @property
    def total_bytes(self) -> int:
        return self.cores * self.xfer_per_bank

    def validate(self, dram_geometry: GeometryConfig, pim_geometry: GeometryConfig):
        errors = []
        line = pim_geometry.line_bytes
        if self.direction not in (DRAM_TO_PIM, PIM_TO_DRAM):
            errors.append(f"direction: unknown value {self.direction!r}")
        if self.xfer_per_bank < 0 or self.xfer_per_bank % line:
            errors.append(
                f"xfer_per_bank: must be a non-negative multiple of {line}, "
                f"got {self.xfer_per_bank}")
        if line < 64:
            errors.append(f"line_bytes: transfers need >= 64-byte lines, got {line}")
        if len(self.src_bases) != len(self.dst_pim_ids):
            errors.append(
                f"src_bases: {len(self.src_bases)} entries vs "
                f"{len(self.dst_pim_ids)} dst_pim_ids")
        if len(set(self.dst_pim_ids)) != len(self.dst_pim_ids):
            errors.append("dst_pim_ids: core ids must be pairwise distinct")
        ncores = pim_geometry.total_banks
        for i, core in enumerate(self.dst_pim_ids):
            if not 0 <= core < ncores:
                errors.append(f"dst_pim_ids[{i}]: {core} out of range [0, {ncores})")
        if self.pim_heap_base < 0 or self.pim_heap_base % line:
            errors.append(
                f"pim_heap_base: must be a non-negative multiple of {line}")
        elif self.pim_heap_base + self.xfer_per_bank > pim_geometry.bank_span_bytes:
            errors.append(
                f"pim_heap_base: heap base + xfer_per_bank exceeds the "
                f"{pim_geometry.bank_span_bytes}-byte bank span")
        dram_cap = dram_geometry.capacity_bytes
        for i, base in enumerate(self.src_bases):
            if base % line:
                errors.append(f"src_bases[{i}]: {base:#x} not line-aligned")
            elif not 0 <= base <= dram_cap - self.xfer_per_bank:
                errors.append(f"src_bases[{i}]: region exceeds DRAM capacity")
        if self.direction == PIM_TO_DRAM and not errors:
            # DRAM-side destinations must be mutually exclusive.
            spans = sorted((b, b + self.xfer_per_bank) for b in self.src_bases)
            for (a0, a1), (b0, _) in zip(spans, spans[1:]):
                if b0 < a1:
                    errors.append(
                        f"src_bases: destination regions overlap at {b0:#x}")
                    break
        if errors:
            raise ConfigError(errors)


# -- address buffer and AGU -------------------------------------------------

class AddressBufferEntry:
    __slots__ = ("dram_base", "pim_core_id", "offset")

    def __init__(self, dram_base, pim_core_id):
        self.dram_base = dram_base
        self.pim_core_id = pim_core_id
        self.offset = 0


class AddressBuffer:
    """The DCE's per-transfer entry table, keyed by PIM core id."""

    def __init__(self, descriptor: TransferDescriptor, pim_fn: MappingFunction,
                 capacity_bytes=65536, entry_bytes=ADDRESS_BUFFER_ENTRY_BYTES):
        self.capacity_entries = capacity_bytes // entry_bytes
        if descriptor.cores > self.capacity_entries:
            raise ValueError(
                f"descriptor has {descriptor.cores} cores but the address "
                f"buffer holds {self.capacity_entries} entries; split into waves")
        self.xfer_per_bank = descriptor.xfer_per_bank
        self.line_bytes = pim_fn.geometry.line_bytes
        self.pim_heap_base = descriptor.pim_heap_base
        self.pim_fn = pim_fn
        self.entries = {
            core: AddressBufferEntry(base, core)
            for base, core in zip(descriptor.src_bases, descriptor.dst_pim_ids)
        }

    def agu_next(self, pim_core_id: int) -> Optional[Tuple[int, int]]:
        """Translate the core's next line; None once the entry is exhausted.

        Returns (src_addr, dst_addr): the DRAM-space address and the
        PIM-space address (heap base + progress offset inside the
        core's bank, through the locality-centric encode).
        """
        entry = self.entries[pim_core_id]
        if entry.offset >= self.xfer_per_bank:
            return None
        src = entry.dram_base + entry.offset
        dst = pim_core_line_addr(pim_core_id, self.pim_heap_base + entry.offset,
                                 self.pim_fn)
        entry.offset += self.line_bytes
        return src, dst


def agu_next(pim_core_id: int, entries: AddressBuffer):
    return entries.agu_next(pim_core_id)


# -- scheduling orders -------------------------------------------------------

def _channel_nest_order(channel: int, cores, geometry: GeometryConfig):
    """Alg-1 visit order for one channel: bank -> rank -> bankgroup."""
    present = set(cores)
    base = channel * geometry.banks_per_channel
    order = []
    for bk in range(geometry.banks_per_bankgroup):
        for ra in range(geometry.ranks_per_channel):
            for bg in range(geometry.bankgroups_per_rank):
                core = base + get_pim_core_id(ra, bg, bk, geometry)
                if core in present:
                    order.append(core)
    return order


def cores_by_channel(cores, geometry: GeometryConfig):
    by_channel = {}
    for core in cores:
        by_channel.setdefault(core // geometry.banks_per_channel, []).append(core)
    return by_channel


def pim_ms_order(descriptor: TransferDescriptor, geometry: GeometryConfig,
                 pim_fn: MappingFunction = None):
    """Direct transliteration of the scheduling algorithm.

    Returns {channel: [(src_addr, dst_addr), ...]} giving, per channel,
    the exact order in which memory transactions are generated:
    repeated bank -> rank -> bankgroup passes, one line per visited
    core per pass, until every entry's offset reaches xfer_per_bank.
    """
    if pim_fn is None:
        pim_fn = MappingFunction.locality_centric(geometry)
    buffers = AddressBuffer(descriptor, pim_fn, capacity_bytes=1 << 62)
    result = {}
    for channel, cores in cores_by_channel(descriptor.dst_pim_ids, geometry).items():
        order = _channel_nest_order(channel, cores, geometry)
        addrs = []
        remaining = True
        while remaining:
            remaining = False
            for core in order:
                pair = buffers.agu_next(core)
                if pair is not None:
                    addrs.append(pair)
                    remaining = True
        result[channel] = addrs
    return result


class _NestStream:
    """Streaming selector with the same emission order as pim_ms_order:
    cyclic passes over the nest order, skipping exhausted entries."""

    __slots__ = ("order", "offsets", "xfer", "line", "pos", "remaining")

    def __init__(self, order, xfer, line):
        self.order = order
        self.offsets = [0] * len(order)
        self.xfer = xfer
        self.line = line
        self.pos = 0
        self.remaining = len(order) * (xfer // line)

    def peek(self):
        """Next (core, offset) or None; does not advance."""
        if self.remaining == 0:
            return None
        offsets = self.offsets
        n = len(self.order)
        i = self.pos
        while offsets[i] >= self.xfer:
            i = (i + 1) % n
        self.pos = i
        return self.order[i], offsets[i]

    def advance(self):
        self.offsets[self.pos] += self.line
        self.pos = (self.pos + 1) % len(self.order)
        self.remaining -= 1


class _SequentialStream:
    """Naive DMA order: each entry drained fully, in descriptor order."""

    __slots__ = ("order", "xfer", "line", "idx", "offset", "remaining")

    def __init__(self, order, xfer, line):
        self.order = order
        self.xfer = xfer
        self.line = line
        self.idx = 0
        self.offset = 0
        self.remaining = len(order) * (xfer // line)

    def peek(self):
        if self.remaining == 0:
            return None
        return self.order[self.idx], self.offset

    def advance(self):
        self.offset += self.line
        if self.offset >= self.xfer:
            self.offset = 0
            self.idx += 1
        self.remaining -= 1


class _ReadPort:
    __slots__ = ("stream", "next_op_cpu")

    def __init__(self, stream):
        self.stream = stream
        self.next_op_cpu = 0


class _WritePort:
    __slots__ = ("pending", "next_op_cpu")

    def __init__(self):
        self.pending = deque()  # FIFO of (dst_addr, data); left is oldest
        self.next_op_cpu = 0


class DataCopyEngine:
    """Agent executing one TransferDescriptor through the DCE pipeline."""

    def __init__(self, system: MemorySystem, descriptor: TransferDescriptor,
                 use_pim_ms=True, data_buffer_bytes=16384,
                 address_buffer_bytes=65536,
                 entry_bytes=ADDRESS_BUFFER_ENTRY_BYTES, record_emissions=False):
        descriptor.validate(system.dram_geometry, system.pim_geometry)
        self.sys = system
        self.desc = descriptor
        self.use_pim_ms = use_pim_ms
        g = system.pim_geometry
        self.line = g.line_bytes
        self.buffer_capacity = data_buffer_bytes // self.line
        self.max_entries = max(1, address_buffer_bytes // entry_bytes)
        self.pim_fn = system.hetmap.pim_fn
        self.record_emissions = record_emissions
        self.emissions = [] if record_emissions else None

        self.lines_per_core = descriptor.xfer_per_bank // self.line
        self.total_lines = self.lines_per_core * descriptor.cores
        self.lines_written = 0
        self.buffer_occupancy = 0
        self.max_buffer_occupancy = 0
        self.bytes_read = 0
        self.bytes_written = 0
        self.completion_cycle = 0

        self._core_src = dict(zip(descriptor.dst_pim_ids, descriptor.src_bases))
        self._waves = [descriptor.dst_pim_ids[i:i + self.max_entries]
                       for i in range(0, descriptor.cores, self.max_entries)]
        self._wave_idx = -1
        self._wave_lines = 0
        self._wave_written = 0
        self._read_ports = []
        self._write_ports = []
        self._pending_data = {}
        self.done = self.total_lines == 0
        self.wake = NEVER if self.done else 0
        if not self.done:
            self._start_wave(0)

    # -- wave management -------------------------------------------------

    def _start_wave(self, idx):
        self._wave_idx = idx
        cores = self._waves[idx]
        self._wave_lines = len(cores) * self.lines_per_core
        self._wave_written = 0
        xfer = self.desc.xfer_per_bank
        g = self.sys.pim_geometry
        if self.use_pim_ms:
            streams = [
                _NestStream(_channel_nest_order(ch, chunk, g), xfer, self.line)
                for ch, chunk in sorted(cores_by_channel(cores, g).items())
            ]
            nports = g.channels if self.desc.direction == DRAM_TO_PIM else \
                self.sys.dram_geometry.channels
            self._write_ports = [_WritePort() for _ in range(nports)]
        else:
            streams = [_SequentialStream(list(cores), xfer, self.line)]
            self._write_ports = [_WritePort()]
        self._read_ports = [_ReadPort(s) for s in streams]

    # -- address derivation ------------------------------------------------

    def _addresses(self, core, offset):
        """System-absolute (read_addr, write_addr) for one line."""
        pim_addr = self.sys.dram_bytes + pim_core_line_addr(
            core, self.desc.pim_heap_base + offset, self.pim_fn)
        dram_addr = self._core_src[core] + offset
        if self.desc.direction == DRAM_TO_PIM:
            return dram_addr, pim_addr
        return pim_addr, dram_addr

    def _write_port_for(self, core, dst_addr):
        if not self.use_pim_ms:
            return self._write_ports[0]
        if self.desc.direction == DRAM_TO_PIM:
            ch = core // self.sys.pim_geometry.banks_per_channel
        else:
            ch = self.sys.route(dst_addr)[1].channel
        return self._write_ports[ch]

    # -- pipeline steps -----------------------------------------------------

    def _on_read_done(self, tag, cycle):
        core, offset, src_addr, dst_addr = tag
        self.bytes_read += self.line
        if self.sys.track_data:
            data = transpose_line(self.sys.read_line(src_addr))
        else:
            data = None
        # Transposed on the fly: the 1-cycle DCE transpose latency is below
        # one DRAM clock, so the line is writable from the next step on.
        port = self._write_port_for(core, dst_addr)
        port.pending.append((dst_addr, data))
        if cycle + 1 < self.wake:
            self.wake = cycle + 1

    def _on_write_done(self, tag, cycle):
        dst_addr, data = tag
        self.bytes_written += self.line
        self.lines_written += 1
        self._wave_written += 1
        if data is not None:
            self.sys.write_line(dst_addr, data)
        if self.lines_written == self.total_lines:
            self.done = True
            self.completion_cycle = cycle
            self.wake = NEVER
        elif self._wave_written == self._wave_lines:
            self._start_wave(self._wave_idx + 1)
            self.wake = cycle + 1
        elif cycle + 1 < self.wake:
            self.wake = cycle + 1

    def notify_space(self, ctrl, now):
        if now + 1 < self.wake:
            self.wake = now + 1

    def step(self, now):
        sys = self.sys
        avail = sys.cpu_cycles_before(now + 1)
        budget_exhausted = False

        for port in self._write_ports:
            pending = port.pending
            blocked = False
            # A port issues one request per DCE cycle; a stalled port spins
            # (it does not bank unused cycles).
            while pending and port.next_op_cpu < avail:
                dst_addr, data = pending[0]
                region, coord = sys.route(dst_addr)
                ctrl = sys.controller_for(region, coord.channel)
                if not ctrl.enqueue(True, coord, now, tag=(dst_addr, data),
                                    callback=self._on_write_done):
                    port.next_op_cpu = avail
                    ctrl.space_waiters.append(self)
                    blocked = True
                    break
                pending.popleft()
                self.buffer_occupancy -= 1
                port.next_op_cpu += 1
            if pending and not blocked:
                budget_exhausted = True

        for port in self._read_ports:
            stream = port.stream
            blocked = False
            while port.next_op_cpu < avail:
                nxt = stream.peek()
                if nxt is None:
                    break
                if self.buffer_occupancy >= self.buffer_capacity:
                    port.next_op_cpu = avail
                    blocked = True
                    break
                core, offset = nxt
                src_addr, dst_addr = self._addresses(core, offset)
                region, coord = sys.route(src_addr)
                ctrl = sys.controller_for(region, coord.channel)
                if not ctrl.enqueue(False, coord, now,
                                    tag=(core, offset, src_addr, dst_addr),
                                    callback=self._on_read_done):
                    port.next_op_cpu = avail
                    ctrl.space_waiters.append(self)
                    blocked = True
                    break
                stream.advance()
                if self.emissions is not None:
                    self.emissions.append((core, offset))
                self.buffer_occupancy += 1
                if self.buffer_occupancy > self.max_buffer_occupancy:
                    self.max_buffer_occupancy = self.buffer_occupancy
                port.next_op_cpu += 1
            if stream.peek() is not None and not blocked:
                budget_exhausted = True

        if self.done:
            self.wake = NEVER
        elif budget_exhausted:
            self.wake = now + 1
        else:
            self.wake = NEVER  # woken by completions or freed queue space
