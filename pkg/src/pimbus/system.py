"""Assembled memory system: DRAM + PIM channel controllers behind a
range-routed dual mapping, an optional byte-accurate backing store, and
the deterministic cycle loop that advances agents and controllers.

The master clock is the DRAM clock.  CPU/DCE-domain agents convert
between domains with exact integer arithmetic on the MHz ratio
(an idealized synchronizer with zero added latency).
"""

import math

from pimbus.addrmap import (GeometryConfig, HetMapConfig, MappingFunction,
                            MappingKind, Region)
from pimbus.checker import TraceChecker
from pimbus.dram import NEVER, ChannelController
from pimbus.errors import SimulationAbort
from pimbus.timing import TimingParams


class WriteBankMonitor:
    """Tracks how many distinct banks hold in-flight writes, and the peak."""

    __slots__ = ("active", "max_active")

    def __init__(self):
        self.active = 0
        self.max_active = 0

    def bank_active(self):
        self.active += 1
        if self.active > self.max_active:
            self.max_active = self.active

    def bank_inactive(self):
        self.active -= 1


class MemorySystem:
    def __init__(self, dram_geometry: GeometryConfig, pim_geometry: GeometryConfig,
                 dram_timing: TimingParams, pim_timing: TimingParams = None,
                 dram_mapping=MappingKind.MLP_CENTRIC, dram_xor_masks=None,
                 read_depth=64, write_depth=64, drain_high=48, drain_low=16,
                 bin_cycles=8192, dram_mhz=1200, cpu_mhz=3200,
                 track_data=True, timing_check=True, keep_trace=False):
        pim_timing = pim_timing or dram_timing
        self.dram_timing = dram_timing
        self.pim_timing = pim_timing
        dram_mapping = MappingKind(dram_mapping)
        if dram_mapping is MappingKind.MLP_CENTRIC:
            dram_fn = MappingFunction.mlp_centric(dram_geometry, dram_xor_masks)
        else:
            dram_fn = MappingFunction.locality_centric(dram_geometry)
        pim_fn = MappingFunction.locality_centric(pim_geometry)
        self.hetmap = HetMapConfig(dram_fn, pim_fn, dram_geometry.capacity_bytes)
        self.dram_geometry = dram_geometry
        self.pim_geometry = pim_geometry

        if cpu_mhz < dram_mhz:
            raise ValueError(f"cpu_mhz ({cpu_mhz}) must be >= dram_mhz ({dram_mhz})")
        self.dram_mhz = dram_mhz
        self.cpu_mhz = cpu_mhz
        g = math.gcd(cpu_mhz, dram_mhz)
        self._cpu_num = cpu_mhz // g
        self._cpu_den = dram_mhz // g

        self.track_data = track_data
        self.timing_check = timing_check
        self.write_bank_monitor = WriteBankMonitor()
        self.traces = {Region.DRAM: [], Region.PIM: []} if keep_trace else None

        def build(region, geometry, timing):
            ctrls = []
            for ch in range(geometry.channels):
                checker = TraceChecker(timing) if timing_check else None
                trace = self.traces[region] if keep_trace else None
                ctrls.append(ChannelController(
                    region, ch, geometry, timing, read_depth=read_depth,
                    write_depth=write_depth, drain_high=drain_high,
                    drain_low=drain_low, bin_cycles=bin_cycles, checker=checker,
                    trace=trace,
                    write_bank_monitor=(self.write_bank_monitor
                                        if region is Region.PIM else None)))
            return ctrls

        self.dram_controllers = build(Region.DRAM, dram_geometry, dram_timing)
        self.pim_controllers = build(Region.PIM, pim_geometry, pim_timing)
        self.all_controllers = self.dram_controllers + self.pim_controllers

        self._stores = {Region.DRAM: {}, Region.PIM: {}}
        self._line = dram_geometry.line_bytes
        if pim_geometry.line_bytes != dram_geometry.line_bytes:
            raise ValueError("DRAM and PIM geometries must share line_bytes")
        self._zero_line = bytes(self._line)

    # -- clock-domain conversion ----------------------------------------

    def cpu_cycles_before(self, cycle: int) -> int:
        """CPU cycles fully elapsed at the start of DRAM cycle `cycle`."""
        return (cycle * self._cpu_num) // self._cpu_den

    def dram_cycle_for_cpu(self, cpu_cycle: int) -> int:
        """First DRAM cycle whose start is at/after the given CPU cycle."""
        return -(-cpu_cycle * self._cpu_den // self._cpu_num)

    @property
    def cpu_per_dram(self) -> float:
        return self._cpu_num / self._cpu_den

    # -- routing ----------------------------------------------------------

    def controller_for(self, region: Region, channel: int) -> ChannelController:
        ctrls = self.dram_controllers if region is Region.DRAM else self.pim_controllers
        return ctrls[channel]

    def route(self, addr: int):
        return self.hetmap.route(addr)

    @property
    def dram_bytes(self) -> int:
        return self.hetmap.dram_bytes

    @property
    def total_bytes(self) -> int:
        return self.hetmap.total_bytes

    def peak_bytes_per_cycle(self, region: Region) -> float:
        timing = self.dram_timing if region is Region.DRAM else self.pim_timing
        geometry = self.dram_geometry if region is Region.DRAM else self.pim_geometry
        return geometry.channels * geometry.line_bytes / timing.burst_cycles

    def peak_gbps(self, region: Region) -> float:
        timing = self.dram_timing if region is Region.DRAM else self.pim_timing
        return self.peak_bytes_per_cycle(region) / timing.tCK

    # -- backing store (system-absolute addresses) ---------------------------

    def _store_slot(self, addr: int):
        if addr < self.hetmap.dram_bytes:
            return self._stores[Region.DRAM], addr // self._line
        return self._stores[Region.PIM], (addr - self.hetmap.dram_bytes) // self._line

    def read_line(self, addr: int) -> bytes:
        store, key = self._store_slot(addr)
        return store.get(key, self._zero_line)

    def write_line(self, addr: int, data: bytes):
        store, key = self._store_slot(addr)
        store[key] = data

    def fill(self, addr: int, data: bytes):
        """Preload a contiguous byte image (line-aligned)."""
        line = self._line
        for off in range(0, len(data), line):
            store, key = self._store_slot(addr + off)
            store[key] = bytes(data[off:off + line])

    def dump(self, addr: int, nbytes: int) -> bytes:
        line = self._line
        out = bytearray()
        for off in range(0, nbytes, line):
            store, key = self._store_slot(addr + off)
            out += store.get(key, self._zero_line)
        return bytes(out[:nbytes])


def run_loop(system: MemorySystem, agents, max_cycles=1 << 40) -> int:
    """Advance agents and controllers to completion; returns final cycle.

    Per DRAM cycle: completions retire and fire callbacks, agents issue,
    then each controller sends at most one command.  Cycles where no
    component can act are skipped using the components' wake hints.
    """
    controllers = system.all_controllers
    now = 0
    while True:
        for ctrl in controllers:
            ctrl.process_completions(now)
        for agent in agents:
            if agent.wake <= now:
                agent.step(now)
        for ctrl in controllers:
            if ctrl.wake <= now:
                ctrl.tick(now)
        if all(a.done for a in agents) and all(c.idle for c in controllers):
            return now
        nxt = NEVER
        for ctrl in controllers:
            w = ctrl.wake
            comps = ctrl._completions
            if comps and comps[0][0] < w:
                w = comps[0][0]
            if w < nxt:
                nxt = w
        for agent in agents:
            if agent.wake < nxt:
                nxt = agent.wake
        if nxt == NEVER:
            raise SimulationAbort(
                "simulation stalled: no component has a pending event")
        now = nxt if nxt > now else now + 1
        if now >= max_cycles:
            raise SimulationAbort(f"simulation exceeded {max_cycles} cycles")
