"""Baseline software transfer path: CPU threads issuing wide 64 B
non-cacheable accesses, time-sliced by a round-robin OS scheduler.

Each simulated thread streams dependent read->write line copies with a
fixed issue gap and a bounded in-flight budget (MSHR-like).  For
DRAM<->PIM transfers the per-line transpose is folded into the write's
issue gap as a fixed CPU cost.  Thread-to-core assignment follows
descriptor order; the OS schedules whichever threads are next, unaware
of where their traffic lands, which is what concentrates writes on a
few PIM banks at a time.

The same machinery drives the DRAM->DRAM memcpy microbenchmark, with
threads owning line-interleaved slices of the copied region and no
transpose cost.
"""

from collections import deque
from dataclasses import dataclass

from pimbus.dce import (DRAM_TO_PIM, PIM_TO_DRAM, TransferDescriptor,
                        pim_core_line_addr, transpose_line)
from pimbus.dram import NEVER
from pimbus.errors import ConfigError
from pimbus.system import MemorySystem


@dataclass(frozen=True)
class HostParams:
    cores: int = 8
    quantum_ms: float = 1.5
    issue_gap_cycles: int = 4          # CPU cycles between issues of one thread
    mshrs_per_thread: int = 64
    transpose_cycles: int = 8          # extra CPU cycles per 64 B written

    def quantum_cycles(self, cpu_mhz: int) -> int:
        return max(1, int(self.quantum_ms * 1e-3 * cpu_mhz * 1e6))


class SoftwareThread:
    """One data-transfer thread: n_lines dependent read->write copies."""

    __slots__ = ("read_base", "write_base", "stride", "n_lines", "transpose",
                 "transform", "reads_issued", "writes_issued", "writes_done",
                 "inflight", "pending", "next_issue_cpu", "finished", "active",
                 "active_since", "active_cpu", "target_core")

    def __init__(self, read_base, write_base, stride, n_lines, transpose,
                 target_core=None, transform=None):
        self.read_base = read_base
        self.write_base = write_base
        self.stride = stride
        self.n_lines = n_lines
        self.transpose = transpose
        self.transform = transform      # per-line data preprocessing, or None
        self.target_core = target_core
        self.reads_issued = 0
        self.writes_issued = 0
        self.writes_done = 0
        self.inflight = 0
        self.pending = deque()          # (line_idx, ready_cpu) transposed lines
        self.next_issue_cpu = 0
        self.finished = n_lines == 0
        self.active = False
        self.active_since = 0
        self.active_cpu = 0


class OsScheduler:
    """Strict round-robin over software threads, `cores` active at a time."""

    def __init__(self, threads, cores, quantum_cycles):
        self.cores = cores
        self.quantum = quantum_cycles
        self.run_queue = deque(t for t in threads if not t.finished)
        self.active = []
        self.epoch_end = None
        self.epochs = 0
        self.unfinished = len(self.run_queue)

    @property
    def all_finished(self):
        return self.unfinished == 0

    def _activate_from_queue(self, cpu_now):
        while len(self.active) < self.cores and self.run_queue:
            t = self.run_queue.popleft()
            t.active = True
            t.active_since = cpu_now
            self.active.append(t)

    def _deactivate(self, thread, cpu_now):
        thread.active = False
        thread.active_cpu += cpu_now - thread.active_since

    def maybe_rotate(self, cpu_now):
        if self.epoch_end is None:
            self._activate_from_queue(cpu_now)
            self.epoch_end = cpu_now + self.quantum
            self.epochs = 1
            return
        if cpu_now >= self.epoch_end:
            if self.run_queue:
                for t in self.active:
                    self._deactivate(t, cpu_now)
                    self.run_queue.append(t)
                self.active.clear()
                self._activate_from_queue(cpu_now)
                self.epochs += 1
            self.epoch_end = cpu_now + self.quantum

    def retire_finished(self, cpu_now):
        finished = [t for t in self.active if t.finished]
        if not finished:
            return
        for t in finished:
            self._deactivate(t, cpu_now)
            self.active.remove(t)
            self.unfinished -= 1
        self._activate_from_queue(cpu_now)

    def drain_active_time(self, cpu_now):
        for t in self.active:
            self._deactivate(t, cpu_now)
            t.active = True
            t.active_since = cpu_now


class HostAgent:
    """Engine agent running a set of software threads under the scheduler."""

    def __init__(self, system: MemorySystem, threads, params: HostParams):
        self.sys = system
        self.params = params
        self.threads = list(threads)
        self.sched = OsScheduler(self.threads, params.cores,
                                 params.quantum_cycles(system.cpu_mhz))
        self.bytes_read = 0
        self.bytes_written = 0
        self.completion_cycle = 0
        self.done = self.sched.all_finished
        self.wake = NEVER if self.done else 0
        self._line = system.dram_geometry.line_bytes

    # -- completion callbacks -------------------------------------------

    def _on_read_done(self, tag, cycle):
        thread, line_idx = tag
        thread.inflight -= 1
        self.bytes_read += self._line
        if self.sys.track_data:
            raw = self.sys.read_line(thread.read_base + line_idx * thread.stride)
            data = thread.transform(raw) if thread.transform else raw
        else:
            data = None
        ready = self.sys.cpu_cycles_before(cycle + 1)
        thread.pending.append((line_idx, ready, data))
        if thread.active and cycle + 1 < self.wake:
            self.wake = cycle + 1

    def _on_write_done(self, tag, cycle):
        thread, addr, data = tag
        thread.inflight -= 1
        thread.writes_done += 1
        self.bytes_written += self._line
        if data is not None:
            self.sys.write_line(addr, data)
        if thread.writes_done == thread.n_lines:
            thread.finished = True
            self.completion_cycle = cycle
        if cycle + 1 < self.wake:
            self.wake = cycle + 1

    def notify_space(self, ctrl, now):
        if now + 1 < self.wake:
            self.wake = now + 1

    # -- stepping ----------------------------------------------------------

    def _issue(self, thread, is_write, addr, tag, now):
        region, coord = self.sys.route(addr)
        ctrl = self.sys.controller_for(region, coord.channel)
        if not ctrl.enqueue(is_write, coord, now, tag=tag,
                            callback=self._on_write_done if is_write
                            else self._on_read_done):
            ctrl.space_waiters.append(self)
            return False
        thread.inflight += 1
        return True

    def step(self, now):
        sys = self.sys
        params = self.params
        avail = sys.cpu_cycles_before(now + 1)
        sched = self.sched
        sched.retire_finished(avail)
        sched.maybe_rotate(avail)
        if sched.all_finished:
            self.done = True
            self.wake = NEVER
            return

        mshr = params.mshrs_per_thread
        gap = params.issue_gap_cycles
        wake_cpu = NEVER
        for thread in sched.active:
            if thread.finished:
                continue
            while True:
                t_cpu = thread.next_issue_cpu
                if t_cpu >= avail:
                    if t_cpu < wake_cpu:
                        wake_cpu = t_cpu
                    break
                if thread.inflight >= mshr:
                    break  # woken by a completion
                if thread.pending:
                    line_idx, ready, data = thread.pending[0]
                    if ready <= t_cpu:
                        addr = thread.write_base + line_idx * thread.stride
                        if not self._issue(thread, True, addr,
                                           (thread, addr, data), now):
                            break
                        thread.pending.popleft()
                        thread.writes_issued += 1
                        thread.next_issue_cpu = t_cpu + gap + thread.transpose
                        continue
                    if thread.reads_issued == thread.n_lines:
                        # Only transposes left; wait for the earliest one.
                        thread.next_issue_cpu = ready
                        continue
                if thread.reads_issued < thread.n_lines:
                    idx = thread.reads_issued
                    addr = thread.read_base + idx * thread.stride
                    if not self._issue(thread, False, addr, (thread, idx), now):
                        break
                    thread.reads_issued += 1
                    thread.next_issue_cpu = t_cpu + gap
                    continue
                break  # nothing issuable: all reads done, no ready pending

        wake = NEVER
        if wake_cpu != NEVER:
            wake = sys.dram_cycle_for_cpu(wake_cpu)
        if sched.run_queue:
            boundary = sys.dram_cycle_for_cpu(sched.epoch_end)
            if boundary < wake:
                wake = boundary
        self.wake = wake if wake > now else now + 1

    # -- energy accounting ---------------------------------------------------

    def active_core_cycles(self, final_cycle):
        """Total CPU core-cycles spent active, through `final_cycle`."""
        self.sched.drain_active_time(self.sys.cpu_cycles_before(final_cycle + 1))
        return sum(t.active_cpu for t in self.threads)


# -- workload builders ---------------------------------------------------------

def baseline_transfer(descriptor: TransferDescriptor, system: MemorySystem,
                      params: HostParams = HostParams()) -> HostAgent:
    """One software thread per participating PIM core, in descriptor order."""
    descriptor.validate(system.dram_geometry, system.pim_geometry)
    line = system.pim_geometry.line_bytes
    n_lines = descriptor.xfer_per_bank // line
    transpose = params.transpose_cycles
    threads = []
    for base, core in zip(descriptor.src_bases, descriptor.dst_pim_ids):
        pim_abs = system.dram_bytes + pim_core_line_addr(
            core, descriptor.pim_heap_base, system.hetmap.pim_fn)
        if descriptor.direction == DRAM_TO_PIM:
            read_base, write_base = base, pim_abs
        else:
            read_base, write_base = pim_abs, base
        threads.append(SoftwareThread(read_base, write_base, line, n_lines,
                                      transpose, target_core=core,
                                      transform=transpose_line))
    return HostAgent(system, threads, params)


def memcpy_workload(nbytes: int, threads: int, system: MemorySystem,
                    params: HostParams = HostParams(), src_base: int = 0,
                    dst_base: int = None) -> HostAgent:
    """Multi-threaded DRAM->DRAM copy; threads own line-interleaved slices."""
    line = system.dram_geometry.line_bytes
    if dst_base is None:
        dst_base = default_memcpy_dst(system.dram_geometry, src_base, nbytes)
    errors = []
    if nbytes < 0 or nbytes % line:
        errors.append(f"bytes: must be a non-negative multiple of {line}")
    if threads < 1:
        errors.append("threads: need at least one")
    cap = system.dram_bytes
    for name, base in (("src_base", src_base), ("dst_base", dst_base)):
        if base % line:
            errors.append(f"{name}: {base:#x} not line-aligned")
        elif not 0 <= base <= cap - nbytes:
            errors.append(f"{name}: region exceeds DRAM capacity")
    if not errors and not (src_base + nbytes <= dst_base
                           or dst_base + nbytes <= src_base):
        errors.append("dst_base: source and destination regions overlap")
    if errors:
        raise ConfigError(errors)

    n_lines = nbytes // line
    jobs = []
    for t in range(threads):
        count = (n_lines - t + threads - 1) // threads
        if count > 0:
            jobs.append(SoftwareThread(src_base + t * line, dst_base + t * line,
                                       threads * line, count, 0))
    return HostAgent(system, jobs, params)


def default_memcpy_dst(geometry, src_base: int, nbytes: int) -> int:
    """Destination one bank group over from the source (under the
    locality-centric layout), so the copy measures channel serialization
    rather than same-bank row thrash."""
    return src_base + geometry.banks_per_bankgroup * geometry.bank_span_bytes
