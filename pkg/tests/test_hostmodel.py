import random

import pytest

from pimbus.addrmap import GeometryConfig, Region
from pimbus.checker import RD, WR
from pimbus.dce import DRAM_TO_PIM, PIM_TO_DRAM, TransferDescriptor
from pimbus.errors import ConfigError
from pimbus.hostmodel import (HostAgent, HostParams, OsScheduler,
                              SoftwareThread, baseline_transfer,
                              default_memcpy_dst, memcpy_workload)
from pimbus.system import MemorySystem, run_loop
from pimbus.timing import TimingParams

SMALL = GeometryConfig(channels=2, ranks_per_channel=2, bankgroups_per_rank=2,
                       banks_per_bankgroup=2, rows_per_bank=64,
                       columns_per_row=16, line_bytes=64)


def small_system(**kw):
    kw.setdefault("keep_trace", True)
    return MemorySystem(SMALL, SMALL, TimingParams(), **kw)


def make_descriptor(cores, xfer):
    return TransferDescriptor(
        direction=DRAM_TO_PIM, xfer_per_bank=xfer,
        src_bases=tuple(i * xfer for i in range(len(cores))),
        dst_pim_ids=tuple(cores))


# -- scheduler ---------------------------------------------------------------

def endless_threads(n):
    return [SoftwareThread(0, 0, 64, 1 << 30, 0) for _ in range(n)]


def test_quantum_waves_cover_all_threads():
    # 512 threads on 8 cores, every thread outlasting its quantum: it
    # takes exactly ceil(512/8) quantum waves to schedule everyone once.
    threads = endless_threads(512)
    sched = OsScheduler(threads, cores=8, quantum_cycles=1000)
    seen = set()
    cpu = 0
    sched.maybe_rotate(cpu)
    seen.update(id(t) for t in sched.active)
    while len(seen) < 512:
        cpu += 1000
        sched.maybe_rotate(cpu)
        seen.update(id(t) for t in sched.active)
    assert sched.epochs == 512 // 8
    # Strict round-robin: after one full rotation the first threads return.
    cpu += 1000
    sched.maybe_rotate(cpu)
    assert sched.active == threads[:8]


def test_rotation_skipped_when_no_waiters():
    threads = endless_threads(4)
    sched = OsScheduler(threads, cores=8, quantum_cycles=100)
    sched.maybe_rotate(0)
    sched.maybe_rotate(250)
    assert sched.epochs == 1 and sched.active == threads


def test_finish_activates_next_immediately():
    threads = endless_threads(3)
    sched = OsScheduler(threads, cores=2, quantum_cycles=1000)
    sched.maybe_rotate(0)
    threads[0].finished = True
    sched.retire_finished(10)
    assert sched.active == [threads[1], threads[2]]
    assert threads[0].active_cpu == 10


# -- baseline transfer ---------------------------------------------------------

def test_single_thread_serial_read_then_write():
    system = small_system()
    desc = make_descriptor([0], 512)
    agent = baseline_transfer(desc, system)
    run_loop(system, [agent])
    assert agent.done
    assert agent.bytes_read == agent.bytes_written == 512
    t = system.dram_timing
    first_rd = min(c.cycle for c in system.traces[Region.DRAM] if c.kind == RD)
    first_wr = min(c.cycle for c in system.traces[Region.PIM] if c.kind == WR)
    # Each write depends on its read's data.
    assert first_wr >= first_rd + t.CL + t.burst_cycles


def test_at_most_cores_destination_banks_active():
    system = small_system()
    desc = make_descriptor(list(range(16)), 1024)
    agent = baseline_transfer(desc, system, HostParams(cores=8))
    run_loop(system, [agent])
    assert agent.done
    assert 1 <= system.write_bank_monitor.max_active <= 8


def test_descriptor_order_concentrates_on_one_channel():
    # All eight active threads target channel-0 cores, so channel 1 idles
    # while channel 0 takes every write.
    system = small_system()
    desc = make_descriptor(list(range(8)), 512)  # cores 0..7 all in channel 0
    agent = baseline_transfer(desc, system, HostParams(cores=8))
    run_loop(system, [agent])
    ch0, ch1 = system.pim_controllers
    assert ch0.stats.bytes_written == desc.total_bytes
    assert ch1.stats.bytes_written == 0


def test_transfer_data_integrity_via_host_path():
    system = small_system()
    rng = random.Random(4)
    desc = make_descriptor([1, 9], 256)
    for base, core in zip(desc.src_bases, desc.dst_pim_ids):
        system.fill(base, bytes(rng.randrange(256) for _ in range(256)))
    agent = baseline_transfer(desc, system)
    run_loop(system, [agent])
    from pimbus.dce import transpose_buffer
    for base, core in zip(desc.src_bases, desc.dst_pim_ids):
        src = system.dump(base, 256)
        dst = system.dump(system.dram_bytes + core * SMALL.bank_span_bytes, 256)
        assert dst == transpose_buffer(src)


def test_fairness_within_one_quantum():
    system = MemorySystem(SMALL, SMALL, TimingParams())
    desc = make_descriptor(list(range(16)), 2048)
    params = HostParams(cores=8, quantum_ms=2e-4)  # 640 CPU cycles
    agent = baseline_transfer(desc, system, params)
    final = run_loop(system, [agent])
    agent.active_core_cycles(final)
    actives = [t.active_cpu for t in agent.threads]
    quantum = params.quantum_cycles(system.cpu_mhz)
    assert max(actives) - min(actives) <= quantum * 1.25


# -- memcpy -------------------------------------------------------------------

def test_memcpy_mlp_balances_channels():
    system = MemorySystem(SMALL, SMALL, TimingParams(), dram_mapping="mlp_centric")
    agent = memcpy_workload(128 * 1024, 8, system)
    run_loop(system, [agent])
    per_channel = [c.stats.bytes_read + c.stats.bytes_written
                   for c in system.dram_controllers]
    assert sum(per_channel) == 2 * 128 * 1024
    assert max(per_channel) / min(per_channel) <= 1.05


def test_memcpy_locality_serializes_on_one_channel():
    system = MemorySystem(SMALL, SMALL, TimingParams(),
                          dram_mapping="locality_centric")
    agent = memcpy_workload(128 * 1024, 8, system)
    run_loop(system, [agent])
    per_channel = [c.stats.bytes_read + c.stats.bytes_written
                   for c in system.dram_controllers]
    assert max(per_channel) / sum(per_channel) >= 0.95


def test_memcpy_zero_bytes_empty_run():
    system = small_system()
    agent = memcpy_workload(0, 8, system)
    cycles = run_loop(system, [agent])
    assert agent.done and cycles == 0
    assert agent.bytes_read == agent.bytes_written == 0


def test_memcpy_rejects_overlap():
    system = small_system()
    with pytest.raises(ConfigError, match="overlap"):
        memcpy_workload(64 * 1024, 8, system, src_base=0, dst_base=4096)


def test_memcpy_integrity():
    system = small_system()
    rng = random.Random(12)
    img = bytes(rng.randrange(256) for _ in range(8192))
    system.fill(0, img)
    dst = default_memcpy_dst(SMALL, 0, len(img))
    agent = memcpy_workload(len(img), 4, system)
    run_loop(system, [agent])
    # memcpy is a plain copy: no transpose on the software path.
    assert system.dump(dst, len(img)) == img


def test_memcpy_copies_data_plain():
    # Threads partition lines round-robin; all lines land once.
    system = small_system()
    agent = memcpy_workload(64 * 128, 3, system)
    run_loop(system, [agent])
    assert agent.bytes_read == agent.bytes_written == 64 * 128
