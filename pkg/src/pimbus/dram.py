"""DDR4 bank state and a per-channel FR-FCFS memory controller.

One ChannelController owns one channel: independent 64-entry read and
write queues, open-page policy, and first-ready first-come-first-served
selection (row hits first, oldest first; PRE/ACT generated as
prerequisites).  Writes are serviced when the write queue passes a
high-water mark or when no reads are pending, draining down to a
low-water mark.

The controller is advanced by an external driver calling
``process_completions(now)`` and ``tick(now)``; it reports the next
cycle it could possibly act at via ``wake`` so the driver can skip idle
cycles.  At most one command is issued per channel per cycle.
"""

import heapq

from pimbus.addrmap import DramCoord, GeometryConfig
from pimbus.checker import ACT, PRE, RD, WR, Command, TraceChecker
from pimbus.errors import TimingViolationError
from pimbus.timing import TimingParams

NEVER = 1 << 62
_PAST = -(1 << 30)


class MemRequest:
    """One line-sized read or write, tracked from enqueue to data end."""

    __slots__ = ("is_write", "coord", "nbytes", "tag", "callback", "enqueue_cycle", "seq")

    def __init__(self, is_write, coord, nbytes, tag, callback, enqueue_cycle, seq):
        self.is_write = is_write
        self.coord = coord
        self.nbytes = nbytes
        self.tag = tag
        self.callback = callback
        self.enqueue_cycle = enqueue_cycle
        self.seq = seq


class BankState:
    __slots__ = ("open_row", "last_act", "last_pre", "last_rd", "last_wr",
                 "rq", "wq", "row_need", "writes_inflight")

    def __init__(self):
        self.open_row = None
        self.last_act = _PAST
        self.last_pre = _PAST
        self.last_rd = _PAST
        self.last_wr = _PAST
        self.rq = []            # queued reads, oldest first
        self.wq = []            # queued writes, oldest first
        self.row_need = {}      # row -> queued requests wanting it (both queues)
        self.writes_inflight = 0


class ControllerStats:
    __slots__ = ("acts", "pres", "reads", "writes", "bytes_read", "bytes_written",
                 "bin_cycles", "bins", "last_data_cycle")

    def __init__(self, bin_cycles):
        self.acts = 0
        self.pres = 0
        self.reads = 0
        self.writes = 0
        self.bytes_read = 0
        self.bytes_written = 0
        self.bin_cycles = bin_cycles
        self.bins = []          # data bytes whose burst completed in each bin
        self.last_data_cycle = 0

    def record_data(self, cycle, nbytes, is_write):
        if is_write:
            self.bytes_written += nbytes
            self.writes += 1
        else:
            self.bytes_read += nbytes
            self.reads += 1
        idx = cycle // self.bin_cycles
        bins = self.bins
        if idx >= len(bins):
            bins.extend([0] * (idx + 1 - len(bins)))
        bins[idx] += nbytes
        if cycle > self.last_data_cycle:
            self.last_data_cycle = cycle


class ChannelController:
    def __init__(self, region, channel, geometry: GeometryConfig,
                 timing: TimingParams, read_depth=64, write_depth=64,
                 drain_high=48, drain_low=16, bin_cycles=8192,
                 checker: TraceChecker = None, trace=None,
                 write_bank_monitor=None):
        self.region = region
        self.channel = channel
        self.geometry = geometry
        self.timing = timing
        self.read_depth = read_depth
        self.write_depth = write_depth
        self.drain_high = min(drain_high, write_depth)
        self.drain_low = min(drain_low, drain_high - 1) if drain_high > 1 else 0
        self.checker = checker
        self.trace = trace      # list-like sink of Command, or None
        self.write_bank_monitor = write_bank_monitor
        self.stats = ControllerStats(bin_cycles)

        g = geometry
        self._bgs = g.bankgroups_per_rank
        self._bks = g.banks_per_bankgroup
        self._line = g.line_bytes
        nbanks = g.banks_per_channel
        self._banks = [BankState() for _ in range(nbanks)]
        nranks = g.ranks_per_channel
        self._rank_act4 = [[] for _ in range(nranks)]           # up to 4 recent ACTs
        self._rank_last_act = [_PAST] * nranks
        self._rank_bg_last_act = [_PAST] * (nranks * self._bgs)
        self._rank_last_rd = [_PAST] * nranks
        self._rank_bg_last_rd = [_PAST] * (nranks * self._bgs)
        self._rank_last_wr = [_PAST] * nranks
        self._rank_bg_last_wr = [_PAST] * (nranks * self._bgs)
        self._bus_end = _PAST   # cycle the current data burst finishes
        self._bus_is_write = False
        self._bus_rank = -1

        self.read_count = 0
        self.write_count = 0
        self._draining = False
        self._banks_with_reads = {}
        self._banks_with_writes = {}
        self._completions = []  # heap of (data_end_cycle, seq, req)
        self._seq = 0
        self._next_refresh = timing.tREFI if timing.refresh_enabled else NEVER
        self.wake = NEVER
        self.space_waiters = []

    # -- occupancy ----------------------------------------------------

    def has_space(self, is_write: bool) -> bool:
        if is_write:
            return self.write_count < self.write_depth
        return self.read_count < self.read_depth

    @property
    def idle(self) -> bool:
        return (self.read_count == 0 and self.write_count == 0
                and not self._completions)

    def enqueue(self, is_write, coord: DramCoord, now, tag=None, callback=None,
                nbytes=None) -> bool:
        """Append a request; False signals queue-full backpressure."""
        if coord.channel != self.channel:
            raise ValueError(
                f"request for channel {coord.channel} sent to controller {self.channel}")
        if not self.has_space(is_write):
            return False
        nbytes = self._line if nbytes is None else nbytes
        req = MemRequest(is_write, coord, nbytes, tag, callback, now, self._seq)
        self._seq += 1
        bi = (coord.rank * self._bgs + coord.bankgroup) * self._bks + coord.bank
        bank = self._banks[bi]
        if is_write:
            self.write_count += 1
            bank.wq.append(req)
            self._banks_with_writes[bi] = None
            if self.write_bank_monitor is not None:
                bank.writes_inflight += 1
                if bank.writes_inflight == 1:
                    self.write_bank_monitor.bank_active()
        else:
            self.read_count += 1
            bank.rq.append(req)
            self._banks_with_reads[bi] = None
        bank.row_need[coord.row] = bank.row_need.get(coord.row, 0) + 1
        if now < self.wake:
            self.wake = now
        return True

    # -- completions ---------------------------------------------------

    def process_completions(self, now):
        comps = self._completions
        while comps and comps[0][0] <= now:
            cycle, _, req = heapq.heappop(comps)
            self.stats.record_data(cycle, req.nbytes, req.is_write)
            if req.is_write and self.write_bank_monitor is not None:
                c = req.coord
                bi = (c.rank * self._bgs + c.bankgroup) * self._bks + c.bank
                bank = self._banks[bi]
                bank.writes_inflight -= 1
                if bank.writes_inflight == 0:
                    self.write_bank_monitor.bank_inactive()
            if req.callback is not None:
                req.callback(req.tag, cycle)

    # -- earliest-issue arithmetic --------------------------------------

    def _earliest_col(self, bank, rank, bg, is_write):
        t = self.timing
        rb = rank * self._bgs + bg
        if is_write:
            ready = bank.last_act + t.tRCD
            v = self._rank_bg_last_wr[rb] + t.tCCD_L
            if v > ready:
                ready = v
            v = self._rank_last_wr[rank] + t.tCCD_S
            if v > ready:
                ready = v
            lat = t.CWL
            same_dir = self._bus_is_write
        else:
            ready = bank.last_act + t.tRCD
            v = self._rank_bg_last_rd[rb] + t.tCCD_L
            if v > ready:
                ready = v
            v = self._rank_last_rd[rank] + t.tCCD_S
            if v > ready:
                ready = v
            v = self._rank_bg_last_wr[rb] + t.wr_to_rd_same_bg
            if v > ready:
                ready = v
            v = self._rank_last_wr[rank] + t.wr_to_rd_diff_bg
            if v > ready:
                ready = v
            lat = t.CL
            same_dir = not self._bus_is_write
        gap = 0 if (same_dir and self._bus_rank == rank) else 2
        v = self._bus_end + gap - lat
        if v > ready:
            ready = v
        return ready

    def _earliest_act(self, bank, rank, bg):
        t = self.timing
        ready = bank.last_pre + t.tRP
        v = bank.last_act + t.tRC
        if v > ready:
            ready = v
        v = self._rank_bg_last_act[rank * self._bgs + bg] + t.tRRD_L
        if v > ready:
            ready = v
        v = self._rank_last_act[rank] + t.tRRD_S
        if v > ready:
            ready = v
        act4 = self._rank_act4[rank]
        if len(act4) == 4:
            v = act4[0] + t.tFAW
            if v > ready:
                ready = v
        return ready

    def _earliest_pre(self, bank):
        t = self.timing
        ready = bank.last_act + t.tRAS
        v = bank.last_rd + t.tRTP
        if v > ready:
            ready = v
        v = bank.last_wr + t.wr_to_pre
        if v > ready:
            ready = v
        return ready

    # -- command issue ---------------------------------------------------

    def _record(self, now, kind, coord):
        if self.trace is not None or self.checker is not None:
            cmd = Command(now, kind, self.channel, coord.rank, coord.bankgroup,
                          coord.bank, coord.row, coord.column)
            if self.trace is not None:
                self.trace.append(cmd)
            if self.checker is not None:
                violation = self.checker.observe(cmd)
                if violation is not None:
                    raise TimingViolationError(violation)

    def _issue_col(self, now, bank, bi, req, qidx):
        t = self.timing
        coord = req.coord
        rank = coord.rank
        rb = rank * self._bgs + coord.bankgroup
        if req.is_write:
            bank.wq.pop(qidx)
            self.write_count -= 1
            if not bank.wq:
                del self._banks_with_writes[bi]
            bank.last_wr = now
            self._rank_bg_last_wr[rb] = now
            self._rank_last_wr[rank] = now
            self._bus_is_write = True
            lat = t.CWL
            kind = WR
        else:
            bank.rq.pop(qidx)
            self.read_count -= 1
            if not bank.rq:
                del self._banks_with_reads[bi]
            bank.last_rd = now
            self._rank_bg_last_rd[rb] = now
            self._rank_last_rd[rank] = now
            self._bus_is_write = False
            lat = t.CL
            kind = RD
        need = bank.row_need[coord.row] - 1
        if need:
            bank.row_need[coord.row] = need
        else:
            del bank.row_need[coord.row]
        self._bus_rank = rank
        self._bus_end = now + lat + t.burst_cycles
        heapq.heappush(self._completions, (self._bus_end, req.seq, req))
        self._record(now, kind, coord)
        if self.space_waiters:
            waiters, self.space_waiters = self.space_waiters, []
            for waiter in waiters:
                waiter.notify_space(self, now)

    def _issue_act(self, now, bank, coord):
        rank = coord.rank
        bank.open_row = coord.row
        bank.last_act = now
        act4 = self._rank_act4[rank]
        act4.append(now)
        if len(act4) > 4:
            act4.pop(0)
        self._rank_bg_last_act[rank * self._bgs + coord.bankgroup] = now
        self._rank_last_act[rank] = now
        self.stats.acts += 1
        self._record(now, ACT, coord)

    def _issue_pre(self, now, bank, coord):
        closed = coord._replace(row=bank.open_row)
        bank.open_row = None
        bank.last_pre = now
        self.stats.pres += 1
        self._record(now, PRE, closed)

    # -- scheduling -------------------------------------------------------

    def _scan(self, now, want_writes, collect_hint):
        """FR-FCFS scan of one queue set.

        Returns (col, act, pre, hint): each candidate is
        (seq, bank_index, bank, req_or_row, qidx) picked oldest-first;
        hint is the earliest future cycle anything scanned becomes ready.
        """
        bank_map = self._banks_with_writes if want_writes else self._banks_with_reads
        banks = self._banks
        bgs = self._bgs
        bks = self._bks
        col = act = pre = None
        hint = NEVER
        for bi in bank_map:
            bank = banks[bi]
            q = bank.wq if want_writes else bank.rq
            open_row = bank.open_row
            if open_row is not None:
                hit = None
                for qidx, req in enumerate(q):
                    if req.coord.row == open_row:
                        hit = (req, qidx)
                        break
                if hit is not None:
                    req, qidx = hit
                    rank = bi // (bgs * bks)
                    bg = (bi // bks) % bgs
                    ready = self._earliest_col(bank, rank, bg, want_writes)
                    if ready <= now:
                        if col is None or req.seq < col[0]:
                            col = (req.seq, bi, bank, req, qidx)
                    elif collect_hint and ready < hint:
                        hint = ready
                    continue
                # Conflict: close the row, unless some queued request
                # (either queue) still wants it.
                if bank.row_need.get(open_row, 0) == 0:
                    ready = self._earliest_pre(bank)
                    head = q[0]
                    if ready <= now:
                        if pre is None or head.seq < pre[0]:
                            pre = (head.seq, bi, bank, head, 0)
                    elif collect_hint and ready < hint:
                        hint = ready
            else:
                head = q[0]
                rank = bi // (bgs * bks)
                bg = (bi // bks) % bgs
                ready = self._earliest_act(bank, rank, bg)
                if ready <= now:
                    if act is None or head.seq < act[0]:
                        act = (head.seq, bi, bank, head, 0)
                elif collect_hint and ready < hint:
                    hint = ready
        return col, act, pre, hint

    def tick(self, now):
        """Issue at most one command; update ``wake``."""
        if now >= self._next_refresh:
            issued, blocked, hint = self._refresh_step(now)
            if blocked:
                if issued:
                    self.wake = now + 1
                else:
                    self.wake = hint if hint > now else now + 1
                return issued
        if self.read_count == 0 and self.write_count == 0:
            self.wake = self._completions[0][0] if self._completions else NEVER
            return False

        if self.write_count >= self.drain_high:
            self._draining = True
        elif self._draining and self.write_count <= self.drain_low:
            self._draining = False
        want_writes = (self._draining or self.read_count == 0) and self.write_count > 0
        if self.write_count == 0:
            want_writes = False

        col, act, pre, hint = self._scan(now, want_writes, True)
        issued = True
        if col is not None:
            _, bi, bank, req, qidx = col
            self._issue_col(now, bank, bi, req, qidx)
        elif act is not None:
            _, _, bank, head, _ = act
            self._issue_act(now, bank, head.coord)
        elif pre is not None:
            _, _, bank, head, _ = pre
            self._issue_pre(now, bank, head.coord)
        else:
            # Work conservation: the active queue is stalled, so serve a
            # ready row hit from the other queue if one exists.
            other = not want_writes
            if (self.write_count if other else self.read_count) > 0:
                ocol, _, _, ohint = self._scan(now, other, True)
                if ocol is not None:
                    _, bi, bank, req, qidx = ocol
                    self._issue_col(now, bank, bi, req, qidx)
                else:
                    if ohint < hint:
                        hint = ohint
                    issued = False
            else:
                issued = False

        if issued:
            self.wake = now + 1
        else:
            if self._completions and self._completions[0][0] < hint:
                hint = self._completions[0][0]
            if self._next_refresh < hint:
                hint = self._next_refresh
            self.wake = hint if hint > now else now + 1
        return issued

    def _refresh_step(self, now):
        """All-bank refresh: close everything, then hold the banks for tRFC.

        Modeled without a distinct command: open banks are precharged
        through the normal PRE path on the cycles they become eligible;
        once everything is closed the next activate is pushed out by
        tRFC.  Returns (issued, still_blocked, wake_hint).
        """
        t = self.timing
        hint = NEVER
        any_open = False
        for bi, bank in enumerate(self._banks):
            if bank.open_row is not None:
                any_open = True
                ready = self._earliest_pre(bank)
                if ready <= now:
                    rank = bi // (self._bgs * self._bks)
                    bg = (bi // self._bks) % self._bgs
                    coord = DramCoord(self.channel, rank, bg,
                                      bi % self._bks, bank.open_row, 0, 0)
                    self._issue_pre(now, bank, coord)
                    return True, True, now + 1
                if ready < hint:
                    hint = ready
        if any_open:
            return False, True, hint
        floor = now + t.tRFC - t.tRP
        for bank in self._banks:
            if bank.last_pre < floor:
                bank.last_pre = floor
        self._next_refresh += t.tREFI
        return False, False, NEVER
