"""DDR protocol-conformance checking for command traces.

The checker replays a cycle-ordered command stream against every
pairwise constraint (tRCD, tRP, tRAS, tRC, tCCD_S/L, tRRD_S/L, tFAW,
tWTR_S/L, tWR, tRTP), plus bank-state legality (RD/WR only to the open
row) and shared-bus occupancy.  It is deliberately independent of the
controller: it keeps its own bank/rank state machines and derives every
bound from TimingParams alone.
"""

from collections import deque
from typing import List, NamedTuple, Optional

from pimbus.timing import TimingParams

ACT = "ACT"
PRE = "PRE"
RD = "RD"
WR = "WR"

COMMAND_KINDS = (ACT, PRE, RD, WR)


class Command(NamedTuple):
    cycle: int
    kind: str
    channel: int
    rank: int
    bankgroup: int
    bank: int
    row: int
    column: int


class Violation(NamedTuple):
    rule: str
    required: int
    actual: int
    first: Optional[Command]
    second: Command

    def __str__(self):
        if self.first is None:
            return f"{self.rule}: {self.second}"
        return (f"{self.rule}: need >= {self.required} cycles, got {self.actual} "
                f"between {self.first} and {self.second}")


class _BankTrack:
    __slots__ = ("open_row", "act", "pre", "rd", "wr")

    def __init__(self):
        self.open_row = None
        self.act = self.pre = self.rd = self.wr = None  # last Command of each kind


class _RankTrack:
    __slots__ = ("act4", "last_act_bg", "last_act", "last_rd_bg", "last_rd",
                 "last_wr_bg", "last_wr")

    def __init__(self):
        self.act4 = deque(maxlen=4)
        self.last_act_bg = {}
        self.last_act = None
        self.last_rd_bg = {}
        self.last_rd = None
        self.last_wr_bg = {}
        self.last_wr = None


class TraceChecker:
    """Incremental checker; feed commands in cycle order via observe()."""

    def __init__(self, params: TimingParams):
        self.params = params
        self.violation: Optional[Violation] = None
        self._banks = {}
        self._ranks = {}
        self._bus = {}          # channel -> (data_end, kind, rank, Command)
        self._last_cmd = {}     # channel -> Command (command-bus, 1/cycle)
        self._last_cycle = None

    # -- helpers --------------------------------------------------------

    def _fail(self, rule, required, prev, cmd):
        if self.violation is None:
            actual = cmd.cycle - prev.cycle if prev is not None else 0
            self.violation = Violation(rule, required, actual, prev, cmd)
        return self.violation

    def _gap_ok(self, rule, required, prev, cmd):
        if prev is not None and cmd.cycle - prev.cycle < required:
            return self._fail(rule, required, prev, cmd)
        return None

    # -- main entry -----------------------------------------------------

    def observe(self, cmd: Command) -> Optional[Violation]:
        if self.violation is not None:
            return self.violation
        if self._last_cycle is not None and cmd.cycle < self._last_cycle:
            raise ValueError(f"trace not cycle-ordered at {cmd}")
        self._last_cycle = cmd.cycle

        p = self.params
        bkey = (cmd.channel, cmd.rank, cmd.bankgroup, cmd.bank)
        rkey = (cmd.channel, cmd.rank)
        bank = self._banks.get(bkey)
        if bank is None:
            bank = self._banks[bkey] = _BankTrack()
        rank = self._ranks.get(rkey)
        if rank is None:
            rank = self._ranks[rkey] = _RankTrack()

        last = self._last_cmd.get(cmd.channel)
        if last is not None and cmd.cycle == last.cycle:
            return self._fail("cmd_bus", 1, last, cmd)
        self._last_cmd[cmd.channel] = cmd

        kind = cmd.kind
        if kind == ACT:
            v = self._observe_act(cmd, bank, rank, p)
        elif kind == PRE:
            v = self._observe_pre(cmd, bank, p)
        elif kind in (RD, WR):
            v = self._observe_col(cmd, bank, rank, p)
        else:
            raise ValueError(f"unknown command kind {kind!r} in {cmd}")
        return v

    def _observe_act(self, cmd, bank, rank, p):
        if bank.open_row is not None:
            return self._fail("act_open_bank", 0, bank.act, cmd)
        v = (self._gap_ok("tRP", p.tRP, bank.pre, cmd)
             or self._gap_ok("tRC", p.tRC, bank.act, cmd)
             or self._gap_ok("tRRD_L", p.tRRD_L, rank.last_act_bg.get(cmd.bankgroup), cmd)
             or self._gap_ok("tRRD_S", p.tRRD_S, rank.last_act, cmd))
        if v is None and len(rank.act4) == 4:
            v = self._gap_ok("tFAW", p.tFAW, rank.act4[0], cmd)
        if v is not None:
            return v
        bank.open_row = cmd.row
        bank.act = cmd
        rank.act4.append(cmd)
        rank.last_act_bg[cmd.bankgroup] = cmd
        rank.last_act = cmd
        return None

    def _observe_pre(self, cmd, bank, p):
        v = (self._gap_ok("tRAS", p.tRAS, bank.act, cmd)
             or self._gap_ok("tRTP", p.tRTP, bank.rd, cmd)
             or self._gap_ok("tWR", p.wr_to_pre, bank.wr, cmd))
        if v is not None:
            return v
        bank.open_row = None
        bank.pre = cmd
        return None

    def _observe_col(self, cmd, bank, rank, p):
        if bank.open_row != cmd.row:
            return self._fail("row_mismatch", 0, bank.act, cmd)
        v = self._gap_ok("tRCD", p.tRCD, bank.act, cmd)
        if v is not None:
            return v
        is_write = cmd.kind == WR
        if is_write:
            v = (self._gap_ok("tCCD_L", p.tCCD_L, rank.last_wr_bg.get(cmd.bankgroup), cmd)
                 or self._gap_ok("tCCD_S", p.tCCD_S, rank.last_wr, cmd))
        else:
            v = (self._gap_ok("tCCD_L", p.tCCD_L, rank.last_rd_bg.get(cmd.bankgroup), cmd)
                 or self._gap_ok("tCCD_S", p.tCCD_S, rank.last_rd, cmd)
                 or self._gap_ok("tWTR_L", p.wr_to_rd_same_bg,
                                 rank.last_wr_bg.get(cmd.bankgroup), cmd)
                 or self._gap_ok("tWTR_S", p.wr_to_rd_diff_bg, rank.last_wr, cmd))
        if v is not None:
            return v

        # Shared per-channel data bus: bursts must not overlap, with a
        # 2-cycle turnaround when the direction or the rank switches.
        start = p.data_start(is_write, cmd.cycle)
        bus = self._bus.get(cmd.channel)
        if bus is not None:
            end, prev_kind, prev_rank, prev_cmd = bus
            gap = 0 if (prev_kind == cmd.kind and prev_rank == cmd.rank) else 2
            if start < end + gap:
                return self._fail("bus_conflict", end + gap - start + (cmd.cycle - prev_cmd.cycle),
                                  prev_cmd, cmd)
        self._bus[cmd.channel] = (start + p.burst_cycles, cmd.kind, cmd.rank, cmd)
        if is_write:
            bank.wr = cmd
            rank.last_wr_bg[cmd.bankgroup] = cmd
            rank.last_wr = cmd
        else:
            bank.rd = cmd
            rank.last_rd_bg[cmd.bankgroup] = cmd
            rank.last_rd = cmd
        return None

    @property
    def ok(self) -> bool:
        return self.violation is None


def check_trace(commands, params: TimingParams) -> Optional[Violation]:
    """Validate a cycle-ordered trace; None means conformant."""
    checker = TraceChecker(params)
    for cmd in commands:
        v = checker.observe(cmd)
        if v is not None:
            return v
    return None


def format_trace_line(cmd: Command) -> str:
    return (f"{cmd.cycle} {cmd.kind} {cmd.channel} {cmd.rank} "
            f"{cmd.bankgroup} {cmd.bank} {cmd.row} {cmd.column}")


def parse_trace_line(line: str) -> Command:
    cycle, kind, ch, ra, bg, bk, row, col = line.split()
    return Command(int(cycle), kind, int(ch), int(ra), int(bg), int(bk),
                   int(row), int(col))


def load_trace(path) -> List[Command]:
    with open(path) as fh:
        return [parse_trace_line(line) for line in fh if line.strip()]
