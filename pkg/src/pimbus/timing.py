"""DDR4 timing parameters.

All values except tCK are in DRAM clock cycles.  The defaults model a
DDR4-2400R part; they are an editable config block, and nothing in the
acceptance suite depends on the absolute values, only on their ratios.
"""

from dataclasses import dataclass, field


@dataclass(frozen=True)
class TimingParams:
    tCK: float = 1000.0 / 1200.0   # ns per DRAM clock (1.2 GHz)
    CL: int = 17
    CWL: int = 12
    tRCD: int = 17
    tRP: int = 17
    tRAS: int = 39
    tRC: int = 56
    tCCD_S: int = 4
    tCCD_L: int = 6
    tRRD_S: int = 4
    tRRD_L: int = 6
    tFAW: int = 26
    tWR: int = 18
    tWTR_S: int = 3
    tWTR_L: int = 9
    tRTP: int = 9
    burst_length: int = 8
    # Refresh is off by default: the simulated transfer windows are short
    # and refresh only adds noise to the phenomena being measured.
    refresh_enabled: bool = False
    tREFI: int = 9360
    tRFC: int = 420

    def __post_init__(self):
        ints = {k: v for k, v in self.__dict__.items()
                if k not in ("tCK", "refresh_enabled")}
        for name, value in ints.items():
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"timing.{name} must be a positive integer, got {value!r}")
        if self.tCK <= 0:
            raise ValueError(f"timing.tCK must be positive, got {self.tCK!r}")
        if self.tRC != self.tRAS + self.tRP:
            raise ValueError(
                f"timing.tRC ({self.tRC}) must equal tRAS + tRP ({self.tRAS + self.tRP})")
        if not (self.tCCD_L >= self.tCCD_S >= self.burst_length // 2):
            raise ValueError(
                f"need tCCD_L >= tCCD_S >= burst_length/2, got "
                f"{self.tCCD_L} / {self.tCCD_S} / {self.burst_length // 2}")

    # -- derived command gaps (cycles) ---------------------------------

    @property
    def burst_cycles(self) -> int:
        return self.burst_length // 2

    @property
    def wr_to_pre(self) -> int:
        return self.CWL + self.burst_cycles + self.tWR

    @property
    def wr_to_rd_same_bg(self) -> int:
        return self.CWL + self.burst_cycles + self.tWTR_L

    @property
    def wr_to_rd_diff_bg(self) -> int:
        return self.CWL + self.burst_cycles + self.tWTR_S

    def data_start(self, is_write: bool, issue_cycle: int) -> int:
        return issue_cycle + (self.CWL if is_write else self.CL)


DDR4_2400 = TimingParams()
