"""Demand paging: fault tracking and the system I/O bus latency model.

The bus is serialized: one transfer at a time, FIFO, each costing a fixed
per-transfer overhead plus bytes / bandwidth.  Transfer granularity is one
base page in ``demand_base`` mode or a whole large frame in
``demand_large`` mode; ``prefault`` mode moves every declared buffer before
the application starts and is charged separately, before its cycle 0.
"""

import math
from dataclasses import dataclass, field

from .errors import ConfigError, ProtectionError
from .geometry import DEFAULT_GEOMETRY, PageGeometry

PREFAULT = "prefault"
DEMAND_BASE = "demand_base"
DEMAND_LARGE = "demand_large"
PAGING_MODES = (PREFAULT, DEMAND_BASE, DEMAND_LARGE)


@dataclass
class IoBusConfig:
    overhead_cycles: int = 20000
    bytes_per_cycle: int = 16

    def validate(self):
        if self.overhead_cycles < 0:
            raise ConfigError("bus.overhead_cycles must be >= 0")
        if self.bytes_per_cycle <= 0:
            raise ConfigError("bus.bytes_per_cycle must be > 0")


class IoBus:
    """Serialized CPU->GPU transfer channel."""

    def __init__(self, config: IoBusConfig | None = None):
        self.config = config or IoBusConfig()
        self.config.validate()
        self.next_free = 0
        self.bytes_transferred = 0
        self.transfers = 0

    def latency(self, nbytes: int) -> int:
        c = self.config
        return c.overhead_cycles + math.ceil(nbytes / c.bytes_per_cycle)

    def transfer(self, now: int, nbytes: int) -> int:
        """Enqueue a transfer at ``now``; returns its completion cycle."""
        start = max(now, self.next_free)
        done = start + self.latency(nbytes)
        self.next_free = done
        self.bytes_transferred += nbytes
        self.transfers += 1
        return done


@dataclass
class AsidPagingStats:
    faults: int = 0
    bytes_over_bus: int = 0
    fault_stall_cycles: int = 0
    prefault_bytes: int = 0
    prefault_bus_cycles: int = 0


@dataclass
class Transfer:
    key: tuple                   # (asid, base-page or large-frame number)
    done: int
    nbytes: int
    waiter_keys: list = field(default_factory=list)  # MSHR keys to release


class DemandPager:
    """Page-fault detection and transfer scheduling."""

    def __init__(self, bus: IoBus, mode: str = PREFAULT,
                 geometry: PageGeometry = DEFAULT_GEOMETRY):
        if mode not in PAGING_MODES:
            raise ConfigError(f"unknown paging mode {mode!r}")
        self.bus = bus
        self.mode = mode
        self.geometry = geometry
        self.buffers = {}        # asid -> [(first_page, last_page_excl)]
        self.in_flight = {}      # key -> Transfer
        self.stats = {}          # asid -> AsidPagingStats

    def _stats(self, asid) -> AsidPagingStats:
        st = self.stats.get(asid)
        if st is None:
            st = self.stats[asid] = AsidPagingStats()
        return st

    def declare(self, asid: int, v_start: int, nbytes: int) -> None:
        g = self.geometry
        first = v_start // g.base_page_bytes
        npages = math.ceil(nbytes / g.base_page_bytes)
        self.buffers.setdefault(asid, []).append((first, first + npages))

    def declared(self, asid: int, vpage: int) -> bool:
        for lo, hi in self.buffers.get(asid, ()):
            if lo <= vpage < hi:
                return True
        return False

    def declared_pages_in_frame(self, asid: int, vframe: int):
        slots = self.geometry.slots_per_large_frame
        lo, hi = vframe * slots, (vframe + 1) * slots
        pages = set()
        for blo, bhi in self.buffers.get(asid, ()):
            pages.update(range(max(lo, blo), min(hi, bhi)))
        return sorted(pages)

    def fault(self, asid: int, vaddr: int, now: int) -> Transfer:
        """Register a fault; returns the (possibly shared) transfer."""
        g = self.geometry
        vpage = vaddr // g.base_page_bytes
        if not self.declared(asid, vpage):
            raise ProtectionError(
                f"asid {asid} faulted outside its buffers: vaddr {vaddr}")
        if self.mode == DEMAND_LARGE:
            key = (asid, vaddr // g.large_page_bytes)
            nbytes = g.large_page_bytes
        else:
            key = (asid, vpage)
            nbytes = g.base_page_bytes
        tr = self.in_flight.get(key)
        if tr is None:
            st = self._stats(asid)
            st.faults += 1
            st.bytes_over_bus += nbytes
            done = self.bus.transfer(now, nbytes)
            st.fault_stall_cycles += done - now
            tr = self.in_flight[key] = Transfer(key, done, nbytes)
        return tr

    def complete(self, key) -> Transfer:
        return self.in_flight.pop(key)

    def prefault_all(self, asid: int) -> int:
        """Charge bus cycles for moving every declared buffer up front."""
        g = self.geometry
        st = self._stats(asid)
        cycles = 0
        for lo, hi in self.buffers.get(asid, ()):
            nbytes = (hi - lo) * g.base_page_bytes
            cycles += self.bus.latency(nbytes)
            st.prefault_bytes += nbytes
        st.prefault_bus_cycles += cycles
        return cycles
