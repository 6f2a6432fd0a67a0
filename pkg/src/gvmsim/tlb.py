"""Per-core L1 TLBs and the shared L2 TLB, with MSHRs for in-flight walks.

Both levels keep separate entry arrays for base pages and large pages.
The L2 is non-inclusive and shared by all cores through a 2-port bank.
Probe order is large-before-base within a level; coalesced translations
dominate once frames are promoted, and the order does not change hit/miss
outcomes.
"""

import heapq
from collections import OrderedDict, deque
from dataclasses import dataclass, field

from .errors import ConfigError
from .geometry import DEFAULT_GEOMETRY


@dataclass
class TlbConfig:
    l1_base_entries: int = 128
    l1_large_entries: int = 16
    l2_base_entries: int = 512
    l2_base_ways: int = 16
    l2_large_entries: int = 256
    l1_latency: int = 1
    l2_latency: int = 10
    l2_ports: int = 2
    mshr_capacity: int = 64

    def validate(self):
        for name in ("l1_base_entries", "l1_large_entries",
                     "l2_base_entries", "l2_large_entries",
                     "l1_latency", "l2_latency", "l2_ports",
                     "mshr_capacity"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"tlb.{name} must be > 0")
        if self.l2_base_entries % self.l2_base_ways:
            raise ConfigError("tlb.l2_base_ways must divide l2_base_entries")


class LruArray:
    """Fully-associative LRU array.  Keys are (asid, tag)."""

    def __init__(self, entries: int):
        self.entries = entries
        self._map = OrderedDict()

    def lookup(self, key):
        v = self._map.get(key)
        if v is not None:
            self._map.move_to_end(key)
        return v

    def insert(self, key, value):
        if key in self._map:
            self._map.move_to_end(key)
            self._map[key] = value
            return
        if len(self._map) >= self.entries:
            self._map.popitem(last=False)
        self._map[key] = value

    def invalidate_where(self, pred):
        for key in [k for k in self._map if pred(k)]:
            del self._map[key]

    def __len__(self):
        return len(self._map)

    def keys(self):
        return list(self._map)


class SetAssocLru:
    """Set-associative LRU array, indexed by tag modulo the set count."""

    def __init__(self, entries: int, ways: int):
        self.sets = [OrderedDict() for _ in range(entries // ways)]
        self.ways = ways

    def _set(self, key):
        return self.sets[key[1] % len(self.sets)]

    def lookup(self, key):
        s = self._set(key)
        v = s.get(key)
        if v is not None:
            s.move_to_end(key)
        return v

    def insert(self, key, value):
        s = self._set(key)
        if key in s:
            s.move_to_end(key)
            s[key] = value
            return
        if len(s) >= self.ways:
            s.popitem(last=False)
        s[key] = value

    def invalidate_where(self, pred):
        for s in self.sets:
            for key in [k for k in s if pred(k)]:
                del s[key]

    def __len__(self):
        return sum(len(s) for s in self.sets)


class PortBank:
    """N single-cycle ports; reserve() returns the earliest start cycle."""

    def __init__(self, n_ports: int):
        self._free = [0] * n_ports

    def reserve(self, now: int) -> int:
        earliest = heapq.heappop(self._free)
        start = max(now, earliest)
        heapq.heappush(self._free, start + 1)
        return start


class MshrSet:
    """Outstanding-miss registers: one walk in flight per tag.

    Requests past capacity queue FIFO and are promoted as entries retire.
    """

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._inflight = {}          # key -> [waiters]
        self._overflow = deque()     # (key, waiter)
        self.merged = 0

    def __len__(self):
        return len(self._inflight)

    def join(self, key, waiter) -> str:
        """Returns "new" when a fresh walk must start for this key."""
        if key in self._inflight:
            self._inflight[key].append(waiter)
            self.merged += 1
            return "joined"
        if len(self._inflight) < self.capacity:
            self._inflight[key] = [waiter]
            return "new"
        self._overflow.append((key, waiter))
        return "queued"

    def release(self, key):
        """Retire one entry; returns (its waiters, keys needing new walks)."""
        waiters = self._inflight.pop(key)
        started = []
        while self._overflow:
            k, w = self._overflow[0]
            if k in self._inflight:
                self._inflight[k].append(w)
                self.merged += 1
            elif len(self._inflight) < self.capacity:
                self._inflight[k] = [w]
                started.append(k)
            else:
                break
            self._overflow.popleft()
        return waiters, started

    def waiters(self, key):
        return self._inflight.get(key)


@dataclass
class TlbLookup:
    hit: bool
    level: str                  # "L1" | "L2" | "miss"
    ready: int                  # cycle the result (or the miss) is known
    paddr: int | None = None
    size_class: str | None = None


@dataclass
class TlbStats:
    l1_hits: int = 0
    l1_misses: int = 0
    l2_hits: int = 0
    l2_misses: int = 0
    per_asid: dict = field(default_factory=dict)

    def _asid(self, asid):
        row = self.per_asid.get(asid)
        if row is None:
            row = self.per_asid[asid] = [0, 0, 0, 0]
        return row

    def count(self, asid, l1_hit, l2_hit=None):
        row = self._asid(asid)
        if l1_hit:
            self.l1_hits += 1
            row[0] += 1
            return
        self.l1_misses += 1
        row[1] += 1
        if l2_hit:
            self.l2_hits += 1
            row[2] += 1
        else:
            self.l2_misses += 1
            row[3] += 1

    def snapshot(self):
        return (self.l1_hits, self.l1_misses, self.l2_hits, self.l2_misses)


class TlbHierarchy:
    """Per-core L1s plus one shared L2, with hit/miss accounting."""

    def __init__(self, config: TlbConfig, n_cores: int,
                 geometry=DEFAULT_GEOMETRY):
        config.validate()
        self.config = config
        self.geometry = geometry
        self.n_cores = n_cores
        self.l1_base = [LruArray(config.l1_base_entries)
                        for _ in range(n_cores)]
        self.l1_large = [LruArray(config.l1_large_entries)
                         for _ in range(n_cores)]
        self.l2_base = SetAssocLru(config.l2_base_entries,
                                   config.l2_base_ways)
        self.l2_large = LruArray(config.l2_large_entries)
        self.l2_ports = PortBank(config.l2_ports)
        self.mshrs = MshrSet(config.mshr_capacity)
        self.stats = TlbStats()

    def _paddr(self, vaddr, pframe_or_ppage, size_class):
        g = self.geometry
        if size_class == "large":
            return pframe_or_ppage * g.large_page_bytes + (
                vaddr % g.large_page_bytes)
        return pframe_or_ppage * g.base_page_bytes + (
            vaddr % g.base_page_bytes)

    def lookup(self, core: int, asid: int, vaddr: int,
               now: int) -> TlbLookup:
        g = self.geometry
        vpage = vaddr // g.base_page_bytes
        vframe = vaddr // g.large_page_bytes
        t_l1 = now + self.config.l1_latency

        pframe = self.l1_large[core].lookup((asid, vframe))
        if pframe is not None:
            self.stats.count(asid, True)
            return TlbLookup(True, "L1", t_l1,
                             self._paddr(vaddr, pframe, "large"), "large")
        ppage = self.l1_base[core].lookup((asid, vpage))
        if ppage is not None:
            self.stats.count(asid, True)
            return TlbLookup(True, "L1", t_l1,
                             self._paddr(vaddr, ppage, "base"), "base")

        start = self.l2_ports.reserve(t_l1)
        t_l2 = start + self.config.l2_latency
        pframe = self.l2_large.lookup((asid, vframe))
        if pframe is not None:
            self.stats.count(asid, False, True)
            self.l1_large[core].insert((asid, vframe), pframe)
            return TlbLookup(True, "L2", t_l2,
                             self._paddr(vaddr, pframe, "large"), "large")
        ppage = self.l2_base.lookup((asid, vpage))
        if ppage is not None:
            self.stats.count(asid, False, True)
            self.l1_base[core].insert((asid, vpage), ppage)
            return TlbLookup(True, "L2", t_l2,
                             self._paddr(vaddr, ppage, "base"), "base")

        self.stats.count(asid, False, False)
        return TlbLookup(False, "miss", t_l2)

    def fill(self, core: int, asid: int, vaddr: int, ppage: int,
             size_class: str) -> None:
        """Install a walked translation into the L2 and one core's L1."""
        g = self.geometry
        if size_class == "large":
            vframe = vaddr // g.large_page_bytes
            pframe = ppage // g.slots_per_large_frame
            self.l2_large.insert((asid, vframe), pframe)
            self.l1_large[core].insert((asid, vframe), pframe)
        else:
            vpage = vaddr // g.base_page_bytes
            self.l2_base.insert((asid, vpage), ppage)
            self.l1_base[core].insert((asid, vpage), ppage)

    def flush_frame(self, asid: int, v_frame: int) -> None:
        """Drop every entry, both size classes, covering one virtual frame."""
        slots = self.geometry.slots_per_large_frame
        lo, hi = v_frame * slots, (v_frame + 1) * slots

        def covers_base(key):
            return key[0] == asid and lo <= key[1] < hi

        def covers_large(key):
            return key == (asid, v_frame)

        for arr in self.l1_base:
            arr.invalidate_where(covers_base)
        for arr in self.l1_large:
            arr.invalidate_where(covers_large)
        self.l2_base.invalidate_where(covers_base)
        self.l2_large.invalidate_where(covers_large)

    def flush_asid(self, asid: int) -> None:
        def mine(key):
            return key[0] == asid

        for arr in self.l1_base:
            arr.invalidate_where(mine)
        for arr in self.l1_large:
            arr.invalidate_where(mine)
        self.l2_base.invalidate_where(mine)
        self.l2_large.invalidate_where(mine)

    def reach(self) -> dict:
        """Bytes of memory covered per structure and size class."""
        g, c = self.geometry, self.config
        return {
            "l1_base_bytes": c.l1_base_entries * g.base_page_bytes,
            "l1_large_bytes": c.l1_large_entries * g.large_page_bytes,
            "l2_base_bytes": c.l2_base_entries * g.base_page_bytes,
            "l2_large_bytes": c.l2_large_entries * g.large_page_bytes,
        }
