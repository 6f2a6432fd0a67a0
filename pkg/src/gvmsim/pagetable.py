"""Per-application multi-level page table and the shared walker timing model.

The table is a 4-level, 512-ary radix tree keyed by virtual base-page
number (36 bits of page number, 9 bits per level).  A leaf directory -- the
group of 512 leaf entries under one penultimate-level entry -- can be marked
*coalesced*, in which case translation resolves at the penultimate level
(3 accesses instead of 4) against a single large physical frame.  The base
entries underneath are shadowed, not destroyed, so splintering is a pure
metadata operation.
"""

import heapq
from dataclasses import dataclass

from .errors import ContractViolation, MapError
from .geometry import DEFAULT_GEOMETRY, PageGeometry

RADIX_BITS = 9
RADIX = 1 << RADIX_BITS
LEVELS = 4
MAX_VPAGE = 1 << (RADIX_BITS * LEVELS)


class FlatOracle:
    """Flat (asid, vpage) -> ppage mirror of every page table in a run.

    Kept in lockstep with the radix tables by construction; used to
    cross-check every translation the simulator performs.
    """

    def __init__(self):
        self.entries = {}
        self.mismatches = 0

    def set(self, asid, vpage, ppage):
        self.entries[(asid, vpage)] = ppage

    def clear(self, asid, vpage):
        del self.entries[(asid, vpage)]

    def lookup(self, asid, vpage):
        return self.entries.get((asid, vpage))

    def check(self, asid, vpage, ppage) -> bool:
        """Record and report whether a translation matches the oracle."""
        ok = self.entries.get((asid, vpage)) == ppage
        if not ok:
            self.mismatches += 1
        return ok


class _LeafDir:
    """Leaf table plus the coalesced mark carried by its parent entry."""

    __slots__ = ("entries", "coalesced", "phys_frame")

    def __init__(self):
        self.entries = {}       # i3 -> phys base-page number
        self.coalesced = False
        self.phys_frame = None


@dataclass
class WalkResult:
    ppage: int | None           # physical base-page number, None if absent
    size_class: str             # "base" | "large" | "none"
    levels: int                 # page-table levels touched


class PageTable:
    """One application's virtual -> physical map."""

    def __init__(self, asid: int, geometry: PageGeometry = DEFAULT_GEOMETRY,
                 oracle: FlatOracle | None = None):
        self.asid = asid
        self.geometry = geometry
        self.oracle = oracle
        self._root = {}          # i0 -> {i1 -> {i2 -> _LeafDir}}
        self._coalesced = {}     # vframe -> phys large-frame number

    def _leafdir(self, vpage, create=False):
        i0 = vpage >> 27 & 0x1FF
        i1 = vpage >> 18 & 0x1FF
        i2 = vpage >> 9 & 0x1FF
        l1 = self._root.get(i0)
        if l1 is None:
            if not create:
                return None
            l1 = self._root[i0] = {}
        l2 = l1.get(i1)
        if l2 is None:
            if not create:
                return None
            l2 = l1[i1] = {}
        leaf = l2.get(i2)
        if leaf is None:
            if not create:
                return None
            leaf = l2[i2] = _LeafDir()
        return leaf

    def map_base(self, vpage: int, ppage: int) -> None:
        if not 0 <= vpage < MAX_VPAGE:
            raise MapError(f"vpage {vpage} outside 4-level radix range")
        leaf = self._leafdir(vpage, create=True)
        if leaf.coalesced:
            raise ContractViolation(
                f"asid {self.asid}: map_base({vpage}) under coalesced region")
        i3 = vpage & 0x1FF
        if i3 in leaf.entries:
            raise MapError(f"asid {self.asid}: vpage {vpage} already mapped")
        leaf.entries[i3] = ppage
        if self.oracle is not None:
            self.oracle.set(self.asid, vpage, ppage)

    def unmap_base(self, vpage: int) -> None:
        leaf = self._leafdir(vpage)
        if leaf is None or (vpage & 0x1FF) not in leaf.entries:
            raise MapError(f"asid {self.asid}: vpage {vpage} not mapped")
        if leaf.coalesced:
            raise ContractViolation(
                f"asid {self.asid}: unmap_base({vpage}) inside coalesced "
                "region; splinter first")
        del leaf.entries[vpage & 0x1FF]
        if self.oracle is not None:
            self.oracle.clear(self.asid, vpage)

    def set_coalesced(self, v_frame: int, p_frame: int) -> None:
        """Promote a fully-mapped, slot-preserving region to a large mapping."""
        slots = self.geometry.slots_per_large_frame
        base = v_frame * slots
        leaf = self._leafdir(base)
        if leaf is None or len(leaf.entries) != slots:
            raise ContractViolation(
                f"asid {self.asid}: vframe {v_frame} not fully mapped")
        p_base = p_frame * slots
        for i in range(slots):
            if leaf.entries.get(i) != p_base + i:
                raise ContractViolation(
                    f"asid {self.asid}: vframe {v_frame} slot {i} not "
                    "slot-preserving into target frame")
        leaf.coalesced = True
        leaf.phys_frame = p_frame
        self._coalesced[v_frame] = p_frame

    def clear_coalesced(self, v_frame: int) -> None:
        slots = self.geometry.slots_per_large_frame
        leaf = self._leafdir(v_frame * slots)
        if leaf is None or not leaf.coalesced:
            raise ContractViolation(
                f"asid {self.asid}: vframe {v_frame} not coalesced")
        leaf.coalesced = False
        leaf.phys_frame = None
        del self._coalesced[v_frame]

    def is_coalesced(self, v_frame: int) -> bool:
        return v_frame in self._coalesced

    def resolve(self, vpage: int) -> WalkResult:
        """Radix-walk a virtual base-page number (no timing)."""
        leaf = self._leafdir(vpage)
        if leaf is None:
            return WalkResult(None, "none", LEVELS)
        if leaf.coalesced:
            slots = self.geometry.slots_per_large_frame
            return WalkResult(
                leaf.phys_frame * slots + (vpage & 0x1FF), "large", LEVELS - 1)
        ppage = leaf.entries.get(vpage & 0x1FF)
        if ppage is None:
            return WalkResult(None, "none", LEVELS)
        return WalkResult(ppage, "base", LEVELS)

    def walk_levels(self, vpage: int) -> int:
        """Levels a walk of this page will touch (3 if coalesced, else 4)."""
        leaf = self._leafdir(vpage)
        if leaf is not None and leaf.coalesced:
            return LEVELS - 1
        return LEVELS

    def mapped_vpages(self):
        """All mapped virtual base-page numbers, ascending."""
        for i0 in sorted(self._root):
            for i1 in sorted(self._root[i0]):
                for i2 in sorted(self._root[i0][i1]):
                    leaf = self._root[i0][i1][i2]
                    hi = (i0 << 27) | (i1 << 18) | (i2 << 9)
                    for i3 in sorted(leaf.entries):
                        yield hi | i3

    def dump(self):
        """One text line per mapping, for golden-file comparison."""
        slots = self.geometry.slots_per_large_frame
        for vpage in self.mapped_vpages():
            res = self.resolve(vpage)
            yield f"{self.asid} {vpage} {res.ppage} {res.size_class}"


class PageWalker:
    """Timing model of the shared page-table walker.

    At most ``max_concurrent_walks`` walks are active at any cycle; excess
    requests queue FIFO and start as active walks retire.  Each level
    touched costs one fixed memory access latency.
    """

    def __init__(self, max_concurrent_walks: int = 64,
                 level_latency: int = 100):
        self.max_concurrent_walks = max_concurrent_walks
        self.level_latency = level_latency
        self._active = []        # heap of completion cycles
        self.walks = 0
        self.max_active = 0
        self.queued = 0

    def request(self, now: int, levels: int) -> int:
        """Issue a walk at cycle ``now``; returns its completion cycle."""
        active = self._active
        while active and active[0] <= now:
            heapq.heappop(active)
        if len(active) >= self.max_concurrent_walks:
            start = heapq.heappop(active)   # earliest retiring walk
            self.queued += 1
        else:
            start = now
        done = start + levels * self.level_latency
        heapq.heappush(active, done)
        self.walks += 1
        self.max_active = max(self.max_active, len(active))
        return done

    def active_at(self, cycle: int) -> int:
        return sum(1 for c in self._active if c > cycle)
