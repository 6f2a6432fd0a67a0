"""Facade wiring the allocator, page tables, coalescer and compactor.

The engine (and the unit tests) drive memory management through this one
object: allocation batches feed the coalescer, deallocation batches feed
the splinter check and the compaction trigger, and every mutation keeps
the flat oracle in lockstep.
"""

from dataclasses import dataclass, field

from .allocator import COCOA, FrameAllocator
from .coalescer import InPlaceCoalescer
from .compaction import CompactionConfig, Compactor, CompactResult
from .geometry import DEFAULT_GEOMETRY, PageGeometry
from .pagetable import FlatOracle, PageTable


@dataclass
class AllocOutcome:
    placements: list = field(default_factory=list)
    frames_coalesced: int = 0
    compaction: CompactResult | None = None


@dataclass
class DeallocOutcome:
    splinters: int = 0
    compaction: CompactResult | None = None


class MemoryManager:
    def __init__(self, total_bytes: int, policy: str = COCOA,
                 geometry: PageGeometry = DEFAULT_GEOMETRY,
                 coalescing: bool = True,
                 compaction_config: CompactionConfig | None = None,
                 coalesce_latency: int = 100,
                 tlbs=None):
        self.geometry = geometry
        self.oracle = FlatOracle()
        self.page_tables = {}
        self.allocator = FrameAllocator(
            total_bytes, policy, geometry, self.page_tables)
        self.coalescer = InPlaceCoalescer(geometry, coalesce_latency)
        self.compactor = Compactor(compaction_config, geometry)
        self.coalescing = coalescing
        self.tlbs = tlbs
        self._room_result = None
        if policy == COCOA:
            self.allocator.need_room = self._make_room

    def create_asid(self, asid: int) -> PageTable:
        pt = PageTable(asid, self.geometry, self.oracle)
        self.page_tables[asid] = pt
        return pt

    def empty_frame_count(self) -> int:
        return self.allocator.n_frames - sum(
            self.allocator.owned_frames.values())

    def _make_room(self, asid: int) -> bool:
        """Last-resort hook: free a frame rather than mix applications."""
        res = self.compactor.consolidate(
            self.page_tables, self.tlbs, self.allocator)
        if res is None:
            return False
        if self._room_result is None:
            self._room_result = res
        else:
            self._room_result.freed_frames += res.freed_frames
            self._room_result.migrated_pages += res.migrated_pages
            self._room_result.stall_cycles += res.stall_cycles
        return True

    def allocate(self, asid: int, v_start: int, n_pages: int) -> AllocOutcome:
        out = AllocOutcome()
        self._room_result = None
        placements, touched = self.allocator.allocate_en_masse(
            asid, v_start, n_pages)
        out.placements = placements
        if self.coalescing:
            frames = [self.allocator.frames[f] for f in touched]
            out.frames_coalesced = self.coalescer.process_candidates(
                frames, self.page_tables, self.tlbs)
        out.compaction = self._low_water_compact()
        if self._room_result is not None:
            if out.compaction is None:
                out.compaction = self._room_result
            else:
                out.compaction.freed_frames += self._room_result.freed_frames
                out.compaction.migrated_pages += (
                    self._room_result.migrated_pages)
                out.compaction.stall_cycles += self._room_result.stall_cycles
            self._room_result = None
        return out

    def allocate_pages(self, asid: int, pages) -> AllocOutcome:
        """Allocate a sorted page list as its consecutive runs."""
        out = AllocOutcome()
        g = self.geometry
        run_start = None
        prev = None
        runs = []
        for p in pages:
            if run_start is None:
                run_start = prev = p
            elif p == prev + 1:
                prev = p
            else:
                runs.append((run_start, prev))
                run_start = prev = p
        if run_start is not None:
            runs.append((run_start, prev))
        for lo, hi in runs:
            sub = self.allocate(asid, lo * g.base_page_bytes, hi - lo + 1)
            out.placements.extend(sub.placements)
            out.frames_coalesced += sub.frames_coalesced
            if sub.compaction is not None:
                out.compaction = sub.compaction
        return out

    def _low_water_compact(self) -> CompactResult | None:
        low_water = (self.compactor.config.low_water_fraction
                     * self.allocator.n_frames)
        if self.empty_frame_count() >= low_water:
            return None
        total = None
        for asid in sorted(self.page_tables):
            res = self.compactor.maybe_compact(
                asid, self.page_tables, self.tlbs, self.allocator)
            if res is not None:
                if total is None:
                    total = CompactResult()
                total.freed_frames += res.freed_frames
                total.migrated_pages += res.migrated_pages
                total.stall_cycles += res.stall_cycles
        return total

    def deallocate(self, asid: int, v_start: int,
                   n_pages: int) -> DeallocOutcome:
        out = DeallocOutcome()
        report = self.allocator.deallocate(asid, v_start, n_pages)
        splintered = self.compactor.check_batch(
            report.coalesced_frames, self.page_tables, self.tlbs,
            self.allocator)
        out.splinters = len(splintered)
        out.compaction = self.compactor.maybe_compact(
            asid, self.page_tables, self.tlbs, self.allocator)
        return out

    def resolve_page(self, asid: int, vpage: int):
        """Physical base-page number for a virtual page, or None."""
        res = self.page_tables[asid].resolve(vpage)
        return res.ppage

    def translate(self, asid: int, vaddr: int):
        """Byte-level translation (no timing), or None if unmapped."""
        g = self.geometry
        res = self.page_tables[asid].resolve(vaddr // g.base_page_bytes)
        if res.ppage is None:
            return None
        return res.ppage * g.base_page_bytes + vaddr % g.base_page_bytes

    def content_multiset(self):
        """Sorted multiset of live (asid, vpage) content tags."""
        tags = []
        for fs in self.allocator.frames:
            tags.extend(fs.contents.values())
        tags.sort()
        return tags

    def verify_contents(self) -> int:
        """Count placement inconsistencies between frames and page tables."""
        bad = 0
        slots = self.geometry.slots_per_large_frame
        for fs in self.allocator.frames:
            for slot, (asid, vpage) in fs.contents.items():
                expected = fs.frame * slots + slot
                if self.resolve_page(asid, vpage) != expected:
                    bad += 1
        return bad
