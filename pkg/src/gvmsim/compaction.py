"""Splintering and contiguity-aware compaction of fragmented large frames.

A deallocation that leaves a promoted frame with too many unallocated
slots splinters it back to base mappings (metadata only).  Compaction then
evacuates splintered frames into the owner's other partial frames or fresh
frames, freeing whole large frames.  The cost model is the conservative
worst case: every migrated base page stalls the entire GPU for a fixed
per-page copy cost.
"""

import math
from dataclasses import dataclass

from .errors import ConfigError, ContractViolation
from .geometry import DEFAULT_GEOMETRY, PageGeometry


@dataclass
class CompactionConfig:
    splinter_threshold: float = 0.5     # fraction of unallocated slots
    per_page_copy_cycles: int = 200     # 2 x DRAM access latency
    low_water_fraction: float = 0.01    # empty-frame low-water trigger

    def validate(self):
        if not 0 < self.splinter_threshold <= 1:
            raise ConfigError(
                "compaction.splinter_threshold must be in (0, 1]")
        if self.per_page_copy_cycles < 0:
            raise ConfigError(
                "compaction.per_page_copy_cycles must be >= 0")


@dataclass
class CompactResult:
    freed_frames: int = 0
    migrated_pages: int = 0
    stall_cycles: int = 0


class Compactor:
    def __init__(self, config: CompactionConfig | None = None,
                 geometry: PageGeometry = DEFAULT_GEOMETRY):
        self.config = config or CompactionConfig()
        self.config.validate()
        self.geometry = geometry
        self.splinters = 0
        self.compactions = 0
        self.migrated_pages = 0
        self.freed_frames = 0
        self.total_stall_cycles = 0

    def should_splinter(self, frame) -> bool:
        slots = self.geometry.slots_per_large_frame
        unallocated = slots - frame.used
        return unallocated / slots > self.config.splinter_threshold

    def splinter(self, frame, pt, tlbs=None, allocator=None) -> None:
        """Demote one frame: base mappings become authoritative again."""
        if not frame.coalesced:
            raise ContractViolation(f"frame {frame.frame} is not coalesced")
        slots = self.geometry.slots_per_large_frame
        if frame.contents:
            asid, vpage = next(iter(frame.contents.values()))
        else:
            asid, vpage = frame.owner, next(iter(frame.stale.values()))
        vframe = vpage // slots
        pt.clear_coalesced(vframe)
        for slot in sorted(frame.stale):
            pt.unmap_base(frame.stale[slot])
        frame.stale.clear()
        frame.coalesced = False
        frame.splintered = True
        if tlbs is not None:
            tlbs.flush_frame(asid, vframe)
        if allocator is not None:
            allocator.release_if_empty(frame)
        self.splinters += 1

    def check_batch(self, frames, page_tables, tlbs=None,
                    allocator=None) -> list:
        """Splinter check for frames a deallocation batch touched."""
        splintered = []
        for frame in frames:
            if not frame.coalesced:
                continue
            if frame.used == 0 or self.should_splinter(frame):
                pt = page_tables[frame.owner]
                self.splinter(frame, pt, tlbs, allocator)
                splintered.append(frame)
        return splintered

    def compact(self, frames, page_tables, tlbs=None, allocator=None,
                require_splintered=True) -> CompactResult:
        """Evacuate the given source frames and return them empty.

        Destinations are the owner's other partial frames, most-full first,
        then fresh empty frames.  Source frames must all be splintered and
        share one owner.
        """
        result = CompactResult()
        frames = [f for f in frames if f.used > 0]
        if not frames:
            return result
        owner = frames[0].owner
        for f in frames:
            if f.coalesced or (require_splintered and not f.splintered):
                raise ContractViolation(
                    f"frame {f.frame} is not a splintered frame")
            if f.mixed or f.owner != owner:
                raise ContractViolation("compaction sources mix owners")

        slots = self.geometry.slots_per_large_frame
        full_mask = allocator.full_mask
        source_ids = {f.frame for f in frames}
        dests = sorted(
            (allocator.frames[n] for n in allocator.partial.get(owner, ())
             if n not in source_ids
             and not allocator.frames[n].mixed
             and not allocator.frames[n].coalesced),
            key=lambda f: (-f.used, f.frame))
        dest_iter = iter(dests)
        dest = next(dest_iter, None)
        pt = page_tables[owner]
        touched_vframes = set()

        for src in sorted(frames, key=lambda f: (f.used, f.frame)):
            for slot in sorted(src.contents):
                while dest is not None and dest.used >= slots:
                    dest = next(dest_iter, None)
                if dest is None:
                    dest = allocator._pop_empty()
                    if dest is None:
                        raise ContractViolation(
                            "no destination frame for compaction")
                asid, vpage = src.contents[slot]
                allocator._clear(src, slot)
                pt.unmap_base(vpage)
                dslot = dest.lowest_free_slot(full_mask)
                allocator._place(dest, dslot, asid, vpage)
                touched_vframes.add(vpage // slots)
                result.migrated_pages += 1
            allocator.release_if_empty(src)
            result.freed_frames += 1

        if tlbs is not None:
            for vframe in sorted(touched_vframes):
                tlbs.flush_frame(owner, vframe)
        result.stall_cycles = (
            result.migrated_pages * self.config.per_page_copy_cycles)
        self.compactions += 1
        self.migrated_pages += result.migrated_pages
        self.freed_frames += result.freed_frames
        self.total_stall_cycles += result.stall_cycles
        return result

    def maybe_compact(self, asid, page_tables, tlbs=None,
                      allocator=None) -> CompactResult | None:
        """Compact the owner's splintered frames when it nets empty frames."""
        slots = self.geometry.slots_per_large_frame
        sources = sorted(
            (allocator.frames[n] for n in allocator.partial.get(asid, ())
             if allocator.frames[n].splintered
             and not allocator.frames[n].coalesced
             and not allocator.frames[n].mixed
             and allocator.frames[n].used > 0),
            key=lambda f: (f.used, f.frame))
        empty_avail = allocator.n_frames - sum(
            allocator.owned_frames.values())
        # drop the fullest sources until the move both nets frames and fits
        # in the empty frames actually available
        while sources:
            source_ids = {f.frame for f in sources}
            spare = sum(
                slots - allocator.frames[n].used
                for n in allocator.partial.get(asid, ())
                if n not in source_ids
                and not allocator.frames[n].mixed
                and not allocator.frames[n].coalesced)
            pages = sum(f.used for f in sources)
            fresh_needed = max(0, math.ceil((pages - spare) / slots))
            if fresh_needed <= empty_avail and len(sources) > fresh_needed:
                return self.compact(sources, page_tables, tlbs, allocator)
            sources.pop()
        return None

    def consolidate(self, page_tables, tlbs=None,
                    allocator=None) -> CompactResult | None:
        """Free one whole frame without consuming any empty frame.

        Picks the cheapest partial frame (any owner) whose pages fit in the
        owner's other partial frames and evacuates it.  Used as a last
        resort before an allocation would have to break the one-owner-per-
        frame guarantee.
        """
        slots = self.geometry.slots_per_large_frame
        best = None
        for owner in sorted(allocator.partial):
            cands = [allocator.frames[n]
                     for n in allocator.partial[owner]
                     if not allocator.frames[n].mixed
                     and not allocator.frames[n].coalesced
                     and allocator.frames[n].used > 0]
            if len(cands) < 2:
                continue
            cands.sort(key=lambda f: (f.used, f.frame))
            src = cands[0]
            spare = sum(slots - f.used for f in cands[1:])
            if src.used <= spare and (
                    best is None or (src.used, src.frame)
                    < (best.used, best.frame)):
                best = src
        if best is None:
            return None
        return self.compact([best], page_tables, tlbs, allocator,
                            require_splintered=False)
