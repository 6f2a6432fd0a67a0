"""Physical-frame allocation policies.

Two policies over the same frame pool:

* ``cocoa`` -- contiguity-conserving: consecutive virtual base pages land in
  consecutive, slot-aligned physical slots, empty large frames are consumed
  whole, and a frame holds pages of only one application (the soft
  guarantee) unless memory is exhausted.
* ``gpu_mmu`` -- the baseline: base pages are handed out round-robin across
  frames with free slots, with no contiguity or ownership constraint, so
  full frames end up mixing applications.

The allocator maps pages into the owning application's page table as it
places them; deallocation reports coalesced frames back to the caller so
the compaction module can run its splinter check.
"""

from collections import deque
from dataclasses import dataclass, field

from .errors import (ContractViolation, MapError, OutOfMemoryError,
                     ProtectionError)
from .geometry import DEFAULT_GEOMETRY, PageGeometry

COCOA = "cocoa"
GPU_MMU = "gpu_mmu"


class LargeFrameState:
    """Per-2MB-physical-frame bookkeeping."""

    __slots__ = ("frame", "owner", "bitmap", "used", "coalesced",
                 "splintered", "mixed", "contents", "stale", "bound_keys",
                 "in_empty", "in_rr")

    def __init__(self, frame: int):
        self.frame = frame
        self.owner = None
        self.bitmap = 0          # bit i set = slot i allocated
        self.used = 0
        self.coalesced = False
        self.splintered = False  # was coalesced, then split
        self.mixed = False
        self.contents = {}       # slot -> (asid, vpage) content tag
        self.stale = {}          # slot -> vpage: deallocated under a live
                                 # large mapping, unmapped at splinter time
        self.bound_keys = set()  # (asid, vframe) bindings into this frame
        self.in_empty = True
        self.in_rr = True

    def slot_free(self, slot: int) -> bool:
        return not (self.bitmap >> slot) & 1

    def free_slots(self, total_slots: int) -> int:
        return total_slots - self.used

    def lowest_free_slot(self, full_mask: int) -> int:
        free = ~self.bitmap & full_mask
        return (free & -free).bit_length() - 1


@dataclass
class DeallocReport:
    """Result of a deallocation batch, handed to the compaction module."""

    coalesced_frames: list = field(default_factory=list)
    emptied_frames: list = field(default_factory=list)


class FrameAllocator:
    def __init__(self, total_bytes: int, policy: str = COCOA,
                 geometry: PageGeometry = DEFAULT_GEOMETRY,
                 page_tables: dict | None = None):
        if policy not in (COCOA, GPU_MMU):
            raise ContractViolation(f"unknown allocation policy {policy!r}")
        self.geometry = geometry
        self.policy = policy
        self.page_tables = page_tables if page_tables is not None else {}
        self.slots = geometry.slots_per_large_frame
        self.full_mask = (1 << self.slots) - 1
        self.n_frames = total_bytes // geometry.large_page_bytes
        self.frames = [LargeFrameState(i) for i in range(self.n_frames)]
        self.empty = deque(range(self.n_frames))
        self.partial = {}            # asid -> set of frame numbers
        self.binding = {}            # (asid, vframe) -> frame number
        self.rr = deque(range(self.n_frames))   # gpu_mmu rotation
        self.total_used = 0
        self.allocated_pages = {}    # asid -> live base pages
        self.owned_frames = {}       # asid -> frames with owner == asid
        self.soft_violations = 0
        self.mixed_frames = 0
        # optional callback: try to free a whole frame (returns bool);
        # consulted before giving up on the one-owner-per-frame guarantee
        self.need_room = None

    # -- bookkeeping helpers -------------------------------------------

    def free_slot_total(self) -> int:
        return self.n_frames * self.slots - self.total_used

    def _partial_set(self, asid):
        s = self.partial.get(asid)
        if s is None:
            s = self.partial[asid] = set()
        return s

    def _pop_empty(self):
        while self.empty:
            f = self.empty.popleft()
            fs = self.frames[f]
            if fs.in_empty and fs.used == 0 and not fs.stale:
                fs.in_empty = False
                return fs
        return None

    def _place(self, fs: LargeFrameState, slot: int, asid: int, vpage: int):
        if not fs.slot_free(slot):
            raise ContractViolation(
                f"slot {slot} of frame {fs.frame} already allocated")
        if fs.owner is None:
            fs.owner = asid
            fs.in_empty = False
            self.owned_frames[asid] = self.owned_frames.get(asid, 0) + 1
        elif fs.owner != asid and not fs.mixed:
            fs.mixed = True
            self.mixed_frames += 1
        fs.bitmap |= 1 << slot
        fs.used += 1
        fs.contents[slot] = (asid, vpage)
        self.total_used += 1
        self.allocated_pages[asid] = self.allocated_pages.get(asid, 0) + 1
        if fs.used == self.slots:
            self._partial_set(fs.owner).discard(fs.frame)
        else:
            self._partial_set(fs.owner).add(fs.frame)
        ppage = fs.frame * self.slots + slot
        pt = self.page_tables.get(asid)
        if pt is not None:
            pt.map_base(vpage, ppage)
        return ppage

    def _clear(self, fs: LargeFrameState, slot: int):
        asid, vpage = fs.contents.pop(slot)
        fs.bitmap &= ~(1 << slot)
        fs.used -= 1
        self.total_used -= 1
        self.allocated_pages[asid] -= 1
        if fs.mixed and len({t[0] for t in fs.contents.values()}) <= 1:
            fs.mixed = False
            self.mixed_frames -= 1
        return asid, vpage

    def release_if_empty(self, fs: LargeFrameState):
        """Return a drained frame to the empty list; fix list membership."""
        owner = fs.owner
        if fs.used == 0 and not fs.stale and not fs.coalesced:
            if owner is not None:
                self.owned_frames[owner] -= 1
                self._partial_set(owner).discard(fs.frame)
            if fs.mixed:
                fs.mixed = False
                self.mixed_frames -= 1
            for key in fs.bound_keys:
                self.binding.pop(key, None)
            fs.bound_keys.clear()
            fs.owner = None
            fs.splintered = False
            if not fs.in_empty:
                fs.in_empty = True
                self.empty.append(fs.frame)
            return True
        if owner is not None and 0 < fs.used < self.slots:
            self._partial_set(owner).add(fs.frame)
        return False

    # -- allocation ----------------------------------------------------

    def allocate_en_masse(self, asid: int, v_start: int, n_pages: int):
        """Map ``n_pages`` starting at ``v_start``.

        Returns (placements, touched_frames): the (vpage, ppage) pairs and
        the large-frame numbers the batch touched, in first-touch order.
        """
        g = self.geometry
        if v_start % g.base_page_bytes:
            raise ContractViolation("v_start must be base-page aligned")
        if n_pages < 1:
            raise ContractViolation("n_pages must be >= 1")
        if self.free_slot_total() < n_pages:
            raise OutOfMemoryError(
                f"{n_pages} pages requested, "
                f"{self.free_slot_total()} slots free")
        first = v_start // g.base_page_bytes
        pt = self.page_tables.get(asid)
        if pt is not None:
            for vpage in range(first, first + n_pages):
                if pt.resolve(vpage).ppage is not None:
                    raise MapError(f"vpage {vpage} already mapped")

        placements = []
        touched = []
        touched_set = set()

        def note(frame):
            if frame not in touched_set:
                touched_set.add(frame)
                touched.append(frame)

        if self.policy == GPU_MMU:
            for vpage in range(first, first + n_pages):
                fs = self._rr_next()
                slot = fs.lowest_free_slot(self.full_mask)
                ppage = self._place(fs, slot, asid, vpage)
                if fs.used < self.slots:
                    self.rr.append(fs.frame)
                    fs.in_rr = True
                placements.append((vpage, ppage))
                note(fs.frame)
            return placements, touched

        # cocoa: group the request by virtual frame, place slot-aligned
        vpage = first
        end = first + n_pages
        while vpage < end:
            vframe = vpage // self.slots
            gend = min(end, (vframe + 1) * self.slots)
            group = range(vpage, gend)
            for v, p in self._place_group_cocoa(asid, vframe, group):
                placements.append((v, p))
                note(p // self.slots)
            vpage = gend
        return placements, touched

    def _rr_next(self):
        while True:
            if not self.rr:
                for fs in self.frames:
                    if fs.used < self.slots and not fs.in_rr:
                        self.rr.append(fs.frame)
                        fs.in_rr = True
            f = self.rr.popleft()
            fs = self.frames[f]
            fs.in_rr = False
            if fs.used < self.slots and not fs.coalesced:
                return fs

    def _place_group_cocoa(self, asid, vframe, group):
        slots_needed = [v % self.slots for v in group]
        mask = 0
        for s in slots_needed:
            mask |= 1 << s

        fs = self._find_aligned_frame(asid, vframe, group, mask)
        if fs is not None:
            self.binding[(asid, vframe)] = fs.frame
            fs.bound_keys.add((asid, vframe))
            return [(v, self._place(fs, v % self.slots, asid, v))
                    for v in group]
        # no aligned home: fall back page by page
        return [(v, self._place_single_cocoa(asid, v)) for v in group]

    def _find_aligned_frame(self, asid, vframe, group, mask):
        bound = self.binding.get((asid, vframe))
        if bound is not None:
            fs = self.frames[bound]
            if fs.owner == asid and not fs.bitmap & mask:
                return fs
        if len(group) == self.slots:
            return self._pop_empty()
        # partial group: least-full owned partial frame with the slots free
        best = None
        for f in self._partial_set(asid):
            fs = self.frames[f]
            if fs.mixed or fs.coalesced or fs.bitmap & mask:
                continue
            if best is None or (fs.used, fs.frame) < (best.used, best.frame):
                best = fs
        if best is not None:
            return best
        return self._pop_empty()

    def _place_single_cocoa(self, asid, vpage):
        slot = vpage % self.slots
        # owned frame with the matching slot free, least-full first
        best = None
        any_free = None
        for f in self._partial_set(asid):
            fs = self.frames[f]
            if fs.coalesced:
                continue
            if fs.slot_free(slot) and (
                    best is None or (fs.used, fs.frame) <
                    (best.used, best.frame)):
                best = fs
            if any_free is None or (fs.used, fs.frame) < (
                    any_free.used, any_free.frame):
                any_free = fs
        if best is not None:
            return self._place(best, slot, asid, vpage)
        fs = self._pop_empty()
        if fs is not None:
            return self._place(fs, slot, asid, vpage)
        if any_free is not None:
            return self._place(
                any_free, any_free.lowest_free_slot(self.full_mask),
                asid, vpage)
        if self.need_room is not None and self.need_room(asid):
            fs = self._pop_empty()
            if fs is not None:
                return self._place(fs, slot, asid, vpage)
        # exhaustion: the soft guarantee gives way
        for fs in self.frames:
            if fs.used < self.slots and not fs.coalesced and not fs.stale:
                self.soft_violations += 1
                return self._place(
                    fs, fs.lowest_free_slot(self.full_mask), asid, vpage)
        raise OutOfMemoryError("no free slot anywhere")

    # -- deallocation ----------------------------------------------------

    def deallocate(self, asid: int, v_start: int, n_pages: int) -> DeallocReport:
        """Clear the slots backing a virtual range.

        Non-coalesced pages are unmapped immediately.  Slots under a live
        large mapping are marked stale; the affected frames are returned in
        the report for the compaction module's splinter check.
        """
        g = self.geometry
        first = v_start // g.base_page_bytes
        pt = self.page_tables.get(asid)
        pages = []
        for vpage in range(first, first + n_pages):
            res = pt.resolve(vpage) if pt is not None else None
            if res is None or res.ppage is None:
                raise ProtectionError(
                    f"asid {asid} does not map vpage {vpage}")
            fs = self.frames[res.ppage // self.slots]
            slot = res.ppage % self.slots
            tag = fs.contents.get(slot)
            if tag is None or tag[0] != asid:
                raise ProtectionError(
                    f"vpage {vpage}: slot owned by {tag and tag[0]}, "
                    f"not asid {asid}")
            pages.append((fs, slot, vpage))

        report = DeallocReport()
        seen = set()
        for fs, slot, vpage in pages:
            self._clear(fs, slot)
            if fs.coalesced:
                fs.stale[slot] = vpage
                if fs.frame not in seen:
                    seen.add(fs.frame)
                    report.coalesced_frames.append(fs)
            else:
                pt.unmap_base(vpage)
                if fs.used == 0 and self.release_if_empty(fs):
                    report.emptied_frames.append(fs.frame)
                elif fs.used == self.slots - 1 and fs.owner is not None:
                    self._partial_set(fs.owner).add(fs.frame)
                if not fs.in_rr and fs.used < self.slots:
                    self.rr.append(fs.frame)
                    fs.in_rr = True
        return report

    # -- metrics / verification ------------------------------------------

    def memory_bloat(self, asid: int) -> float:
        """Slots reserved in frames owned by an asid over pages it uses."""
        pages = self.allocated_pages.get(asid, 0)
        owned = self.owned_frames.get(asid, 0)
        if pages == 0:
            return 1.0
        return owned * self.slots / pages

    def frame_map_rows(self):
        """CSV-ready (frame, owner, popcount, coalesced) rows."""
        for fs in self.frames:
            owner = "" if fs.owner is None else fs.owner
            yield f"{fs.frame},{owner},{fs.used},{int(fs.coalesced)}"

    def reconcile(self):
        """Brute-force scan: list/counter state must match the frames."""
        total = 0
        mixed = 0
        pages = {}
        owned = {}
        for fs in self.frames:
            assert fs.used == fs.bitmap.bit_count(), fs.frame
            assert fs.used == len(fs.contents), fs.frame
            assert (fs.owner is None) == (
                fs.used == 0 and not fs.stale), fs.frame
            total += fs.used
            asids = {tag[0] for tag in fs.contents.values()}
            if len(asids) > 1:
                mixed += 1
                assert fs.mixed, fs.frame
            if fs.owner is None:
                assert not fs.coalesced, fs.frame
            else:
                owned[fs.owner] = owned.get(fs.owner, 0) + 1
            for tag in fs.contents.values():
                pages[tag[0]] = pages.get(tag[0], 0) + 1
            if fs.coalesced:
                assert fs.used + len(fs.stale) == self.slots, fs.frame
        assert total == self.total_used
        assert mixed == self.mixed_frames
        for asid, n in pages.items():
            assert self.allocated_pages.get(asid, 0) == n, asid
        for asid, n in owned.items():
            assert self.owned_frames.get(asid, 0) == n, asid
        empty_live = {f for f in self.empty
                      if self.frames[f].in_empty}
        for fs in self.frames:
            if fs.used == 0 and not fs.stale and fs.owner is None:
                assert fs.frame in empty_live, fs.frame
        return True
