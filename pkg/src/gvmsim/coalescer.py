"""In-place promotion of full, contiguous large frames to large mappings.

Runs when an allocation batch completes, over the list of frames the batch
touched.  A frame is promoted only if all of its slots are allocated, they
belong to one application, and slot i holds virtual page v_base + i for a
frame-aligned v_base -- in which case the page table is re-marked with zero
data movement.
"""

from dataclasses import dataclass, field

from .errors import ContractViolation
from .geometry import DEFAULT_GEOMETRY, PageGeometry

INCOMPLETE = "incomplete"
MIXED_OWNER = "mixed-owner"
NON_CONTIGUOUS = "non-contiguous"


@dataclass
class CoalesceStats:
    frames_checked: int = 0
    frames_coalesced: int = 0
    rejections: dict = field(default_factory=dict)

    def reject(self, reason):
        self.rejections[reason] = self.rejections.get(reason, 0) + 1


class InPlaceCoalescer:
    def __init__(self, geometry: PageGeometry = DEFAULT_GEOMETRY,
                 latency_cycles: int = 100):
        self.geometry = geometry
        # metadata-update cost charged to the owner's new walks
        self.latency_cycles = latency_cycles
        self.stats = CoalesceStats()

    def coalescibility(self, frame) -> str | None:
        """None if the frame can be promoted, else the rejection reason."""
        slots = self.geometry.slots_per_large_frame
        if frame.used != slots:
            return INCOMPLETE
        if frame.mixed:
            return MIXED_OWNER
        asid0, v0 = frame.contents[0] if 0 in frame.contents else (None, None)
        if asid0 is None or v0 % slots != 0:
            return NON_CONTIGUOUS
        for i in range(slots):
            if frame.contents.get(i) != (asid0, v0 + i):
                return NON_CONTIGUOUS
        return None

    def is_coalescible(self, frame) -> bool:
        return self.coalescibility(frame) is None

    def coalesce(self, frame, pt, tlbs=None) -> int:
        """Promote one frame; returns the covered virtual frame number."""
        reason = self.coalescibility(frame)
        if reason is not None:
            raise ContractViolation(
                f"frame {frame.frame} not coalescible: {reason}")
        slots = self.geometry.slots_per_large_frame
        asid, v0 = frame.contents[0]
        vframe = v0 // slots
        pt.set_coalesced(vframe, frame.frame)
        frame.coalesced = True
        frame.splintered = False
        if tlbs is not None:
            tlbs.flush_frame(asid, vframe)
        self.stats.frames_coalesced += 1
        return vframe

    def process_candidates(self, frames, page_tables, tlbs=None) -> int:
        """Check a batch's touched frames; promote the eligible ones."""
        done = 0
        for frame in frames:
            if frame.coalesced:
                continue
            self.stats.frames_checked += 1
            reason = self.coalescibility(frame)
            if reason is not None:
                self.stats.reject(reason)
                continue
            asid = frame.contents[0][0]
            self.coalesce(frame, page_tables[asid], tlbs)
            done += 1
        return done
