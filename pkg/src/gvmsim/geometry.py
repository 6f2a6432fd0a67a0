"""Page geometry and address arithmetic.

Virtual and physical addresses are 64-bit unsigned byte addresses.  They are
kept as plain ints but tagged with distinct NewTypes so the allocator and
page table cannot silently swap one for the other.
"""

from dataclasses import dataclass, field
from typing import NewType

from .errors import ConfigError

VirtAddr = NewType("VirtAddr", int)
PhysAddr = NewType("PhysAddr", int)


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PageGeometry:
    """The base/large page-size pair used throughout a run."""

    base_page_bytes: int = 4096
    large_page_bytes: int = 2 * 1024 * 1024
    slots_per_large_frame: int = field(init=False)

    def __post_init__(self):
        if not _is_pow2(self.base_page_bytes):
            raise ConfigError("base_page_bytes must be a power of two")
        if not _is_pow2(self.large_page_bytes):
            raise ConfigError("large_page_bytes must be a power of two")
        if self.large_page_bytes % self.base_page_bytes:
            raise ConfigError("base_page_bytes must divide large_page_bytes")
        object.__setattr__(
            self, "slots_per_large_frame",
            self.large_page_bytes // self.base_page_bytes)


DEFAULT_GEOMETRY = PageGeometry()


def base_page_of(addr: int, g: PageGeometry = DEFAULT_GEOMETRY) -> int:
    """Base-page number containing a byte address."""
    return addr // g.base_page_bytes


def large_frame_of(addr: int, g: PageGeometry = DEFAULT_GEOMETRY) -> int:
    """Large-frame number containing a byte address."""
    return addr // g.large_page_bytes


def slot_in_frame(addr: int, g: PageGeometry = DEFAULT_GEOMETRY) -> int:
    """Index of the base-page slot inside the enclosing large frame."""
    return (addr % g.large_page_bytes) // g.base_page_bytes


def addr_of(frame: int, slot: int, offset: int = 0,
            g: PageGeometry = DEFAULT_GEOMETRY) -> int:
    """Reconstruct a byte address from (large frame, slot, byte offset)."""
    return frame * g.large_page_bytes + slot * g.base_page_bytes + offset


def is_frame_aligned(addr: int, g: PageGeometry = DEFAULT_GEOMETRY) -> bool:
    return addr % g.large_page_bytes == 0
