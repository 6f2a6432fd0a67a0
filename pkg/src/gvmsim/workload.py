"""Synthetic workload profiles and reproducible trace generation.

A workload is one or more application profiles; homogeneous workloads run
copies of a single profile, heterogeneous workloads mix distinct profiles
drawn from the library.  Generation is fully determined by the master
seed: every application and warp derives its own generator from it.
"""

import random
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .geometry import DEFAULT_GEOMETRY, PageGeometry

HOMOGENEOUS = "homogeneous"
HETEROGENEOUS = "heterogeneous"

PATTERNS = ("sequential", "strided", "uniform", "hotset")

MB = 1024 * 1024


@dataclass(frozen=True)
class AppProfile:
    name: str
    buffer_bytes: tuple = (16 * MB,)
    pattern: str = "uniform"
    stride: int = 8
    hot_fraction: float = 0.1
    hot_prob: float = 0.9
    accesses_per_warp: int = 200
    delay_min: int = 5
    delay_max: int = 20
    dealloc_at_end: bool = False

    def validate(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"profile.pattern {self.pattern!r} unknown")
        if not self.buffer_bytes:
            raise ConfigError("profile.buffer_bytes must be non-empty")
        if self.accesses_per_warp < 0:
            raise ConfigError("profile.accesses_per_warp must be >= 0")
        if self.delay_min < 0 or self.delay_max < self.delay_min:
            raise ConfigError("profile delay range invalid")


PROFILE_LIBRARY = {
    "stream": AppProfile("stream", (16 * MB,), "sequential",
                         accesses_per_warp=200, delay_min=2, delay_max=8),
    "stride8": AppProfile("stride8", (32 * MB,), "strided", stride=8,
                          accesses_per_warp=200, delay_min=4, delay_max=12),
    "bigrandom": AppProfile("bigrandom", (64 * MB,), "uniform",
                            accesses_per_warp=200, delay_min=5, delay_max=20),
    "hotspot": AppProfile("hotspot", (32 * MB,), "hotset",
                          hot_fraction=0.1, hot_prob=0.9,
                          accesses_per_warp=200, delay_min=5, delay_max=20),
    "smallset": AppProfile("smallset", (2 * MB,), "uniform",
                           accesses_per_warp=200, delay_min=2, delay_max=10),
    "twobuf": AppProfile("twobuf", (8 * MB, 8 * MB), "sequential",
                         accesses_per_warp=200, delay_min=3, delay_max=10),
}


@dataclass
class WorkloadSpec:
    category: str = HOMOGENEOUS
    num_apps: int = 1
    profile: AppProfile | str | None = None      # homogeneous
    profiles: list | None = None                 # heterogeneous

    def validate(self):
        if self.category not in (HOMOGENEOUS, HETEROGENEOUS):
            raise ConfigError(f"workload.category {self.category!r} unknown")
        if self.num_apps < 1:
            raise ConfigError("workload.num_apps must be >= 1")
        if self.category == HETEROGENEOUS and self.num_apps < 2:
            raise ConfigError("heterogeneous workloads need >= 2 apps")

    def resolved_profiles(self, seed) -> list:
        """One validated profile per application."""
        self.validate()
        if self.category == HOMOGENEOUS:
            prof = self.profile or PROFILE_LIBRARY["bigrandom"]
            if isinstance(prof, str):
                prof = _library_lookup(prof)
            prof.validate()
            return [prof] * self.num_apps
        if self.profiles is not None:
            profs = [_library_lookup(p) if isinstance(p, str) else p
                     for p in self.profiles]
            if len(profs) != self.num_apps:
                raise ConfigError(
                    "workload.profiles length must equal num_apps")
        else:
            rng = random.Random(f"{seed}/mix")
            if self.num_apps > len(PROFILE_LIBRARY):
                raise ConfigError(
                    "not enough library profiles for this many apps")
            names = rng.sample(sorted(PROFILE_LIBRARY), self.num_apps)
            profs = [PROFILE_LIBRARY[n] for n in names]
        for p in profs:
            p.validate()
        return profs


def _library_lookup(name: str) -> AppProfile:
    try:
        return PROFILE_LIBRARY[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}") from None


@dataclass
class AppTrace:
    asid: int
    profile: AppProfile
    buffers: list                 # (virtual start address, bytes)
    total_pages: int
    warp_traces: list             # per warp: list of (vaddr, delay)
    total_accesses: int = field(init=False)

    def __post_init__(self):
        self.total_accesses = sum(len(t) for t in self.warp_traces)


def _layout_buffers(profile: AppProfile, g: PageGeometry):
    """Place buffers at successive frame-aligned virtual addresses."""
    buffers = []
    addr = g.large_page_bytes           # keep address 0 unused
    for nbytes in profile.buffer_bytes:
        buffers.append((addr, nbytes))
        frames = -(-nbytes // g.large_page_bytes)
        addr += frames * g.large_page_bytes
    return buffers


def _page_index_addr(buffers, g: PageGeometry):
    """Map a flat page index over all buffers to a virtual address."""
    spans = []
    base = 0
    for addr, nbytes in buffers:
        npages = -(-nbytes // g.base_page_bytes)
        spans.append((base, base + npages, addr))
        base += npages
    total = base

    def to_addr(idx):
        for lo, hi, addr in spans:
            if idx < hi:
                return addr + (idx - lo) * g.base_page_bytes
        raise IndexError(idx)

    return total, to_addr


def _warp_trace(rng, profile, total_pages, to_addr, warp_id, n_warps):
    n = profile.accesses_per_warp
    trace = []
    if profile.pattern == "sequential":
        pos = (warp_id * total_pages) // max(1, n_warps)
        step = 1
    elif profile.pattern == "strided":
        pos = (warp_id * total_pages) // max(1, n_warps)
        step = profile.stride
    else:
        pos = step = None
    hot_n = max(1, int(total_pages * profile.hot_fraction))
    for _ in range(n):
        if step is not None:
            idx = pos % total_pages
            pos += step
        elif profile.pattern == "uniform":
            idx = rng.randrange(total_pages)
        else:  # hotset
            if rng.random() < profile.hot_prob:
                idx = rng.randrange(hot_n)
            else:
                idx = hot_n + rng.randrange(total_pages - hot_n)
        delay = rng.randint(profile.delay_min, profile.delay_max)
        trace.append((to_addr(idx), delay))
    return trace


def generate_workload(spec: WorkloadSpec, seed,
                      warps_per_app: int,
                      geometry: PageGeometry = DEFAULT_GEOMETRY) -> list:
    """Per-application traces; identical (spec, seed) means identical output."""
    profiles = spec.resolved_profiles(seed)
    apps = []
    for asid, profile in enumerate(profiles):
        buffers = _layout_buffers(profile, geometry)
        total_pages, to_addr = _page_index_addr(buffers, geometry)
        warp_traces = [
            _warp_trace(random.Random(f"{seed}/app{asid}/warp{w}"),
                        profile, total_pages, to_addr, w, warps_per_app)
            for w in range(warps_per_app)
        ]
        apps.append(AppTrace(asid, profile, buffers, total_pages,
                             warp_traces))
    return apps


def make_profile(d: dict) -> AppProfile:
    """Build a profile from a config mapping, with strict keys."""
    if "name" in d and len(d) == 1:
        return _library_lookup(d["name"])
    known = {f.name for f in AppProfile.__dataclass_fields__.values()}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown profile field(s): {sorted(bad)}")
    base = _library_lookup(d["name"]) if "name" in d else AppProfile("inline")
    kwargs = dict(d)
    if "buffer_bytes" in kwargs:
        kwargs["buffer_bytes"] = tuple(kwargs["buffer_bytes"])
    prof = replace(base, **kwargs)
    prof.validate()
    return prof
