"""Run configuration: defaults, YAML loading, validation."""

import dataclasses
from dataclasses import dataclass, field

import yaml

from .compaction import CompactionConfig
from .errors import ConfigError
from .geometry import PageGeometry
from .paging import PAGING_MODES, PREFAULT, IoBusConfig
from .tlb import TlbConfig
from .workload import WorkloadSpec, make_profile

MODE_GPU_MMU = "gpu_mmu"
MODE_MOSAIC = "mosaic"
MODE_IDEAL = "ideal"
MODES = (MODE_GPU_MMU, MODE_MOSAIC, MODE_IDEAL)

GB = 1024 ** 3


@dataclass
class WalkerConfig:
    max_concurrent_walks: int = 64
    level_latency: int = 100

    def validate(self):
        if self.max_concurrent_walks <= 0:
            raise ConfigError("walker.max_concurrent_walks must be > 0")
        if self.level_latency <= 0:
            raise ConfigError("walker.level_latency must be > 0")


@dataclass
class RunConfig:
    geometry: PageGeometry = field(default_factory=PageGeometry)
    tlb: TlbConfig = field(default_factory=TlbConfig)
    walker: WalkerConfig = field(default_factory=WalkerConfig)
    bus: IoBusConfig = field(default_factory=IoBusConfig)
    compaction: CompactionConfig = field(default_factory=CompactionConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    mode: str = MODE_MOSAIC
    paging: str = PREFAULT
    seed: int = 1
    cores: int = 30
    warps_per_core: int = 48
    memory_bytes: int = 3 * GB
    dram_latency: int = 100
    dram_channels: int = 6
    coalesce_latency: int = 100
    warmup_fraction: float = 0.3
    interval_cycles: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.paging not in PAGING_MODES:
            raise ConfigError(
                f"paging must be one of {PAGING_MODES}, got {self.paging!r}")
        if self.cores < 1:
            raise ConfigError("cores must be >= 1")
        if self.warps_per_core < 1:
            raise ConfigError("warps_per_core must be >= 1")
        if self.memory_bytes < self.geometry.large_page_bytes:
            raise ConfigError("memory_bytes smaller than one large frame")
        if self.dram_latency < 0 or self.dram_channels < 1:
            raise ConfigError("dram_latency/dram_channels invalid")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        self.tlb.validate()
        self.walker.validate()
        self.bus.validate()
        self.compaction.validate()
        self.workload.validate()
        return self


def _build_section(cls, d: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown {where} field(s): {sorted(bad)}")
    return cls(**d)


def _build_workload(d: dict) -> WorkloadSpec:
    d = dict(d)
    if "profile" in d and isinstance(d["profile"], dict):
        d["profile"] = make_profile(d["profile"])
    if "profiles" in d and d["profiles"] is not None:
        d["profiles"] = [
            make_profile(p) if isinstance(p, dict) else p
            for p in d["profiles"]]
    return _build_section(WorkloadSpec, d, "workload")


_SECTIONS = {
    "geometry": PageGeometry,
    "tlb": TlbConfig,
    "walker": WalkerConfig,
    "bus": IoBusConfig,
    "compaction": CompactionConfig,
}


def run_config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("run config must be a mapping")
    d = dict(d)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in d:
            sub = d.pop(name)
            if not isinstance(sub, dict):
                raise ConfigError(f"{name} section must be a mapping")
            kwargs[name] = _build_section(cls, sub, name)
    if "workload" in d:
        sub = d.pop("workload")
        if not isinstance(sub, dict):
            raise ConfigError("workload section must be a mapping")
        kwargs["workload"] = _build_workload(sub)
    scalar_fields = {f.name for f in dataclasses.fields(RunConfig)}
    bad = set(d) - scalar_fields
    if bad:
        raise ConfigError(f"unknown config field(s): {sorted(bad)}")
    kwargs.update(d)
    return RunConfig(**kwargs).validate()


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        data = {}
    return run_config_from_dict(data)
