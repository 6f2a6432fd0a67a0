"""Discrete-event simulation core.

Single-threaded event loop over a binary heap keyed by (cycle, sequence
number); ties never reach the payload, so runs are bit-reproducible for a
given (config, seed).  Warps issue translated memory accesses from their
pregenerated traces; the translation pipeline goes L1 TLB -> L2 TLB ->
MSHR -> shared walker -> (page fault -> I/O bus) and memory accesses pay a
fixed DRAM latency behind a per-channel bandwidth cap.
"""

import heapq
from dataclasses import dataclass, field

from .allocator import COCOA, GPU_MMU
from .config import MODE_GPU_MMU, MODE_IDEAL, MODE_MOSAIC, RunConfig
from .errors import ConfigError, OutOfMemoryError
from .manager import MemoryManager
from .pagetable import PageWalker
from .paging import DEMAND_LARGE, PREFAULT, DemandPager, IoBus
from .tlb import TlbHierarchy


@dataclass
class MetricSet:
    mode: str = ""
    paging: str = ""
    seed: int = 0
    apps: int = 0
    cores_per_app: int = 0
    status: str = "ok"
    cycles: int = 0
    retired: int = 0
    ipc: float = 0.0
    per_asid_retired: dict = field(default_factory=dict)
    per_asid_cycles: dict = field(default_factory=dict)
    per_asid_ipc: dict = field(default_factory=dict)
    l1_hits: int = 0
    l1_misses: int = 0
    l2_hits: int = 0
    l2_misses: int = 0
    l2_hits_steady: int = 0
    l2_misses_steady: int = 0
    walks: int = 0
    max_active_walks: int = 0
    faults: int = 0
    bytes_over_bus: int = 0
    prefault_bytes: int = 0
    prefault_bus_cycles: int = 0
    fault_stall_cycles: int = 0
    frames_checked: int = 0
    frames_coalesced: int = 0
    splinters: int = 0
    compactions: int = 0
    migrated_pages: int = 0
    freed_frames: int = 0
    compaction_stall_cycles: int = 0
    soft_violations: int = 0
    mixed_frames: int = 0
    memory_bloat: float = 1.0
    oracle_mismatches: int = 0
    content_mismatches: int = 0
    intervals: list = field(default_factory=list)

    def rate(self, hits, misses):
        total = hits + misses
        return hits / total if total else 0.0

    @property
    def l1_hit_rate(self):
        return self.rate(self.l1_hits, self.l1_misses)

    @property
    def l2_hit_rate(self):
        return self.rate(self.l2_hits, self.l2_misses)

    @property
    def l2_hit_rate_steady(self):
        return self.rate(self.l2_hits_steady, self.l2_misses_steady)

    @property
    def l2_miss_rate_steady(self):
        return 1.0 - self.l2_hit_rate_steady


CSV_COLUMNS = [
    "workload", "mode", "paging", "seed", "apps", "cores_per_app", "status",
    "cycles", "retired", "ipc", "per_asid_ipc",
    "l1_hits", "l1_misses", "l1_hit_rate",
    "l2_hits", "l2_misses", "l2_hit_rate",
    "l2_hit_rate_steady", "l2_miss_rate_steady",
    "walks", "max_active_walks",
    "faults", "bytes_over_bus", "prefault_bytes", "prefault_bus_cycles",
    "fault_stall_cycles",
    "frames_checked", "frames_coalesced", "splinters", "compactions",
    "migrated_pages", "freed_frames", "compaction_stall_cycles",
    "soft_violations", "mixed_frames", "memory_bloat",
    "oracle_mismatches", "content_mismatches",
]


def metric_row(m: MetricSet, workload: str = "") -> dict:
    ipcs = "|".join(repr(m.per_asid_ipc[a]) for a in sorted(m.per_asid_ipc))
    vals = {
        "workload": workload,
        "mode": m.mode, "paging": m.paging, "seed": m.seed,
        "apps": m.apps, "cores_per_app": m.cores_per_app,
        "status": m.status,
        "cycles": m.cycles, "retired": m.retired, "ipc": repr(m.ipc),
        "per_asid_ipc": ipcs,
        "l1_hits": m.l1_hits, "l1_misses": m.l1_misses,
        "l1_hit_rate": repr(m.l1_hit_rate),
        "l2_hits": m.l2_hits, "l2_misses": m.l2_misses,
        "l2_hit_rate": repr(m.l2_hit_rate),
        "l2_hit_rate_steady": repr(m.l2_hit_rate_steady),
        "l2_miss_rate_steady": repr(m.l2_miss_rate_steady),
        "walks": m.walks, "max_active_walks": m.max_active_walks,
        "faults": m.faults, "bytes_over_bus": m.bytes_over_bus,
        "prefault_bytes": m.prefault_bytes,
        "prefault_bus_cycles": m.prefault_bus_cycles,
        "fault_stall_cycles": m.fault_stall_cycles,
        "frames_checked": m.frames_checked,
        "frames_coalesced": m.frames_coalesced,
        "splinters": m.splinters, "compactions": m.compactions,
        "migrated_pages": m.migrated_pages, "freed_frames": m.freed_frames,
        "compaction_stall_cycles": m.compaction_stall_cycles,
        "soft_violations": m.soft_violations,
        "mixed_frames": m.mixed_frames,
        "memory_bloat": repr(m.memory_bloat),
        "oracle_mismatches": m.oracle_mismatches,
        "content_mismatches": m.content_mismatches,
    }
    return {k: str(vals[k]) for k in CSV_COLUMNS}


class _Warp:
    __slots__ = ("app", "core", "trace", "cursor")

    def __init__(self, app, core, trace):
        self.app = app
        self.core = core
        self.trace = trace
        self.cursor = 0


class _App:
    __slots__ = ("asid", "trace", "cores", "warps", "retired",
                 "finish_cycle", "done_warps")

    def __init__(self, asid, trace, cores):
        self.asid = asid
        self.trace = trace
        self.cores = cores
        self.warps = []
        self.retired = 0
        self.finish_cycle = 0
        self.done_warps = 0


class SimEngine:
    def __init__(self, config: RunConfig, app_traces=None):
        config.validate()
        self.config = config
        g = config.geometry
        self.geometry = g
        self.ideal = config.mode == MODE_IDEAL
        policy = GPU_MMU if config.mode == MODE_GPU_MMU else COCOA
        coalescing = config.mode == MODE_MOSAIC
        self.tlbs = TlbHierarchy(config.tlb, config.cores, g)
        self.walker = PageWalker(config.walker.max_concurrent_walks,
                                 config.walker.level_latency)
        self.bus = IoBus(config.bus)
        self.manager = MemoryManager(
            config.memory_bytes, policy, g, coalescing,
            config.compaction, config.coalesce_latency, tlbs=self.tlbs)
        self.pager = DemandPager(self.bus, config.paging, g)
        self._given_traces = app_traces

        self._events = []
        self._seq = 0
        self.now = 0
        self.freeze_until = 0
        self.compaction_stall_cycles = 0
        self.core_port_free = [0] * config.cores
        self.ch_free = [0] * config.dram_channels
        self.asid_walk_block = {}
        self.apps = []
        self.total_retired = 0
        self.total_accesses = 0
        self._warmup_point = None
        self._steady_base = None
        self._next_interval = None
        self.intervals = []

    # -- event plumbing -------------------------------------------------

    def schedule(self, cycle, fn):
        heapq.heappush(self._events, (cycle, self._seq, fn))
        self._seq += 1

    def freeze(self, stall_cycles):
        """Whole-GPU stall: nothing progresses for this many cycles."""
        if stall_cycles <= 0:
            return
        self.freeze_until = max(self.freeze_until, self.now) + stall_cycles
        self.compaction_stall_cycles += stall_cycles

    # -- setup ----------------------------------------------------------

    def _setup(self):
        from .workload import generate_workload

        cfg = self.config
        n_apps = cfg.workload.num_apps
        if n_apps > cfg.cores:
            raise ConfigError("more apps than cores to partition")
        cores_per_app = cfg.cores // n_apps
        self.cores_per_app = cores_per_app
        warps_per_app = cores_per_app * cfg.warps_per_core
        if self._given_traces is not None:
            traces = self._given_traces
        else:
            traces = generate_workload(cfg.workload, cfg.seed,
                                       warps_per_app, self.geometry)

        declared = sum(nb for tr in traces for _, nb in tr.buffers)
        if declared > cfg.memory_bytes:
            raise ConfigError(
                f"declared memory {declared} exceeds GPU memory "
                f"{cfg.memory_bytes}")

        g = self.geometry
        for i, trace in enumerate(traces):
            app = _App(trace.asid, trace,
                       list(range(i * cores_per_app,
                                  (i + 1) * cores_per_app)))
            self.manager.create_asid(app.asid)
            for vaddr, nbytes in trace.buffers:
                self.pager.declare(app.asid, vaddr, nbytes)
            if cfg.paging == PREFAULT:
                for vaddr, nbytes in trace.buffers:
                    npages = -(-nbytes // g.base_page_bytes)
                    out = self.manager.allocate(app.asid, vaddr, npages)
                    self._charge_alloc(app.asid, out)
                self.pager.prefault_all(app.asid)
            for w, wtrace in enumerate(trace.warp_traces):
                core = app.cores[min(w // cfg.warps_per_core,
                                     cores_per_app - 1)]
                app.warps.append(_Warp(app, core, wtrace))
            self.apps.append(app)
            self.total_accesses += trace.total_accesses

        self._warmup_point = int(self.total_accesses * cfg.warmup_fraction)
        if cfg.interval_cycles:
            self._next_interval = cfg.interval_cycles
        for app in self.apps:
            for warp in app.warps:
                self.schedule(0, self._issuer(app, warp))

    def _charge_alloc(self, asid, out):
        if out.frames_coalesced:
            base = max(self.asid_walk_block.get(asid, 0), self.now)
            self.asid_walk_block[asid] = base + (
                out.frames_coalesced * self.manager.coalescer.latency_cycles)
        if out.compaction is not None:
            self.freeze(out.compaction.stall_cycles)

    # -- warp pipeline ----------------------------------------------------

    def _issuer(self, app, warp):
        def fn():
            self._issue(app, warp)
        return fn

    def _issue(self, app, warp):
        if warp.cursor >= len(warp.trace):
            app.done_warps += 1
            if app.done_warps == len(app.warps):
                self._app_finished(app)
            return
        vaddr, delay = warp.trace[warp.cursor]
        warp.cursor += 1
        core = warp.core
        t0 = max(self.now, self.core_port_free[core])
        self.core_port_free[core] = t0 + 1

        def cont(t1, paddr, app=app, warp=warp, delay=delay):
            self._mem_access(app, warp, t1, paddr, delay)

        self._translate(core, app.asid, vaddr, t0, cont)

    def _mem_access(self, app, warp, t1, paddr, delay):
        ch = (paddr // self.geometry.base_page_bytes) % len(self.ch_free)
        start = max(t1, self.ch_free[ch])
        self.ch_free[ch] = start + 1
        t2 = start + self.config.dram_latency

        def fn():
            self._retire(app, warp, delay)
        self.schedule(t2, fn)

    def _retire(self, app, warp, delay):
        app.retired += 1
        app.finish_cycle = max(app.finish_cycle, self.now)
        self.total_retired += 1
        if (self._steady_base is None
                and self.total_retired >= self._warmup_point):
            self._steady_base = self.tlbs.stats.snapshot()
        self.schedule(self.now + delay, self._issuer(app, warp))

    def _app_finished(self, app):
        if app.trace.profile.dealloc_at_end:
            g = self.geometry
            for vaddr, nbytes in app.trace.buffers:
                npages = -(-nbytes // g.base_page_bytes)
                mapped = [p for p in range(vaddr // g.base_page_bytes,
                                           vaddr // g.base_page_bytes
                                           + npages)
                          if self.manager.resolve_page(app.asid, p)
                          is not None]
                for lo, hi in _runs(mapped):
                    out = self.manager.deallocate(
                        app.asid, lo * g.base_page_bytes, hi - lo + 1)
                    if out.compaction is not None:
                        self.freeze(out.compaction.stall_cycles)

    # -- translation ------------------------------------------------------

    def _translate(self, core, asid, vaddr, t0, cont):
        if self.ideal:
            self.tlbs.stats.count(asid, True)
            paddr = self.manager.translate(asid, vaddr)
            if paddr is None:
                self._fault(asid, vaddr, t0 + 1,
                            lambda t, p: cont(t, p))
            else:
                self._check_oracle(asid, vaddr, paddr)
                cont(t0 + 1, paddr)
            return
        look = self.tlbs.lookup(core, asid, vaddr, t0)
        if look.hit:
            self._check_oracle(asid, vaddr, look.paddr)
            cont(look.ready, look.paddr)
            return
        vpage = vaddr // self.geometry.base_page_bytes
        key = (asid, vpage)
        status = self.tlbs.mshrs.join(key, (core, vaddr, cont))
        if status == "new":
            self._start_walk(key, look.ready)

    def _start_walk(self, key, t):
        asid, vpage = key
        t = max(t, self.asid_walk_block.get(asid, 0))
        levels = self.manager.page_tables[asid].walk_levels(vpage)
        done = self.walker.request(t, levels)

        def fn():
            self._walk_done(key)
        self.schedule(done, fn)

    def _walk_done(self, key):
        asid, vpage = key
        res = self.manager.page_tables[asid].resolve(vpage)
        if res.ppage is None:
            vaddr = vpage * self.geometry.base_page_bytes
            self._fault(asid, vaddr, self.now, mshr_key=key)
            return
        self._fill_and_release(key, res)

    def _fill_and_release(self, key, res):
        asid, vpage = key
        waiters, new_keys = self.tlbs.mshrs.release(key)
        for core, vaddr, cont in waiters:
            self.tlbs.fill(core, asid, vaddr, res.ppage, res.size_class)
            paddr = (res.ppage * self.geometry.base_page_bytes
                     + vaddr % self.geometry.base_page_bytes)
            self._check_oracle(asid, vaddr, paddr)
            cont(self.now, paddr)
        for k in new_keys:
            self._start_walk(k, self.now)

    def _check_oracle(self, asid, vaddr, paddr):
        g = self.geometry
        vpage = vaddr // g.base_page_bytes
        self.manager.oracle.check(
            asid, vpage, paddr // g.base_page_bytes)

    # -- fault path ---------------------------------------------------------

    def _fault(self, asid, vaddr, now, cont=None, mshr_key=None):
        tr = self.pager.fault(asid, vaddr, now)
        first = not tr.waiter_keys
        if cont is not None:
            tr.waiter_keys.append(("cb", asid, vaddr, cont))
        if mshr_key is not None:
            tr.waiter_keys.append(("mshr", mshr_key))
        if first:
            def fn(key=tr.key):
                self._transfer_done(key)
            self.schedule(tr.done, fn)

    def _transfer_done(self, tkey):
        tr = self.pager.complete(tkey)
        asid = tkey[0]
        g = self.geometry
        if self.pager.mode == DEMAND_LARGE:
            pages = [p for p in self.pager.declared_pages_in_frame(
                         asid, tkey[1])
                     if self.manager.resolve_page(asid, p) is None]
        else:
            pages = [tkey[1]]
        out = self.manager.allocate_pages(asid, pages)
        self._charge_alloc(asid, out)
        for waiter in tr.waiter_keys:
            if waiter[0] == "mshr":
                key = waiter[1]
                res = self.manager.page_tables[key[0]].resolve(key[1])
                self._fill_and_release(key, res)
            else:
                _, a, vaddr, cont = waiter
                paddr = self.manager.translate(a, vaddr)
                self._check_oracle(a, vaddr, paddr)
                cont(self.now, paddr)

    # -- main loop ------------------------------------------------------------

    def run(self) -> MetricSet:
        try:
            self._setup()
        except OutOfMemoryError as exc:
            return self._metrics(status=f"oom: {exc}")
        events = self._events
        try:
            while events:
                cycle, seq, fn = heapq.heappop(events)
                if cycle < self.freeze_until:
                    heapq.heappush(events, (self.freeze_until, seq, fn))
                    continue
                self.now = cycle
                if (self._next_interval is not None
                        and cycle >= self._next_interval):
                    self._record_interval()
                fn()
        except OutOfMemoryError as exc:
            return self._metrics(status=f"oom: {exc}")
        return self._metrics()

    def _record_interval(self):
        st = self.tlbs.stats
        per_asid = ";".join(
            f"{a}:{st.per_asid[a][0]}:{st.per_asid[a][1]}:"
            f"{st.per_asid[a][2]}:{st.per_asid[a][3]}"
            for a in sorted(st.per_asid))
        self.intervals.append({
            "cycle": self.now,
            "l1_hits": st.l1_hits, "l1_misses": st.l1_misses,
            "l2_hits": st.l2_hits, "l2_misses": st.l2_misses,
            "walks": self.walker.walks,
            "per_asid": per_asid,
        })
        step = self.config.interval_cycles
        while self._next_interval <= self.now:
            self._next_interval += step

    def _metrics(self, status="ok") -> MetricSet:
        cfg = self.config
        m = MetricSet(mode=cfg.mode, paging=cfg.paging, seed=cfg.seed,
                      apps=cfg.workload.num_apps,
                      cores_per_app=getattr(self, "cores_per_app", 0),
                      status=status)
        st = self.tlbs.stats
        m.cycles = self.now
        m.l1_hits, m.l1_misses = st.l1_hits, st.l1_misses
        m.l2_hits, m.l2_misses = st.l2_hits, st.l2_misses
        base = self._steady_base or (0, 0, 0, 0)
        m.l2_hits_steady = st.l2_hits - base[2]
        m.l2_misses_steady = st.l2_misses - base[3]
        m.walks = self.walker.walks
        m.max_active_walks = self.walker.max_active
        for app in self.apps:
            m.per_asid_retired[app.asid] = app.retired
            m.per_asid_cycles[app.asid] = app.finish_cycle
            m.per_asid_ipc[app.asid] = (
                app.retired / app.finish_cycle if app.finish_cycle else 0.0)
            m.retired += app.retired
        m.ipc = m.retired / m.cycles if m.cycles else 0.0
        for stps in self.pager.stats.values():
            m.faults += stps.faults
            m.bytes_over_bus += stps.bytes_over_bus
            m.prefault_bytes += stps.prefault_bytes
            m.prefault_bus_cycles += stps.prefault_bus_cycles
            m.fault_stall_cycles += stps.fault_stall_cycles
        mgr = self.manager
        m.frames_checked = mgr.coalescer.stats.frames_checked
        m.frames_coalesced = mgr.coalescer.stats.frames_coalesced
        m.splinters = mgr.compactor.splinters
        m.compactions = mgr.compactor.compactions
        m.migrated_pages = mgr.compactor.migrated_pages
        m.freed_frames = mgr.compactor.freed_frames
        m.compaction_stall_cycles = self.compaction_stall_cycles
        m.soft_violations = mgr.allocator.soft_violations
        m.mixed_frames = mgr.allocator.mixed_frames
        bloats = [mgr.allocator.memory_bloat(a.asid) for a in self.apps]
        m.memory_bloat = max(bloats) if bloats else 1.0
        m.oracle_mismatches = mgr.oracle.mismatches
        m.content_mismatches = mgr.verify_contents()
        m.intervals = self.intervals
        return m


def _runs(pages):
    """Consecutive (lo, hi) runs of a sorted page list."""
    runs = []
    start = prev = None
    for p in pages:
        if start is None:
            start = prev = p
        elif p == prev + 1:
            prev = p
        else:
            runs.append((start, prev))
            start = prev = p
    if start is not None:
        runs.append((start, prev))
    return runs


def run(config: RunConfig, app_traces=None) -> MetricSet:
    """Run one simulation to completion."""
    return SimEngine(config, app_traces).run()


def weighted_speedup(shared: MetricSet, alone: list) -> float:
    """Sum over apps of IPC running together over IPC running alone."""
    asids = sorted(shared.per_asid_ipc)
    if len(alone) != len(asids):
        raise ValueError("need one alone run per application")
    total = 0.0
    for asid, alone_m in zip(asids, alone):
        alone_ipcs = list(alone_m.per_asid_ipc.values())
        if len(alone_ipcs) != 1 or alone_ipcs[0] == 0:
            raise ValueError(f"alone IPC for asid {asid} missing or zero")
        total += shared.per_asid_ipc[asid] / alone_ipcs[0]
    return total
