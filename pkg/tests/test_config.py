import pytest

from gvmsim.config import RunConfig, load_run_config, run_config_from_dict
from gvmsim.errors import ConfigError


def test_defaults_reflect_modeled_machine():
    cfg = RunConfig().validate()
    assert cfg.cores == 30
    assert cfg.warps_per_core == 48
    assert cfg.memory_bytes == 3 * 1024 ** 3
    assert cfg.dram_channels == 6
    assert cfg.dram_latency == 100
    assert cfg.tlb.l1_base_entries == 128
    assert cfg.tlb.l1_large_entries == 16
    assert cfg.tlb.l2_base_entries == 512
    assert cfg.tlb.l2_base_ways == 16
    assert cfg.tlb.l2_large_entries == 256
    assert cfg.tlb.l2_latency == 10
    assert cfg.tlb.l2_ports == 2
    assert cfg.tlb.mshr_capacity == 64
    assert cfg.walker.max_concurrent_walks == 64
    assert cfg.bus.overhead_cycles == 20000
    assert cfg.bus.bytes_per_cycle == 16
    assert cfg.compaction.splinter_threshold == 0.5
    assert cfg.compaction.per_page_copy_cycles == 200
    assert cfg.mode == "mosaic"
    assert cfg.paging == "prefault"


def test_unknown_fields_rejected():
    with pytest.raises(ConfigError, match="unknown config field"):
        run_config_from_dict({"coresss": 4})
    with pytest.raises(ConfigError, match="unknown tlb field"):
        run_config_from_dict({"tlb": {"l1_entries": 4}})
    with pytest.raises(ConfigError, match="unknown workload field"):
        run_config_from_dict({"workload": {"apps": 2}})


def test_validation_names_the_field():
    with pytest.raises(ConfigError, match="tlb.l1_base_entries"):
        run_config_from_dict({"tlb": {"l1_base_entries": 0}})
    with pytest.raises(ConfigError, match="mode"):
        run_config_from_dict({"mode": "turbo"})
    with pytest.raises(ConfigError, match="paging"):
        run_config_from_dict({"paging": "lazy"})
    with pytest.raises(ConfigError, match="warmup_fraction"):
        run_config_from_dict({"warmup_fraction": 1.5})
    with pytest.raises(ConfigError, match="splinter_threshold"):
        run_config_from_dict({"compaction": {"splinter_threshold": 2}})


def test_yaml_roundtrip(tmp_path):
    p = tmp_path / "run.yaml"
    p.write_text(
        "mode: gpu_mmu\n"
        "seed: 9\n"
        "cores: 4\n"
        "tlb: {l1_base_entries: 64}\n"
        "workload:\n"
        "  category: homogeneous\n"
        "  num_apps: 2\n"
        "  profile: {name: stream, accesses_per_warp: 10}\n")
    cfg = load_run_config(p)
    assert cfg.mode == "gpu_mmu" and cfg.seed == 9 and cfg.cores == 4
    assert cfg.tlb.l1_base_entries == 64
    assert cfg.tlb.l1_large_entries == 16        # untouched default
    assert cfg.workload.profile.name == "stream"
    assert cfg.workload.profile.accesses_per_warp == 10


def test_empty_yaml_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    assert load_run_config(p).cores == 30


def test_section_must_be_mapping():
    with pytest.raises(ConfigError, match="tlb section"):
        run_config_from_dict({"tlb": [1, 2]})
