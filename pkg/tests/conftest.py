import pytest

from gvmsim.config import run_config_from_dict
from gvmsim.engine import run


@pytest.fixture(scope="session")
def small_runs():
    """One small 2-app run per mode, shared across engine tests."""
    out = {}
    for mode in ("gpu_mmu", "mosaic", "ideal"):
        cfg = run_config_from_dict({
            "cores": 4, "warps_per_core": 4, "seed": 3, "mode": mode,
            "workload": {"category": "homogeneous", "num_apps": 2,
                         "profile": {"name": "smallset"}},
        })
        out[mode] = run(cfg)
    return out
