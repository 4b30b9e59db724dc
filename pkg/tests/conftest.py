import random
from pathlib import Path

import pytest

from campus_discovery.model import (
    ClusterView,
    HostRecord,
    MetricKind,
    MetricSample,
)

DATA_DIR = Path(__file__).parent / "data"


def _host_a() -> HostRecord:
    t_static, t_dyn = 1700000050, 1700000090
    samples = [
        MetricSample("cpu.count", 8, MetricKind.STATIC, t_static, 86400),
        MetricSample("cpu.mhz", 2400.0, MetricKind.STATIC, t_static, 86400, units="MHz"),
        MetricSample("cpu.model", "Intel Xeon E5-2650", MetricKind.STATIC, t_static, 86400),
        MetricSample("cpu.util_pct", 12.5, MetricKind.DYNAMIC, t_dyn, 60, units="%"),
        MetricSample("disk.free_mb", 51200, MetricKind.DYNAMIC, t_dyn, 60, units="MB"),
        MetricSample("load.fifteen", 0.08, MetricKind.DYNAMIC, t_dyn, 60),
        MetricSample("load.five", 0.15, MetricKind.DYNAMIC, t_dyn, 60),
        MetricSample("load.one", 0.42, MetricKind.DYNAMIC, t_dyn, 60),
        MetricSample("mem.free_mb", 9216, MetricKind.DYNAMIC, t_dyn, 60, units="MB"),
        MetricSample("mem.total_mb", 16384, MetricKind.STATIC, t_static, 86400, units="MB"),
        MetricSample("os.name", "Linux", MetricKind.STATIC, t_static, 86400),
        MetricSample("os.release", "5.15.0", MetricKind.STATIC, t_static, 86400),
    ]
    return HostRecord(
        host_id="node-a.campus.edu",
        cluster="lab",
        agent_version="0.1.0",
        heartbeat_at=1700000100,
        samples={s.name: s for s in samples},
    )


def _host_b() -> HostRecord:
    t_static, t_dyn = 1700000060, 1700000095
    samples = [
        MetricSample("cpu.count", 2, MetricKind.STATIC, t_static, 86400),
        MetricSample("cpu.mhz", 3100.0, MetricKind.STATIC, t_static, 86400, units="MHz"),
        MetricSample("cpu.model", "AMD Ryzen 5 3600", MetricKind.STATIC, t_static, 86400),
        MetricSample("cpu.util_pct", 88.25, MetricKind.DYNAMIC, t_dyn, 60, units="%"),
        MetricSample("disk.free_mb", 20480, MetricKind.DYNAMIC, t_dyn, 60, units="MB"),
        MetricSample("load.fifteen", 1.5, MetricKind.DYNAMIC, t_dyn, 60),
        MetricSample("load.five", 2.25, MetricKind.DYNAMIC, t_dyn, 60),
        MetricSample("load.one", 3.5, MetricKind.DYNAMIC, t_dyn, 60),
        MetricSample("mem.free_mb", 512, MetricKind.DYNAMIC, t_dyn, 60, units="MB"),
        MetricSample("mem.total_mb", 8192, MetricKind.STATIC, t_static, 86400, units="MB"),
        MetricSample("os.name", "Windows", MetricKind.STATIC, t_static, 86400),
        MetricSample("os.release", "10", MetricKind.STATIC, t_static, 86400),
    ]
    return HostRecord(
        host_id="node-b.campus.edu",
        cluster="lab",
        agent_version="0.1.0",
        heartbeat_at=1700000110,
        samples={s.name: s for s in samples},
    )


def golden_view() -> ClusterView:
    """The two-host view whose canonical bytes are committed in data/."""
    a, b = _host_a(), _host_b()
    return ClusterView(
        name="lab",
        hosts={a.host_id: a, b.host_id: b},
        generated_at=1700000000,
    )


def golden_bytes() -> bytes:
    return (DATA_DIR / "golden_cluster.xml").read_bytes()


# --- randomized view generation (shared by round-trip and query tests) -------

_NAME_PARTS = ["cpu", "mem", "disk", "load", "net", "os", "gpu", "io"]
_NAME_LEAVES = ["one", "five", "count", "util", "free_mb", "total_mb", "name", "temp_c"]
_STRING_POOL = ["Linux", "Windows", "Fedora", "up", "down", "a b c", 'say "hi"', "<tag>&", ""]
_UNITS_POOL = ["", "MB", "MHz", "%", "s"]


def random_sample(rng: random.Random, name: str) -> MetricSample:
    type_roll = rng.randrange(4)
    if type_roll == 0:
        value = rng.choice(_STRING_POOL)
    elif type_roll == 1:
        value = rng.randint(-1000, 10**6)
    elif type_roll == 2:
        value = rng.choice([0.0, 0.5, 1.5, -2.25, 3.14159, 1e-9, 1e20, 1234.5678])
    else:
        value = rng.random() < 0.5
    return MetricSample(
        name=name,
        value=value,
        kind=rng.choice([MetricKind.STATIC, MetricKind.DYNAMIC]),
        collected_at=rng.randint(0, 2_000_000_000),
        ttl_seconds=rng.randint(1, 100_000),
        units=rng.choice(_UNITS_POOL),
    )


def random_metric_name(rng: random.Random) -> str:
    return f"{rng.choice(_NAME_PARTS)}.{rng.choice(_NAME_LEAVES)}"


def random_host(rng: random.Random, cluster: str, host_id: str) -> HostRecord:
    names = set()
    for _ in range(rng.randrange(0, 8)):
        names.add(random_metric_name(rng))
    samples = {name: random_sample(rng, name) for name in names}
    return HostRecord(
        host_id=host_id,
        cluster=cluster,
        agent_version=rng.choice(["0.1.0", "0.2.0-rc1", "dev"]),
        heartbeat_at=rng.randint(0, 2_000_000_000),
        samples=samples,
    )


def random_view(rng: random.Random) -> ClusterView:
    cluster = rng.choice(["lab", "physics", "cs-dept", "farm_01"])
    hosts = {}
    for i in range(rng.randrange(0, 6)):
        host_id = f"host-{rng.randrange(100)}.{cluster}.edu"
        if host_id in hosts:
            continue
        hosts[host_id] = random_host(rng, cluster, host_id)
    return ClusterView(name=cluster, hosts=hosts, generated_at=rng.randint(0, 2_000_000_000))


@pytest.fixture
def golden():
    return golden_view()
