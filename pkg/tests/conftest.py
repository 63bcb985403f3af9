import numpy as np
import pytest

from fedtdd.data import MissingnessConfig, build_partition, generate_synthetic_source


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_partition():
    src = generate_synthetic_source(400, 4, seed=3)
    return build_partition(src, MissingnessConfig(0.5, 0.5, 0.5, rng_seed=7), n_clients=2,
                           common_fraction=0.5, length=12)


ACCEPTANCE: dict[str, list[tuple[str, bool, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion this test checks")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    cid = str(marker.args[0])
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    ok = call.excinfo is None
    if not ok and not detail:
        detail = call.excinfo.exconly().splitlines()[0][:160]
    ACCEPTANCE.setdefault(cid.rstrip("abcdefgh"), []).append((cid, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c)):
        parts = ACCEPTANCE[cid]
        ok = all(p[1] for p in parts)
        detail = " | ".join(f"{p[0]}: {'ok' if p[1] else 'FAILED'} {p[2]}".strip() for p in parts)
        tr.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")
