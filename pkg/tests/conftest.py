import numpy as np
import pytest

from maxstab.climate_space import StationCoords
from maxstab.data_io import MaximaPanel


def random_stations(n, seed=0, box=100.0, with_mean=True):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        out.append(StationCoords(
            lon=float(rng.uniform(0, box)), lat=float(rng.uniform(0, box)),
            elev=float(rng.uniform(0, 2)), region_signed_dist=float(rng.uniform(-50, 50)),
            mean_level=float(rng.uniform(10, 100)) if with_mean else None,
            station_id=f"st{k}",
        ))
    return tuple(out)


def frechet_panel(n_stations=5, n_years=20, seed=0):
    rng = np.random.default_rng(seed)
    Z = 1.0 / rng.exponential(size=(n_years, n_stations))
    return MaximaPanel(random_stations(n_stations, seed), tuple(range(2000, 2000 + n_years)), Z,
                       "frechet")


@pytest.fixture
def small_panel():
    return frechet_panel()


_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record the verdict line for an acceptance criterion."""
    def record(number: int, ok: bool, detail: str, seconds: float):
        _ACCEPTANCE[number] = f"{'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f}s]"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"ACCEPTANCE {number:2d} {_ACCEPTANCE[number]}")
