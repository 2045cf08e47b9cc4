import numpy as np
import pytest

from wattsplit.timeseries import AlignedDataset, PowerSeries

T0 = 1_394_000_000  # an arbitrary 2014 UTC timestamp


def series(values, start=T0, period=60, label="ch"):
    return PowerSeries(start, period, np.asarray(values, dtype=np.float64), label)


def dataset(aggregate, appliances, start=T0, period=60):
    agg = series(aggregate, start, period, "aggregate")
    apps = tuple(series(v, start, period, f"app{i}") for i, v in enumerate(appliances))
    return AlignedDataset(agg, apps)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
