import pytest

from rampcast.ramps import build_label_set
from rampcast.timeseries import synth_duck


@pytest.fixture(scope="session")
def duck30():
    return synth_duck(seed=7, days=30)


@pytest.fixture(scope="session")
def duck30_labels(duck30):
    return build_label_set(duck30)


@pytest.fixture
def write_csv(tmp_path):
    """Write ``rows`` (list of lists, first row = header) to a CSV under tmp_path."""

    def _write(name, rows):
        path = tmp_path / name
        path.write_text("\n".join(",".join(str(c) for c in r) for r in rows) + "\n", encoding="utf-8")
        return path

    return _write
