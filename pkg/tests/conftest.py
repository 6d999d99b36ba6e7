import numpy as np
import pytest

from cabr.data import CorpusItem, clear_item
from cabr.imaging import RowLabels
from cabr.phantom import PhantomParams, generate_phantom


def small_phantom(seed: int, size: int = 48):
    p = PhantomParams(height=size, width=size, vessel_count=(3, 6), thickness=(1.0, 4.0), seed=seed)
    return generate_phantom(p)


@pytest.fixture(scope="session")
def tiny_corpus() -> list[CorpusItem]:
    return [clear_item(f"p{i}", *small_phantom(i)) for i in range(3)]


@pytest.fixture
def striped_item() -> CorpusItem:
    img, mask = small_phantom(10)
    lab = np.zeros(img.height, np.uint8)
    lab[5:9] = 1
    lab[30:32] = 1
    return CorpusItem("striped", img, mask, RowLabels(lab))


# one line per acceptance criterion, printed at the end of every session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
