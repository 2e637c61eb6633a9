import numpy as np
import pytest

from irnn.datapipe import SequenceSet, TimeSeriesSample


def make_sample(rng, D, T, valid_len=None, label=None, sample_id="s"):
    """Random grid with realistic structure: normalized values, elapsed in [0, 1], binary mask."""
    valid_len = T if valid_len is None else valid_len
    values = rng.normal(size=(T, D))
    elapsed = rng.uniform(0.0, 1.0, size=(T, D))
    mask = (rng.uniform(size=(T, D)) < 0.5).astype(float)
    times = np.cumsum(rng.uniform(0.1, 1.0, size=T))
    for a in (values, elapsed, mask):
        a[valid_len:] = 0.0
    times[valid_len:] = 0.0
    if label is None:
        label = int(rng.integers(2))
    return TimeSeriesSample(values, elapsed, mask, valid_len, label, sample_id, times)


def make_set(rng, N, D, T, min_len=1):
    samples = []
    for i in range(N):
        L = int(rng.integers(min_len, T + 1))
        samples.append(make_sample(rng, D, T, L, label=i % 2, sample_id=f"s{i}"))
    return SequenceSet.from_samples(samples, [f"x{d}" for d in range(D)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
