import numpy as np
import pytest

from ads3d import dsp, eegio, synthgen


@pytest.fixture(scope="session")
def small_corpus():
    """Planted corpus small enough for unit tests (10 trials per class)."""
    return synthgen.generate(
        synthgen.default_paper_template(n_trials_per_class=10, seed=77))


@pytest.fixture(scope="session")
def small_preprocessed(small_corpus):
    data, fs = dsp.preprocess_array(
        small_corpus.data.astype(np.float64), small_corpus.fs)
    return eegio.EpochSet(data=data, labels=small_corpus.labels, fs=fs,
                          channel_names=small_corpus.channel_names)
