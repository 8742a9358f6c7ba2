import numpy as np
import pytest

from rulnet import RulModel, Tensor
from rulnet import autodiff as ad
from rulnet.data import parse_cmapss, parse_rul_truth
from rulnet.synthetic import generate_dataset


def build_tiny_model(seed=0, mode="F+T", dtype=np.float64, dropout=0.0):
    """4-channel, 6-step model, 2 heads per axis, hidden 8."""
    rng = np.random.default_rng(seed)
    model = RulModel(
        n_features=4,
        window=6,
        mode=mode,
        feature_heads=2,
        sequence_heads=2,
        lstm_hidden=8,
        lstm_layers=3,
        mlp_hidden=8,
        dropout=dropout,
        init_rng=rng,
        dtype=dtype,
    )
    # Keep every rectifier preactivation away from its kink so central
    # finite differences stay valid around the test point.
    model.head.b1.data += 0.05
    return model, rng


@pytest.fixture
def tiny_model():
    return build_tiny_model()[0]


@pytest.fixture(scope="session")
def synth1(tmp_path_factory):
    """Small single-condition dataset plus parsed contents."""
    root = tmp_path_factory.mktemp("synth1")
    ds = generate_dataset(root, name="S1", n_train=16, n_test=8, n_conditions=1, seed=5)
    return {
        "ds": ds,
        "train": parse_cmapss(ds.train_path),
        "test": parse_cmapss(ds.test_path),
        "truth": parse_rul_truth(ds.truth_path),
    }


@pytest.fixture(scope="session")
def synth6(tmp_path_factory):
    """Small six-condition dataset plus parsed contents."""
    root = tmp_path_factory.mktemp("synth6")
    ds = generate_dataset(root, name="M6", n_train=16, n_test=8, n_conditions=6, seed=9)
    return {
        "ds": ds,
        "train": parse_cmapss(ds.train_path),
        "test": parse_cmapss(ds.test_path),
        "truth": parse_rul_truth(ds.truth_path),
    }


def rand_tensor(rng, *shape, requires_grad=True, shift=0.0):
    return Tensor(rng.standard_normal(shape) + shift, requires_grad=requires_grad, dtype=np.float64)


def scalar_loss(t):
    """Quadratic scalar readout used by gradient checks."""
    return ad.mean(ad.mul(t, t))
