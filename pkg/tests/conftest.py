import math

import numpy as np
import pytest

from dpc.config import RunConfig
from dpc.data.synthetic import MIKELS_CATEGORIES
from dpc.graph.tensor import precision
from dpc.models.encoders import ImageEncoder, ImageEncoderConfig, TextEncoder, TextEncoderConfig
from dpc.models.model_interface import EncoderPair, clear_cache
from dpc.prompting.vocab import TEMPLATE_PRESETS, Vocabulary
from dpc.training import trainer

BASE_CONFIG = {
    "optim": {"lr0": 0.1},
    "data": {"preprocess": {"mean": [0.5, 0.5, 0.5], "std": [0.5, 0.5, 0.5]}},
}


def make_config(tmp_path=None, **sections) -> RunConfig:
    data = {
        "optim": dict(BASE_CONFIG["optim"]),
        "data": {"preprocess": dict(BASE_CONFIG["data"]["preprocess"])},
    }
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    if tmp_path is not None:
        data.setdefault("paths", {})["output_dir"] = str(tmp_path)
    return RunConfig.model_validate(data)


@pytest.fixture
def vocabulary():
    return Vocabulary.build(list(TEMPLATE_PRESETS) + list(MIKELS_CATEGORIES))


def seeded_pair(vocabulary, seed: int = 0, dim: int = 32) -> EncoderPair:
    """Fresh seeded encoders at the current precision, never shared through the process cache."""
    return EncoderPair(
        ImageEncoder.build(ImageEncoderConfig(dim=dim), seed=seed),
        TextEncoder.build(TextEncoderConfig(len(vocabulary), dim=dim), seed=seed),
    )


@pytest.fixture
def encoders(vocabulary):
    return seeded_pair(vocabulary)


@pytest.fixture
def float64():
    with precision("float64"):
        yield


@pytest.fixture
def run_config(tmp_path):
    return make_config(tmp_path)


@pytest.fixture(scope="session")
def synthetic_context():
    """The certified synthetic task of config.yaml, prepared once."""
    clear_cache()
    return trainer.prepare_run(make_config())


# Plain numpy forward passes of the encoder layers, checked against the graph ops.
def reference_layer_norm(x, params, prefix):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * params[f"{prefix}.gamma"] + params[f"{prefix}.beta"]


def reference_dense(x, params, prefix):
    return x @ params[f"{prefix}.weight"] + params[f"{prefix}.bias"]


def reference_gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def reference_block(x, params, prefix, heads, causal=False):
    t, width = x.shape
    head = width // heads
    h = reference_layer_norm(x, params, f"{prefix}.ln_1")
    q, k, v = (reference_dense(h, params, f"{prefix}.attn.{name}").reshape(t, heads, head).transpose(1, 0, 2)
               for name in ("q", "k", "v"))
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(head)
    if causal:
        scores = scores + np.triu(np.full((t, t), -1e9), k=1)
    scores = np.exp(scores - scores.max(axis=-1, keepdims=True))
    attention = scores / scores.sum(axis=-1, keepdims=True)
    context = (attention @ v).transpose(1, 0, 2).reshape(t, width)
    x = x + reference_dense(context, params, f"{prefix}.attn.out")
    h = reference_layer_norm(x, params, f"{prefix}.ln_2")
    return x + reference_dense(reference_gelu(reference_dense(h, params, f"{prefix}.mlp.fc")), params,
                               f"{prefix}.mlp.proj")
