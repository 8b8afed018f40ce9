"""Shared fixtures and generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from lipscope.network import Network, random_network


def draw_layer_sizes(rng, max_depth=4, max_width=16, min_input=2, sandwich_safe=True):
    """Random MLP layer sizes [n_0, ..., n_{d-1}, 1].

    With ``sandwich_safe`` the first hidden width never exceeds the
    input dim, which keeps the first-layer singular-value sandwich a
    theorem (a taller first layer admits backward vectors in its left
    null space, where the lower bound genuinely fails).
    """
    depth = int(rng.integers(2, max_depth + 1))
    n0 = int(rng.integers(min_input, max_width + 1))
    sizes = [n0]
    for l in range(depth - 1):
        hi = min(n0, max_width) if (l == 0 and sandwich_safe) else max_width
        sizes.append(int(rng.integers(1, hi + 1)))
    sizes.append(1)
    return sizes


def random_net(rng, head="identity", max_depth=4, max_width=16, sandwich_safe=True):
    sizes = draw_layer_sizes(rng, max_depth=max_depth, max_width=max_width,
                             sandwich_safe=sandwich_safe)
    return random_network(sizes, head=head, seed=int(rng.integers(2**32)))


def quadrant_net():
    """relu(u) + relu(v): four linear regions with slopes {0, 1, 1, sqrt(2)}."""
    return Network(
        weights=[np.eye(2), np.array([[1.0, 1.0]])],
        biases=[np.zeros(2), np.zeros(1)],
        activations=["relu", "identity"],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)
