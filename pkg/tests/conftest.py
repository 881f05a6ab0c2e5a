import numpy as np
import pytest


def finite_difference_check(build_loss, params, rng, n_probes=20,
                            h=1e-5, rtol=1e-4):
    """Compare tape gradients against central differences.

    build_loss(tape_or_none) must rebuild the same loss from scratch on
    every call (any sampling frozen outside).  Probes are random
    (parameter, coordinate) pairs.  Returns the max relative error.
    """
    from marllab.tensor import Tape, backprop

    params.zero_grads()
    tape = Tape()
    loss = build_loss(tape)
    backprop(tape, loss)
    grads = {name: (node.grad.copy() if node.grad is not None
                    else np.zeros_like(node.value))
             for name, node in params.items()}

    names = params.names()
    worst = 0.0
    for _ in range(n_probes):
        name = names[rng.integers(len(names))]
        node = params[name]
        flat = node.value.reshape(-1)
        i = int(rng.integers(flat.size))
        orig = flat[i]
        flat[i] = orig + h
        up = float(build_loss(None).value)
        flat[i] = orig - h
        down = float(build_loss(None).value)
        flat[i] = orig
        fd = (up - down) / (2.0 * h)
        ad = float(grads[name].reshape(-1)[i])
        if abs(fd) < 1e-9 and abs(ad) < 1e-9:
            continue
        rel = abs(fd - ad) / max(abs(fd), abs(ad))
        worst = max(worst, rel)
        assert rel < rtol, f"{name}[{i}]: fd={fd} ad={ad} rel={rel}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
