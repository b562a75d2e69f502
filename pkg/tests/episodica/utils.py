import numpy as np

from episodica import tensor as T
from episodica.tensor import Tape, Tensor, precision

STEP = 1e-6


def _scalar(out, weights):
    if out.shape == ():
        return out
    return T.sum(T.reshape(T.mul(out, Tensor(weights)), (out.size,)))


def gradcheck(fn, *arrays, seed=0):
    """Largest relative error between tape gradients and central differences.

    ``fn`` maps tensors to a tensor; non-scalar outputs are reduced against a
    fixed random weighting.
    """
    rng = np.random.default_rng(seed)
    with precision(np.float64):
        inputs = [Tensor(a) for a in arrays]
        with Tape() as tape:
            out = fn(*inputs)
            weights = rng.normal(size=out.shape)
            loss = _scalar(out, weights)
        analytic = [g.data for g in T.backward(loss, tape, inputs)]

        def value(values):
            return _scalar(fn(*[Tensor(v) for v in values]), weights).item()

        worst = 0.0
        for index, array in enumerate(arrays):
            numeric = np.zeros(array.shape)
            for position in np.ndindex(array.shape):
                plus = [np.array(a, dtype=np.float64) for a in arrays]
                minus = [np.array(a, dtype=np.float64) for a in arrays]
                plus[index][position] += STEP
                minus[index][position] -= STEP
                numeric[position] = (value(plus) - value(minus)) / (2 * STEP)
            scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic[index]), 1e-8)
            worst = max(worst, np.linalg.norm(numeric - analytic[index]) / scale)
    return worst


def unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)
