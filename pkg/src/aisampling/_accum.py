import numpy as np


def seq_add(total, contributions):
    """``total + c[0] + c[1] + ...`` summed strictly left to right.

    numpy's ``sum`` is pairwise, so a batch sum and a one-at-a-time loop can
    disagree in the last bits; ``cumsum`` is a sequential scan and does not.
    """
    contributions = np.asarray(contributions, dtype=float)
    if contributions.shape[0] == 0:
        return np.array(total, dtype=float, copy=True)
    stacked = np.concatenate([np.asarray(total, dtype=float)[None], contributions])
    return np.cumsum(stacked, axis=0)[-1]
