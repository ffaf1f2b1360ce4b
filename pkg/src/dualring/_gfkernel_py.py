"""Pure numpy implementation of the fold kernel (fallback and oracle twin)."""
import numpy as np

_CHUNK_WORDS = 1 << 22


def vecmat(share, flat, block, exp, log):
    """XOR-accumulate ``share[j] * flat[j*block:(j+1)*block]`` over j."""
    share = np.asarray(share)
    flat = np.asarray(flat)
    n = flat.shape[0]
    acc = np.zeros(block, dtype=np.uint32)
    rows = max(1, _CHUNK_WORDS // max(block, 1))
    nz = np.flatnonzero(share)
    nz = nz[nz * block < n]
    for lo in range(0, len(nz), rows):
        idx = nz[lo:lo + rows]
        full = idx[(idx + 1) * block <= n]
        if len(full):
            words = flat[:len(flat) - len(flat) % block].reshape(-1, block)[full]
            prod = exp[log[share[full]][:, None] + log[words]]
            prod[words == 0] = 0
            acc ^= np.bitwise_xor.reduce(prod, axis=0)
        for j in idx[(idx + 1) * block > n]:
            tail = flat[j * block:]
            prod = exp[log[share[j]] + log[tail]]
            prod[tail == 0] = 0
            acc[:len(tail)] ^= prod
    return acc
