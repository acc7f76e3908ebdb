"""Independent reference implementations shared by test modules."""

import itertools

import numpy as np


def lt_oracle(lt, v: np.ndarray) -> np.ndarray:
    """Scalar-loop reference for grouped local temporal mixing: group g owns
    output columns [g*C/G, (g+1)*C/G) of the fused projection and kernel
    row g."""
    Tn, L, C = v.shape
    G = lt.groups
    cg = C // G
    mid = np.zeros((Tn, L, C))
    for loc in range(L):
        for g in range(G):
            cols = slice(g * cg, (g + 1) * cg)
            W = lt.proj.weight.data[:, cols]
            b = lt.proj.bias.data[cols]
            k = lt.kernels.data[g]
            half = len(k) // 2
            seq = v[:, loc, :] @ W + b
            conv = np.zeros_like(seq)
            for t in range(Tn):
                for j in range(len(k)):
                    s = t + j - half
                    if 0 <= s < Tn:
                        conv[t] += k[j] * seq[s]
            mid[:, loc, cols] = np.maximum(conv, 0.0)
    return mid @ lt.out_proj.weight.data + lt.out_proj.bias.data


def exhaustive_best(step_fn, vocab: int, length: int):
    """Highest unnormalized log-prob sequence by full enumeration."""
    best = None
    for seq in itertools.product(range(vocab), repeat=length):
        lp = 0.0
        for i, tok in enumerate(seq):
            lp += float(step_fn(list(seq[:i]))[tok])
        if best is None or lp > best[1]:
            best = (list(seq), lp)
    return best[0]
