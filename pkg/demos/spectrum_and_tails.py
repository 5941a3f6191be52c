"""Singular spectra and entanglement entropy of small tensors.

A random tensor spreads its weight over the whole spectrum, while the
solution of a Lyapunov equation with a rank-one right-hand side has a
rapidly decaying spectrum. The script prints both side by side.
"""

import numpy as np

from lowrank_lab import Splitting, Tensor, build_model, dense_solve, singular_spectrum, von_neumann_entropy


def describe(label, u, t):
    spec = singular_spectrum(u, t)
    ent = von_neumann_entropy(u, t)
    print(f"{label}: splitting {t.label}, D = {spec.D}")
    print("  r    sigma_r        tau_r")
    for r in range(1, spec.D + 1):
        print(f"  {r:<4d} {spec.values[r - 1]:.6e}  {spec.tail(r):.6e}")
    print(f"  entropy (sum p ln p) = {ent.sum_p_log_p:.6f}, conventional = {ent.conventional:.6f}\n")


def main():
    rng = np.random.default_rng(0)
    u = Tensor.random((6, 6), rng)
    describe("random 6x6", u / u.norm(), Splitting((1,), 2))

    A = build_model("lyapunov", {"A": list(range(1, 7))})
    b = Tensor.rank_one([np.ones(6) / np.sqrt(6)] * 2)
    x = dense_solve(A, b)
    describe("Lyapunov solution", x / x.norm(), Splitting((1,), 2))


if __name__ == "__main__":
    main()
