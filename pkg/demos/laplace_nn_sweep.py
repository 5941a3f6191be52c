"""Condition number and decay exponent of Laplace-plus-neighbour operators.

The operator L + V has TT operator ranks of at most 3, and its condition
number stays bounded as the order d grows. The predicted decay exponent
therefore does not degenerate with d. The script prints the sweep table.
"""

from lowrank_lab import ExperimentConfig, run_d_sweep


def main():
    cfg = ExperimentConfig.from_dict({
        "mode": "d_sweep", "seed": 1,
        "sweep": {"d_list": list(range(2, 9)), "gamma_A": 1, "Gamma_A": 2, "Gamma_B": 1, "Gamma_C": 1},
    })
    report = run_d_sweep(cfg)
    table = report.tables["d_sweep"]
    keep = ["d", "kappa", "q", "exponent_R5", "kappa_certified", "r_A_max"]
    idx = [table["columns"].index(k) for k in keep]
    print("  ".join(f"{k:>15s}" for k in keep))
    for row in table["rows"]:
        print("  ".join(f"{row[i]:>15.6g}" if isinstance(row[i], float) else f"{str(row[i]):>15s}" for i in idx))
    print(f"\nlimit kappa = {report.spectral['kappa_limit']:.3f}, verdict: {report.verdict}")


if __name__ == "__main__":
    main()
