"""Min-max through the bi-level solver: the inner player maximizes.

``F(x, y) = |x|^2 - |y|^2 - 2<x, y>`` has its saddle point at the origin.
The run is repeated for two values of the factor ``kappa`` that scales the
inner player's drift target, so their success rates can be compared.

    python demos/minmax_saddle.py [--dim 3] [--runs 5]
"""

import argparse

from mscbo import ExperimentConfig, monte_carlo


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dim", type=int, default=3)
    parser.add_argument("--runs", type=int, default=5)
    args = parser.parse_args()

    small = {"N": 30, "M": 10, "Tx": 10.0}
    for kappa in (1.0, 0.2):
        cfg = ExperimentConfig(mode="minmax", problem="d", dim=args.dim,
                               params={**small, "kappa": kappa}, runs=args.runs)
        s = monte_carlo(cfg, workers=1)
        print(f"kappa={kappa}: success {s.success_rate:.0%}, mean error {s.mean_error:.3e}")


if __name__ == "__main__":
    main()
