"""Convert a libsvm BRISQUE regressor plus its feature ranges into the package model format.

The shipped ``brisque_live.bin`` was produced from the LIVE-trained
``allmodel`` file and the scaling ranges distributed with pybrisque 1.0:

    python scripts/convert_brisque_model.py path/to/allmodel src/stmdenoise/metrics/brisque_live.bin
"""

import argparse

import numpy as np

from stmdenoise.metrics.brisque import N_FEATURES, BrisqueModel

# (lower, upper) target range followed by per-feature (min, max), as used at training time.
LIVE_SCALER = [
    [-1, 1], [0.338, 10], [0.017204, 0.806612], [0.236, 1.642],
    [-0.123884, 0.20293], [0.000155, 0.712298], [0.001122, 0.470257],
    [0.244, 1.641], [-0.123586, 0.179083], [0.000152, 0.710456],
    [0.000975, 0.470984], [0.249, 1.555], [-0.135687, 0.100858],
    [0.000174, 0.684173], [0.000913, 0.534174], [0.258, 1.561],
    [-0.143408, 0.100486], [0.000179, 0.685696], [0.000888, 0.536508],
    [0.471, 3.264], [0.012809, 0.703171], [0.218, 1.046],
    [-0.094876, 0.187459], [1.5e-005, 0.442057], [0.001272, 0.40803],
    [0.222, 1.042], [-0.115772, 0.162604], [1.6e-005, 0.444362],
    [0.001374, 0.40243], [0.227, 0.996],
    [-0.117188, 0.098323], [3e-005, 0.531903],
    [0.001122, 0.369589], [0.228, 0.99], [-0.12243, 0.098658],
    [2.8e-005, 0.530092], [0.001118, 0.370399],
]


def parse_libsvm(path):
    header = {}
    coefs, vectors = [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line == "SV":
                break
            key, _, value = line.partition(" ")
            header[key] = value
        for line in f:
            parts = line.split()
            if not parts:
                continue
            coefs.append(float(parts[0]))
            v = np.zeros(N_FEATURES)
            for item in parts[1:]:
                idx, val = item.split(":")
                v[int(idx) - 1] = float(val)
            vectors.append(v)
    if header.get("svm_type") != "epsilon_svr" or header.get("kernel_type") != "rbf":
        raise ValueError(f"expected an epsilon-SVR with RBF kernel, got {header}")
    return float(header["gamma"]), float(header["rho"]), np.array(coefs), np.array(vectors)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("libsvm_model")
    ap.add_argument("output")
    args = ap.parse_args()
    gamma, rho, coefs, vectors = parse_libsvm(args.libsvm_model)
    (lower, upper), ranges = LIVE_SCALER[0], np.array(LIVE_SCALER[1:], dtype=float)
    model = BrisqueModel(gamma, rho, float(lower), float(upper), ranges, coefs, vectors)
    model.save(args.output)
    print(f"wrote {args.output}: {len(coefs)} support vectors")


if __name__ == "__main__":
    main()
