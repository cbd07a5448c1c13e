"""Closed-form perpetual American put under constant volatility.

With dX = sigma X dB and discount rate r (pricing form, drift r), the value is
v(x) = (K - b) (x / b)^(-g) above the exercise level b, where g = 2r / sigma^2
and b = g K / (1 + g) = 2rK / (2r + sigma^2).

Run directly to cross-check the closed form against value matching plus smooth
pasting solved numerically, and optionally against a `thresholds.csv` written
by `volstop price`:

    python3 python/perpetual_put_oracle.py --sigma 0.2 --rate 0.05 --strike 1 \
        --thresholds out/one_state_put/thresholds.csv
"""

import argparse
import csv
import sys

from scipy.optimize import brentq


def threshold(sigma, rate, strike):
    return 2.0 * rate * strike / (2.0 * rate + sigma**2)


def value(x, sigma, rate, strike):
    b = threshold(sigma, rate, strike)
    if x <= b:
        return strike - x
    return (strike - b) * (x / b) ** (-2.0 * rate / sigma**2)


def pasted_threshold(sigma, rate, strike):
    """Level where C x^-g meets K - x with matching slope, found by root search."""
    g = 2.0 * rate / sigma**2

    def slope_gap(b):
        c = (strike - b) * b**g
        return -g * c * b ** (-g - 1.0) + 1.0

    return brentq(slope_gap, 1e-9 * strike, strike * (1.0 - 1e-12), xtol=1e-15)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sigma", type=float, default=0.2)
    parser.add_argument("--rate", type=float, default=0.05)
    parser.add_argument("--strike", type=float, default=1.0)
    parser.add_argument("--thresholds", help="thresholds.csv from `volstop price` to compare (1% relative)")
    args = parser.parse_args()

    b = threshold(args.sigma, args.rate, args.strike)
    pasted = pasted_threshold(args.sigma, args.rate, args.strike)
    ok = abs(pasted - b) <= 1e-12 * args.strike
    print(f"closed form b* = {b!r}, smooth pasting root = {pasted!r}: {'PASS' if ok else 'FAIL'}")
    print(f"v(K) = {value(args.strike, args.sigma, args.rate, args.strike)!r}")

    if args.thresholds:
        with open(args.thresholds, newline="") as f:
            rows = list(csv.DictReader(f))
        if len(rows) != 1:
            print(f"expected one state, found {len(rows)}: FAIL")
            return 1
        grid_b = float(rows[0]["b"])
        rel = abs(grid_b - b) / b
        good = rel < 0.01
        print(f"grid b = {grid_b!r}, relative error {rel:.3e}: {'PASS' if good else 'FAIL'}")
        ok = ok and good
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
