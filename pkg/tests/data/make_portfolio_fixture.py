"""Regenerate synthetic_prices.csv and its expected selection table.

The expected table is computed here with plain Python loops, independently of
the ebh package.  Run from any directory:

    python3 tests/data/make_portfolio_fixture.py
"""

import csv
import math
import random
from pathlib import Path

HERE = Path(__file__).parent
T = 24
N_ASSETS = 40
LAMBDA = 0.5
ALPHAS = (0.05, 0.1)
UNIVERSES = ("10", "20", "all")


def make_series(rng):
    rows = []
    for i in range(N_ASSETS):
        kind = ("grow" if i % 7 == 0 else "pump" if i % 11 == 3 else "dead" if i % 9 == 4 else "null")
        price = 100.0
        path = [price]
        for t in range(1, T + 1):
            if kind == "grow":
                x = math.exp(0.4 + 0.05 * rng.gauss(0, 1))
            elif kind == "pump":
                x = math.exp(1.0 if t <= 12 else -1.5)
            else:
                x = math.exp(0.2 * rng.gauss(0, 1) - 0.02)
            price *= x
            path.append(float(f"{price:.6g}"))
        if kind == "dead":
            path = path[: 6 + i % 5]
        rank = (i * 17) % N_ASSETS + 1
        rows.append((f"A{i:02d}", rank, path))
    return rows


def wealth_evidence(path, lam):
    if len(path) < T + 1:
        return 0.0, 1.0
    w, peak = 1.0, 1.0
    for a, b in zip(path, path[1:]):
        w *= 1 - lam + lam * (b / a)
        peak = max(peak, w)
    return w, 1.0 / peak


def oracle_ebh(e, alpha):
    K = len(e)
    best = 0
    for k in range(1, K + 1):
        if sum(1 for v in e if v >= K / (alpha * k)) >= k:
            best = k
    if best == 0:
        return set()
    return {i for i, v in enumerate(e) if v >= K / (alpha * best)}


def oracle_by(p, alpha):
    K = len(p)
    ell = sum(1.0 / j for j in range(1, K + 1))
    best = 0
    for k in range(1, K + 1):
        if sum(1 for v in p if v <= alpha * k / (K * ell)) >= k:
            best = k
    if best == 0:
        return set()
    cut = sorted(p)[best - 1]
    return {i for i, v in enumerate(p) if v <= cut}


def main():
    rows = make_series(random.Random(20240517))
    with open(HERE / "synthetic_prices.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "rank"] + [f"Y{t}" for t in range(T + 1)])
        for aid, rank, path in rows:
            w.writerow([aid, rank] + [repr(v) for v in path] + [""] * (T + 1 - len(path)))

    ordered = sorted(rows, key=lambda r: r[1])
    table = []
    for alpha in ALPHAS:
        for method in ("eBH", "BY"):
            counts = []
            for u in UNIVERSES:
                uni = ordered if u == "all" else ordered[: int(u)]
                ev = [wealth_evidence(path, LAMBDA) for _, _, path in uni]
                if method == "eBH":
                    sel = oracle_ebh([e for e, _ in ev], alpha)
                else:
                    sel = oracle_by([p for _, p in ev], alpha)
                counts.append(len(sel))
            table.append([method, repr(alpha)] + counts)
    with open(HERE / "synthetic_prices_expected.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["# lambda", LAMBDA])
        w.writerow(["method", "alpha"] + list(UNIVERSES))
        w.writerows(table)


if __name__ == "__main__":
    main()
