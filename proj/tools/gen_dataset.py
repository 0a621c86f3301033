#!/usr/bin/env python3
"""Generate the bundled synthetic price dataset.

Three base index paths and nine world indices are simulated as geometric
Brownian motion on a shared business-day calendar (2006-2009). Playable
series are 55-point windows cut from the base paths: 10 bullish, 10 bearish
and 10 flat by total log-return over the last 25 points, with no zero-change
steps. Output is deterministic for a given seed.

    python3 tools/gen_dataset.py [--out data] [--seed 20090101]
"""

import argparse
import datetime as dt
import json
import math
from pathlib import Path

import numpy as np

BASES = {"IBEX": 11000.0, "DAX": 5500.0, "SP500": 1250.0}
WORLD = {
    "FTSE": 5600.0, "CAC40": 4700.0, "MIB": 35000.0, "AEX": 450.0, "SMI": 7600.0,
    "NIKKEI": 16000.0, "HANGSENG": 15000.0, "DJIA": 10700.0, "NASDAQ": 2200.0,
}
WINDOW = 55
PLAYABLE = 25
THRESHOLD = 0.02
PER_LABEL = 10


def business_days(start, end):
    d = start
    out = []
    while d <= end:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += dt.timedelta(days=1)
    return out


def gbm(rng, n, start, vol):
    # Regime-switching drift so the path has real trends in both directions.
    drift = np.repeat(rng.normal(0.0, 0.004, size=n // 20 + 1), 20)[:n]
    steps = drift + rng.normal(0.0, vol, size=n)
    steps[0] = 0.0
    return np.round(start * np.exp(np.cumsum(steps)), 2)


def label_of(closes):
    r = math.log(closes[-1] / closes[WINDOW - PLAYABLE])
    if r > THRESHOLD:
        return "bullish", r
    if r < -THRESHOLD:
        return "bearish", r
    return "flat", r


def write_csv(path, dates, closes):
    with open(path, "w", newline="\n") as f:
        f.write("date,close\n")
        for d, c in zip(dates, closes):
            f.write(f"{d},{c:.2f}\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--seed", type=int, default=20090101)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    dates = business_days(dt.date(2006, 1, 2), dt.date(2009, 12, 31))
    n = len(dates)
    out = Path(args.out)
    (out / "series").mkdir(parents=True, exist_ok=True)
    (out / "world").mkdir(parents=True, exist_ok=True)

    paths = {sym: gbm(rng, n, start, 0.013) for sym, start in BASES.items()}
    world = {sym: gbm(rng, n, start, 0.012) for sym, start in WORLD.items()}

    # Candidate windows with a clear margin from the threshold so labels are
    # not sensitive to rounding.
    candidates = {"bullish": [], "bearish": [], "flat": []}
    for sym, closes in paths.items():
        for start in range(40, n - WINDOW, 7):
            w = closes[start:start + WINDOW]
            if np.any(np.diff(w) == 0):
                continue
            label, r = label_of(w)
            if label == "flat" and abs(r) > 0.01:
                continue
            if label != "flat" and abs(r) < 0.04:
                continue
            candidates[label].append((sym, start))

    chosen = []
    for label in ("bullish", "bearish", "flat"):
        pool = candidates[label]
        order = rng.permutation(len(pool))
        taken = []
        for i in order:
            sym, start = pool[i]
            # Playable windows of one base path must not overlap.
            if any(s == sym and abs(start - t) < WINDOW for s, t in taken):
                continue
            taken.append((sym, start))
            if len(taken) == PER_LABEL:
                break
        if len(taken) < PER_LABEL:
            raise SystemExit(f"only {len(taken)} {label} windows; try another seed")
        chosen += [(label, sym, start) for sym, start in sorted(taken, key=lambda x: (x[0], x[1]))]

    manifest = {"series": [], "world": []}
    for k, (label, sym, start) in enumerate(chosen, 1):
        name = f"{sym.lower()}_{k:02d}"
        write_csv(out / "series" / f"{name}.csv", dates[start:start + WINDOW], paths[sym][start:start + WINDOW])
        meta = {"symbol": f"{sym}-{k:02d}", "playable_offset": WINDOW - PLAYABLE, "trend": label,
                "synthetic": True, "base": sym}
        (out / "series" / f"{name}.json").write_text(json.dumps(meta, indent=2) + "\n")
        manifest["series"].append({"csv": f"series/{name}.csv", "meta": f"series/{name}.json"})

    for sym, closes in world.items():
        write_csv(out / "world" / f"{sym.lower()}.csv", dates, closes)
        manifest["world"].append({"symbol": sym, "csv": f"world/{sym.lower()}.csv"})

    manifest["generator"] = {"script": "tools/gen_dataset.py", "seed": args.seed, "synthetic": True}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
