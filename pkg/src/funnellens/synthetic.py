"""Synthetic transaction-log generators for experiments and demos.

Each generator returns ``(rows, meta)``: delimited text rows (header
included) ready for ingestion, plus a dict describing the ground truth the
corpus encodes (constant baskets, a persona rule, planted behavior breaks,
or periodic visit gaps). Also runnable as a module:

    python3 -m funnellens.synthetic constant out.csv --seed 7
"""

from __future__ import annotations

import argparse
from datetime import datetime, timedelta

import numpy as np

HEADER = "TRAN_ID,CLIENT_ID,PROD_ID,TIMESTAMP,PROD_AMOUNT,PRODT_QTY"
_START = datetime(2024, 1, 1, 10, 0, 0)


def _session_rows(rows, client, tran, ts, products, rng):
    for prod in products:
        amount = round(float(rng.uniform(1.0, 30.0)), 2)
        qty = int(rng.integers(1, 4))
        rows.append(f"{tran},{client},{prod},{ts.isoformat(sep=' ')},{amount},{qty}")


def constant_basket_rows(n_funnels: int = 20, sessions_each: int = 5, n_products: int = 47,
                         basket_size: int = 3, seed: int = 0):
    """Every customer re-buys one fixed random basket, week after week."""
    rng = np.random.default_rng(seed)
    products = [f"p{i:03d}" for i in range(n_products)]
    rows = [HEADER]
    baskets = {}
    for c in range(n_funnels):
        client = f"c{c:03d}"
        basket = sorted(rng.choice(products, size=basket_size, replace=False))
        baskets[client] = list(basket)
        for s in range(sessions_each):
            ts = _START + timedelta(days=7 * s, hours=c % 12)
            _session_rows(rows, client, f"{client}s{s}", ts, basket, rng)
    return rows, {"baskets": baskets}


def rule_rows(n_persona: int = 28, n_noise: int = 10, seed: int = 0):
    """Persona rule corpus: a basket {A,B} is always followed by {C,D}.

    Noise shoppers come first and a catalog walker enumerates every filler
    product, so all fillers get lower vocabulary indices than the rule
    items; the frequency baseline's tie-breaking then cannot back into C/D.
    Persona funnels run F,F,AB,CD,F,AB,CD; the final CD is the evaluation
    target once the last session is held out.
    """
    rng = np.random.default_rng(seed)
    fillers = [f"f{i:02d}" for i in range(40)]
    rule_in = ["ruleA", "ruleB"]
    rule_out = ["ruleC", "ruleD"]
    rows = [HEADER]

    noise_clients = [f"noise{i:02d}" for i in range(n_noise)]
    for i, client in enumerate(noise_clients):
        if i == 0:  # walks the whole filler catalogue, 8 per week
            for s in range(5):
                ts = _START + timedelta(days=7 * s)
                _session_rows(rows, client, f"{client}s{s}", ts, fillers[8 * s:8 * s + 8], rng)
            continue
        n_sessions = int(rng.integers(5, 8))
        for s in range(n_sessions):
            ts = _START + timedelta(days=7 * s, hours=i)
            basket = sorted(rng.choice(fillers, size=4, replace=False))
            _session_rows(rows, client, f"{client}s{s}", ts, basket, rng)

    persona_clients = [f"persona{i:02d}" for i in range(n_persona)]
    for i, client in enumerate(persona_clients):
        pool = list(rng.choice(fillers, size=12, replace=False))
        filler_sessions = [sorted(pool[0:4]), sorted(pool[4:8]), sorted(pool[8:12])]
        plan = [filler_sessions[0], filler_sessions[1], rule_in, rule_out,
                filler_sessions[2], rule_in, rule_out]
        for s, basket in enumerate(plan):
            ts = _START + timedelta(days=7 * s, hours=i % 20)
            _session_rows(rows, client, f"{client}s{s}", ts, basket, rng)
    meta = {
        "persona_clients": persona_clients,
        "noise_clients": noise_clients,
        "rule_in": rule_in,
        "rule_out": rule_out,
        "fillers": fillers,
    }
    return rows, meta


def planted_rows(n_regular: int = 200, n_planted: int = 10, sessions_each: int = 5, seed: int = 0):
    """Four shopping personas with constant baskets; a few funnels break
    character in their final session by buying another persona's basket."""
    rng = np.random.default_rng(seed)
    personas = [[f"q{p}_{j}" for j in range(4)] for p in range(4)]
    total = n_regular + n_planted
    clients = [f"c{i:03d}" for i in range(total)]
    persona_of = {client: i % 4 for i, client in enumerate(clients)}
    planted = sorted(rng.choice(clients, size=n_planted, replace=False)) if n_planted else []
    planted_set = set(planted)
    rows = [HEADER]
    for i, client in enumerate(clients):
        p = persona_of[client]
        for s in range(sessions_each):
            basket = personas[p]
            if client in planted_set and s == sessions_each - 1:
                basket = personas[(p + 1) % 4]
            ts = _START + timedelta(days=7 * s, hours=i % 24)
            _session_rows(rows, client, f"{client}s{s}", ts, basket, rng)
    meta = {
        "personas": personas,
        "persona_of": persona_of,
        "planted_clients": list(planted),
    }
    return rows, meta


def periodic_rows(n_funnels: int = 36, sessions_each: int = 7, period_days: float = 7.0,
                  jitter_days: float = 1.0, n_products: int = 10, seed: int = 0):
    """Shoppers who return every ``period_days`` give or take uniform jitter."""
    rng = np.random.default_rng(seed)
    products = [f"p{i:02d}" for i in range(n_products)]
    rows = [HEADER]
    gaps = {}
    for c in range(n_funnels):
        client = f"c{c:03d}"
        t = _START + timedelta(hours=int(rng.integers(0, 24)))
        gaps[client] = []
        for s in range(sessions_each):
            if s:
                gap = period_days + float(rng.uniform(-jitter_days, jitter_days))
                gaps[client].append(gap)
                t = t + timedelta(days=gap)
            basket = sorted(rng.choice(products, size=int(rng.integers(1, 4)), replace=False))
            _session_rows(rows, client, f"{client}s{s}", t, basket, rng)
    return rows, {"gaps": gaps, "period_days": period_days, "jitter_days": jitter_days}


GENERATORS = {
    "constant": constant_basket_rows,
    "rule": rule_rows,
    "planted": planted_rows,
    "periodic": periodic_rows,
}


def write_rows(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="funnellens.synthetic",
        description="Write a synthetic transaction log for demos and tests.",
    )
    parser.add_argument("kind", choices=sorted(GENERATORS))
    parser.add_argument("out", help="output CSV path")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    rows, _ = GENERATORS[args.kind](seed=args.seed)
    write_rows(args.out, rows)
    print(f"wrote {len(rows) - 1} rows to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
