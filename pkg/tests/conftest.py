"""Shared test helpers: finite-difference oracle and tiny corpora builders."""

import io
from datetime import datetime, timedelta

import numpy as np
import pytest

from funnellens import autodiff as ad
from funnellens.data import assemble_funnels, build_vocab, parse_transactions

CSV_HEADER = "TRAN_ID,CLIENT_ID,PROD_ID,TIMESTAMP,PROD_AMOUNT,PRODT_QTY"


def csv_of(rows):
    return io.StringIO("\n".join([CSV_HEADER] + rows) + "\n")


def csv_row(tran, client, prod, ts, amount=1.0, qty=1.0):
    return f"{tran},{client},{prod},{ts},{amount},{qty}"


def funnels_from_rows(rows):
    records, _ = parse_transactions(csv_of(rows))
    vocab = build_vocab(records)
    return assemble_funnels(records, vocab), vocab


def simple_funnels(n_clients, sessions_each, start="2024-01-01"):
    """One receipt per week per client, single fixed item."""
    t0 = datetime.fromisoformat(start)
    rows = []
    for c in range(n_clients):
        for s in range(sessions_each):
            ts = (t0 + timedelta(days=7 * s)).isoformat(sep=" ")
            rows.append(csv_row(f"t{c}_{s}", f"c{c}", "apple", ts))
    return funnels_from_rows(rows)


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of one array.

    ``f`` must treat ``x`` as read-only input and return a float; the array
    is perturbed in place one element at a time and restored afterwards.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Elementwise |a-n| / max(|a|+|n|, tiny), reduced to the worst case."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_param_gradients(loss_fn, params, h=1e-5):
    """Max relative error between backward() grads and central differences.

    ``loss_fn()`` rebuilds the graph from the current parameter values and
    returns the loss Tensor. ``params`` are the leaf tensors to check.
    """
    ad.zero_grads(params)
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        numeric = finite_difference_gradient(lambda: loss_fn().item(), p.data, h=h)
        worst = max(worst, max_relative_error(analytic, numeric))
    ad.zero_grads(params)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
