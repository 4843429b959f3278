"""Synthetic corpus generators: determinism and the invariants the
experiment suites lean on."""

import io

import numpy as np

from funnellens.data import assemble_funnels, build_vocab, parse_transactions
from funnellens.synthetic import (constant_basket_rows, periodic_rows, planted_rows,
                                  rule_rows)


def funnels_of(rows):
    records, stats = parse_transactions(io.StringIO("\n".join(rows) + "\n"))
    assert stats.n_malformed == 0
    vocab = build_vocab(records)
    return vocab, assemble_funnels(records, vocab)


class TestConstantBaskets:
    def test_shape_and_repetition(self):
        rows, meta = constant_basket_rows(n_funnels=8, sessions_each=5, seed=0)
        vocab, funnels = funnels_of(rows)
        assert len(funnels) == 8
        for funnel in funnels:
            assert len(funnel.sessions) == 5
            firsts = funnel.sessions[0].items
            assert all(s.items == firsts for s in funnel.sessions)
            names = sorted(vocab.item_at(i) for i in firsts)
            assert names == meta["baskets"][funnel.client_id]

    def test_deterministic(self):
        a, _ = constant_basket_rows(seed=4)
        b, _ = constant_basket_rows(seed=4)
        c, _ = constant_basket_rows(seed=5)
        assert a == b
        assert a != c


class TestRuleCorpus:
    def test_fillers_index_below_rule_items(self):
        rows, meta = rule_rows(seed=0)
        vocab, _ = funnels_of(rows)
        filler_indices = [vocab.index_of(f) for f in meta["fillers"]]
        rule_indices = [vocab.index_of(p) for p in meta["rule_in"] + meta["rule_out"]]
        assert max(filler_indices) < min(rule_indices)

    def test_persona_funnels_follow_the_rule(self):
        rows, meta = rule_rows(n_persona=6, n_noise=4, seed=2)
        vocab, funnels = funnels_of(rows)
        by_id = {f.client_id: f for f in funnels}
        rule_in = {vocab.index_of(p) for p in meta["rule_in"]}
        rule_out = sorted(vocab.index_of(p) for p in meta["rule_out"])
        for client in meta["persona_clients"]:
            sessions = by_id[client].sessions
            assert len(sessions) == 7
            for t, sess in enumerate(sessions[:-1]):
                if set(sess.items) == rule_in:
                    assert sessions[t + 1].items == rule_out
            assert sessions[-1].items == rule_out

    def test_noise_funnels_never_buy_rule_items(self):
        rows, meta = rule_rows(seed=1)
        vocab, funnels = funnels_of(rows)
        rule_items = {vocab.index_of(p) for p in meta["rule_in"] + meta["rule_out"]}
        for funnel in funnels:
            if funnel.client_id in meta["noise_clients"]:
                bought = {i for s in funnel.sessions for i in s.items}
                assert not bought & rule_items


class TestPlantedCorpus:
    def test_counts_and_plants(self):
        rows, meta = planted_rows(n_regular=40, n_planted=5, seed=0)
        vocab, funnels = funnels_of(rows)
        assert len(funnels) == 45
        assert len(meta["planted_clients"]) == 5
        for funnel in funnels:
            p = meta["persona_of"][funnel.client_id]
            own = sorted(vocab.index_of(x) for x in meta["personas"][p])
            other = sorted(vocab.index_of(x) for x in meta["personas"][(p + 1) % 4])
            for sess in funnel.sessions[:-1]:
                assert sess.items == own
            if funnel.client_id in meta["planted_clients"]:
                assert funnel.sessions[-1].items == other
            else:
                assert funnel.sessions[-1].items == own

    def test_all_regular_variant(self):
        rows, meta = planted_rows(n_regular=20, n_planted=0, seed=0)
        _, funnels = funnels_of(rows)
        assert meta["planted_clients"] == []
        assert len(funnels) == 20


class TestPeriodicCorpus:
    def test_gaps_within_jitter(self):
        rows, meta = periodic_rows(n_funnels=10, sessions_each=6, seed=0)
        _, funnels = funnels_of(rows)
        for funnel in funnels:
            stamps = [s.timestamp for s in funnel.sessions]
            gaps = [(b - a).total_seconds() / 86400.0 for a, b in zip(stamps, stamps[1:])]
            assert len(gaps) == 5
            for gap, recorded in zip(gaps, meta["gaps"][funnel.client_id]):
                assert 6.0 <= gap <= 8.0
                assert abs(gap - recorded) < 1e-6

    def test_mean_gap_near_period(self, rng):
        rows, meta = periodic_rows(n_funnels=30, seed=7)
        all_gaps = [g for gaps in meta["gaps"].values() for g in gaps]
        assert abs(float(np.mean(all_gaps)) - 7.0) < 0.25
