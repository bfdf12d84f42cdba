"""Round tables, figures, and the cumulative budget ledger."""

import csv

import pytest

from ipckit import report
from ipckit import qkdsim as qs
from ipckit.budget import compose, hoeffding_epsilon
from ipckit.devices import AbortSignalDevicePair
from ipckit.ipchannel import KeyPool
from ipckit.rng import SessionRandomness

CFG = qs.RoundConfig(sifted_bits=256, q_noise=0.02)


@pytest.fixture(scope="module")
def session():
    # pool covers two real rounds; the abort device kills round 1, so the
    # result mixes all three outcomes: success, abort, decoy tail
    randomness = SessionRandomness(31)
    need = CFG.pool_bits_per_round() * 2 + 8
    pool_a = KeyPool.from_random(need, randomness.stream("pool"))
    pool_b = KeyPool.from_random(need, randomness.stream("pool"))
    result = qs.run_session(
        CFG, pool_a, pool_b, AbortSignalDevicePair(CFG.q_noise, {1}), randomness, 4
    )
    assert [r.dos for r in result.rounds] == [False, False, True, True]
    assert [r.aborted for r in result.rounds] == [False, True, True, True]
    return result


def test_rows_cover_every_outcome(session):
    rows = report.session_rows(session)
    assert [row["round"] for row in rows] == [0, 1, 2, 3]
    assert rows[0]["outcome"] == "success"
    assert rows[1]["outcome"] == "abort:estimate"
    assert rows[2]["outcome"] == rows[3]["outcome"] == "decoy"
    # decoys never ran an estimate
    assert rows[2]["q_obs"] == "" and rows[2]["s_obs"] == ""
    assert float(rows[1]["q_obs"]) > CFG.abort_threshold_q
    assert rows[0]["key_bits_out"] > 0
    assert rows[0]["key_bits_consumed"] == CFG.pool_bits_per_round()
    assert rows[1]["key_bits_consumed"] == CFG.n_pe + CFG.n_flag


def test_csv_round_trips(tmp_path, session):
    path = tmp_path / "rounds.csv"
    report.write_rounds_csv(report.session_rows(session), path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == report._FIELDS
        back = list(reader)
    assert len(back) == 4
    assert back[0]["outcome"] == "success"
    assert back[3]["outcome"] == "decoy"
    assert int(back[0]["key_bits_out"]) == session.rounds[0].new_key_len


def test_round_epsilon_costs_cap():
    eps_ch, eps_qkd = report.round_epsilon_costs(CFG)
    assert eps_ch == CFG.eps_channel
    raw = CFG.eps_ec + CFG.eps_pa + hoeffding_epsilon(CFG.m_q, CFG.pe_margin)
    assert eps_qkd == min(1.0, raw)
    assert 0.0 < eps_qkd <= 1.0


def test_cumulative_epsilons_match_composition(session):
    eps0 = 1e-9
    totals = report.cumulative_epsilons(session, eps0)
    eps_ch, eps_qkd = report.round_epsilon_costs(CFG)
    assert len(totals) == 4
    assert totals[0] == compose(eps0, eps_ch, eps_qkd, 1, 1)
    # the abort charges channel uses but retains no key
    assert totals[1] == compose(eps0, eps_ch, eps_qkd, 2, 1)
    # decoys are free: the ledger stays flat
    assert totals[2] == totals[1] and totals[3] == totals[1]
    assert totals == sorted(totals)


def test_figures_rendered(tmp_path, session):
    paths = report.render_session_figures(session, tmp_path / "figs", eps0=1e-9)
    names = [p.rsplit("/", 1)[-1] for p in paths]
    assert names == ["key_flow.png", "estimates.png", "budget.png"]
    for p in paths:
        with open(p, "rb") as fh:
            head = fh.read(8)
        assert head.startswith(b"\x89PNG")


def test_write_session_report_bundles(tmp_path, session):
    out = report.write_session_report(session, tmp_path / "rep")
    assert out["csv"].endswith("rounds.csv")
    assert len(out["figures"]) == 3
    with open(out["csv"]) as fh:
        assert len(fh.read().splitlines()) == 5  # header + 4 rounds


def test_empty_session_is_representable(tmp_path):
    empty = qs.SessionResult(CFG, [], [])
    assert report.session_rows(empty) == []
    assert report.cumulative_epsilons(empty, 0.5) == []
    out = report.write_session_report(empty, tmp_path / "rep0")
    with open(out["csv"]) as fh:
        assert fh.read().splitlines() == [",".join(report._FIELDS)]
