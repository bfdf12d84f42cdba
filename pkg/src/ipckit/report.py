"""Session reporting: delimited round tables plus rendered figures.

This is the operator's private view - outcome columns name aborts and
decoys explicitly, which the public transcript never does.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .budget import compose, hoeffding_epsilon
from .qkdsim import RoundConfig, SessionResult

_FIELDS = [
    "round",
    "outcome",
    "q_obs",
    "s_obs",
    "key_bits_out",
    "key_bits_consumed",
]


def _outcome(r) -> str:
    if r.dos:
        return "decoy"
    return f"abort:{r.abort_reason}" if r.aborted else "success"


def session_rows(result: SessionResult) -> list[dict]:
    rows = []
    for r in result.rounds:
        rows.append(
            {
                "round": r.index,
                "outcome": _outcome(r),
                "q_obs": "" if r.q_obs is None else f"{r.q_obs:.6f}",
                "s_obs": "" if r.s_obs is None else f"{r.s_obs:.6f}",
                "key_bits_out": r.new_key_len,
                "key_bits_consumed": r.key_consumed,
            }
        )
    return rows


def write_rounds_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.DictWriter(fh, fieldnames=_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def round_epsilon_costs(cfg: RoundConfig) -> tuple[float, float]:
    """(per-message channel bound, per-success post-processing cost)."""
    eps_qkd = cfg.eps_ec + cfg.eps_pa + hoeffding_epsilon(cfg.m_q, cfg.pe_margin)
    return cfg.eps_channel, min(1.0, eps_qkd)


def cumulative_epsilons(result: SessionResult, eps0: float) -> list[float]:
    """Composed insecurity after each round (decoys use no key and add
    no channel uses, so they cost nothing)."""
    eps_ch, eps_qkd = round_epsilon_costs(result.config)
    totals = []
    charged = successes = 0
    for r in result.rounds:
        if not r.dos:
            charged += 1
            successes += int(not r.aborted)
        totals.append(compose(eps0, eps_ch, eps_qkd, charged, successes))
    return totals


def render_session_figures(result: SessionResult, outdir, eps0: float = 0.0) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    indices = [r.index for r in result.rounds]
    paths = []

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(indices, [r.key_consumed for r in result.rounds], label="consumed", alpha=0.6)
    ax.bar(indices, [r.new_key_len for r in result.rounds], label="produced", alpha=0.9)
    ax.set_xlabel("round")
    ax.set_ylabel("key bits")
    ax.set_title("per-round key flow")
    ax.legend()
    paths.append(os.path.join(outdir, "key_flow.png"))
    fig.savefig(paths[-1], dpi=110, bbox_inches="tight")
    plt.close(fig)

    fig, (ax_q, ax_s) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    q = [float("nan") if r.q_obs is None else r.q_obs for r in result.rounds]
    s = [float("nan") if r.s_obs is None else r.s_obs for r in result.rounds]
    ax_q.plot(indices, q, marker="o")
    ax_q.axhline(result.config.abort_threshold_q, ls="--", lw=1)
    ax_q.set_ylabel("mismatch estimate")
    ax_s.plot(indices, s, marker="o")
    ax_s.axhline(result.config.abort_threshold_s, ls="--", lw=1)
    ax_s.set_ylabel("correlation score")
    ax_s.set_xlabel("round")
    fig.suptitle("per-round estimates")
    paths.append(os.path.join(outdir, "estimates.png"))
    fig.savefig(paths[-1], dpi=110, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.step(indices, cumulative_epsilons(result, eps0), where="post")
    ax.set_xlabel("round")
    ax.set_ylabel("composed insecurity")
    ax.set_yscale("log")
    ax.set_title("security-budget ledger")
    paths.append(os.path.join(outdir, "budget.png"))
    fig.savefig(paths[-1], dpi=110, bbox_inches="tight")
    plt.close(fig)
    return paths


def write_session_report(result: SessionResult, outdir, eps0: float = 0.0) -> dict:
    """Delimited table plus figures, side by side in outdir."""
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "rounds.csv")
    write_rounds_csv(session_rows(result), csv_path)
    figures = render_session_figures(result, outdir, eps0)
    return {"csv": csv_path, "figures": figures}
