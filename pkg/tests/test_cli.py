"""Command-line surface: fixtures, exit codes, file round trips, and the
two-process peer runner under a pinned environment seed."""

import dataclasses
import io
import os
import shutil
import subprocess
import sys

import pytest

from ipckit import cli
from ipckit import qkdsim as qs
from ipckit import wire
from ipckit.devices import HonestDevicePair
from ipckit.ipchannel import KeyPool
from ipckit.rng import SessionRandomness


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# calculators


def test_field_mul_fixture(capsys):
    code, out, _ = run_cli(capsys, "field-mul", "--n", "8", "--a", "53", "--b", "ca")
    assert code == 0
    assert out.strip() == "01"


def test_field_mul_pads_to_field_width(capsys):
    code, out, _ = run_cli(capsys, "field-mul", "--n", "64", "--a", "2a", "--b", "1")
    assert code == 0
    assert out.strip() == "000000000000002a"


def test_field_mul_rejects_oversized_operand(capsys):
    code, _, err = run_cli(capsys, "field-mul", "--n", "8", "--a", "1ff", "--b", "1")
    assert code == 2
    assert "does not fit" in err


def test_hash_matches_library(capsys):
    from ipckit.gf2n import standard_field
    from ipckit.hashfam import HashParams, hash_bits

    code, out, _ = run_cli(capsys, "hash", "--n", "16", "--l", "5", "--k", "beef", "--r", "cafe")
    assert code == 0
    want = hash_bits(0xBEEF, 0xCAFE, HashParams(standard_field(16), 5))
    assert out.strip() == f"{want:02x}"


def test_epsilon_fixture(capsys):
    code, out, _ = run_cli(capsys, "epsilon", "--n", "276", "--l", "128")
    assert code == 0
    assert out.strip() == "2^-10"


def test_epsilon_half_integer_exponent(capsys):
    code, out, _ = run_cli(capsys, "epsilon", "--n", "277", "--l", "128")
    assert code == 0
    assert out.strip() == "2^-10.5"


def test_epsilon_rejects_insecure_parameters(capsys):
    code, _, err = run_cli(capsys, "epsilon", "--n", "256", "--l", "128")
    assert code == 2
    assert err.startswith("error:")


def test_usage_error_is_exit_2():
    with pytest.raises(SystemExit) as exc:
        cli.main(["field-mul", "--n", "8"])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# channel uses against pool files


def test_encrypt_decrypt_roundtrip(tmp_path, capsys):
    pool_a = tmp_path / "a.pool"
    code, _, _ = run_cli(capsys, "pool-init", "--out", str(pool_a), "--bits", "4096", "--seed", "5")
    assert code == 0
    pool_b = tmp_path / "b.pool"
    shutil.copy(pool_a, pool_b)

    code, out, _ = run_cli(
        capsys, "encrypt", "--pool", str(pool_a), "--l", "16", "--message", "beef", "--seed", "9"
    )
    assert code == 0
    payload = bytes.fromhex(out.strip())
    t = wire.decode_channel_payload(payload)
    assert t.params.l == 16 and t.params.n == 96  # sized for the 2^-32 default

    code, out, _ = run_cli(capsys, "decrypt", "--pool", str(pool_b), "--payload", payload.hex())
    assert code == 0
    assert out.strip() == "beef"
    # both pool files advanced in lockstep
    assert KeyPool.load(pool_a).consumed_bits == KeyPool.load(pool_b).consumed_bits == 96


def test_encrypt_reads_stdin(tmp_path, capsys, monkeypatch):
    pool = tmp_path / "a.pool"
    run_cli(capsys, "pool-init", "--out", str(pool), "--bits", "1024", "--seed", "5")
    monkeypatch.setattr("sys.stdin", io.StringIO("0ab\n"))
    code, out, _ = run_cli(capsys, "encrypt", "--pool", str(pool), "--l", "12", "--seed", "1")
    assert code == 0
    assert wire.decode_channel_payload(bytes.fromhex(out.strip())).params.l == 12


def test_encrypt_fresh_seed_as_pool_progresses(tmp_path, capsys):
    pool = tmp_path / "a.pool"
    run_cli(capsys, "pool-init", "--out", str(pool), "--bits", "4096", "--seed", "5")
    _, out1, _ = run_cli(capsys, "encrypt", "--pool", str(pool), "--l", "16", "--message", "beef", "--seed", "9")
    _, out2, _ = run_cli(capsys, "encrypt", "--pool", str(pool), "--l", "16", "--message", "beef", "--seed", "9")
    t1 = wire.decode_channel_payload(bytes.fromhex(out1.strip()))
    t2 = wire.decode_channel_payload(bytes.fromhex(out2.strip()))
    assert t1.r != t2.r  # same session seed, different pool offset


def test_encrypt_message_too_wide(tmp_path, capsys):
    pool = tmp_path / "a.pool"
    run_cli(capsys, "pool-init", "--out", str(pool), "--bits", "1024", "--seed", "5")
    code, _, err = run_cli(
        capsys, "encrypt", "--pool", str(pool), "--l", "8", "--message", "beef", "--seed", "9"
    )
    assert code == 2
    assert "does not fit" in err


def test_decrypt_rejects_garbage(tmp_path, capsys):
    pool = tmp_path / "a.pool"
    run_cli(capsys, "pool-init", "--out", str(pool), "--bits", "1024", "--seed", "5")
    for bad in ("zz", "00"):
        code, _, err = run_cli(capsys, "decrypt", "--pool", str(pool), "--payload", bad)
        assert code == 2 and err.startswith("error:")


def test_missing_pool_file_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "decrypt", "--pool", "/nonexistent.pool", "--payload", "00")
    assert code == 2
    assert "error:" in err


def test_pool_init_validates_bits(tmp_path, capsys):
    code, _, err = run_cli(capsys, "pool-init", "--out", str(tmp_path / "p"), "--bits", "0")
    assert code == 2 and "positive" in err


# ---------------------------------------------------------------------------
# simulate


def test_simulate_zero_rounds_shows_only_eps0(capsys):
    code, out, _ = run_cli(capsys, "simulate", "--rounds", "0", "--eps0", "1e-9")
    assert code == 0
    assert "total insecurity          <= 1.000000e-09" in out
    assert "channel term" not in out and "round term" not in out
    assert "summary: 0 rounds" in out


def test_simulate_writes_log_and_report(tmp_path, capsys):
    log = tmp_path / "session.log"
    rep = tmp_path / "rep"
    code, out, _ = run_cli(
        capsys, "simulate", "--rounds", "2", "--n-sifted", "256", "--qber", "0.02",
        "--seed", "7", "--log", str(log), "--report-dir", str(rep), "--eps-sec", "0.5",
    )
    assert code == 0
    assert "round 0:" in out and "round 1:" in out
    assert "target 5.000e-01" in out
    with open(rep / "rounds.csv") as fh:
        assert len(fh.read().splitlines()) == 3
    for name in ("key_flow.png", "estimates.png", "budget.png"):
        assert (rep / name).stat().st_size > 0
    assert log.stat().st_size > 0


def test_simulate_log_matches_library_run(tmp_path, capsys):
    log = tmp_path / "session.log"
    code, _, _ = run_cli(
        capsys, "simulate", "--rounds", "2", "--n-sifted", "256", "--qber", "0.02",
        "--seed", "7", "--log", str(log),
    )
    assert code == 0

    cfg = dataclasses.replace(qs.RoundConfig(), sifted_bits=256, q_noise=0.02)
    randomness = SessionRandomness(7)
    need = cfg.pool_bits_per_round() * 2 + 64
    pool_a = KeyPool.from_random(need, randomness.stream("initial-pool"))
    pool_b = KeyPool.from_random(need, randomness.stream("initial-pool"))
    ref = qs.run_session(cfg, pool_a, pool_b, HonestDevicePair(0.02), randomness, 2)
    assert log.read_text() == ref.log()


def test_simulate_config_file(tmp_path, capsys):
    cfg_path = tmp_path / "round.cfg"
    qs.RoundConfig(sifted_bits=128, q_noise=0.0).to_file(cfg_path)
    code, out, _ = run_cli(capsys, "simulate", "--rounds", "1", "--config", str(cfg_path), "--seed", "3")
    assert code == 0
    assert "sifted_bits=128" in out


# ---------------------------------------------------------------------------
# distinguish


def test_distinguish_exact_within_bound(capsys):
    code, out, _ = run_cli(
        capsys, "distinguish", "--attack", "d-xor-k-truncation",
        "--n", "12", "--l", "4", "--d", "b", "--exact",
    )
    assert code == 0
    assert "within bound: yes" in out


def test_distinguish_naive_otp_is_out_of_scope_for_bound(capsys):
    code, out, _ = run_cli(
        capsys, "distinguish", "--attack", "naive-otp", "--n", "12", "--l", "4",
        "--d", "b", "--exact",
    )
    assert code == 0
    assert "exact advantage = 15/16" in out
    assert "n/a" in out


def test_distinguish_empirical(capsys):
    code, out, _ = run_cli(
        capsys, "distinguish", "--attack", "constant", "--n", "24", "--l", "4",
        "--trials", "2000", "--seed", "3",
    )
    assert code == 0
    assert "empirical advantage" in out and "within bound:" in out


def test_distinguish_unknown_attack(capsys):
    code, _, err = run_cli(capsys, "distinguish", "--attack", "nope", "--n", "12", "--l", "4")
    assert code == 2
    assert "unknown attack" in err


def test_distinguish_exact_caps_enumeration(capsys):
    code, _, err = run_cli(
        capsys, "distinguish", "--attack", "constant", "--n", "64", "--l", "4", "--exact"
    )
    assert code == 2
    assert "n <= 16" in err


# ---------------------------------------------------------------------------
# verify


def test_verify_battery_passes(capsys):
    code, out, _ = run_cli(capsys, "verify")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 6
    assert all(line.endswith(" ok") for line in lines)


# ---------------------------------------------------------------------------
# peer subprocesses


def test_peer_requires_shared_seed(capsys, monkeypatch):
    monkeypatch.delenv("IPC_SEED", raising=False)
    code, _, err = run_cli(
        capsys, "peer", "--role", "alice", "--listen", "127.0.0.1:0",
        "--pool", "/nonexistent.pool", "--rounds", "1",
    )
    assert code == 2
    assert "IPC_SEED" in err


def _peer_pair_run(tmp_path, tag: str):
    """One full two-process session; returns both transcript logs and keys."""
    pool_a = tmp_path / f"{tag}-a.pool"
    pool_b = tmp_path / f"{tag}-b.pool"
    env = {**os.environ, "IPC_SEED": "42"}
    subprocess.run(
        [sys.executable, "-m", "ipckit.cli", "pool-init", "--out", str(pool_a),
         "--bits", "40000", "--seed", "2"],
        check=True, capture_output=True,
    )
    shutil.copy(pool_a, pool_b)
    log_a, log_b = tmp_path / f"{tag}-a.log", tmp_path / f"{tag}-b.log"
    keys_a, keys_b = tmp_path / f"{tag}-a.keys", tmp_path / f"{tag}-b.keys"

    alice = subprocess.Popen(
        [sys.executable, "-m", "ipckit.cli", "peer", "--role", "alice",
         "--listen", "127.0.0.1:0", "--pool", str(pool_a), "--rounds", "2",
         "--log", str(log_a), "--keys-out", str(keys_a)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env,
    )
    try:
        banner = alice.stdout.readline()  # "listening on HOST:PORT"
        assert banner.startswith("listening on ")
        address = banner.strip().rsplit(" ", 1)[1]
        bob = subprocess.run(
            [sys.executable, "-m", "ipckit.cli", "peer", "--role", "bob",
             "--connect", address, "--pool", str(pool_b), "--rounds", "2",
             "--log", str(log_b), "--keys-out", str(keys_b)],
            capture_output=True, text=True, env=env, timeout=120,
        )
        out_a, err_a = alice.communicate(timeout=120)
    finally:
        alice.kill()
    assert alice.returncode == 0, err_a
    assert bob.returncode == 0, bob.stderr
    assert "produced" in out_a and "digest ok" in out_a
    return log_a.read_text(), log_b.read_text(), keys_a.read_text(), keys_b.read_text()


def test_peer_processes_agree_and_rerun_identically(tmp_path):
    log_a1, log_b1, keys_a1, keys_b1 = _peer_pair_run(tmp_path, "run1")
    assert log_a1 == log_b1  # both ends saw one transcript
    assert keys_a1 == keys_b1 and "round-0" in keys_a1 and "round-1" in keys_a1
    # a second run from scratch under the same environment seed replays
    # the exact same bytes
    log_a2, log_b2, keys_a2, _ = _peer_pair_run(tmp_path, "run2")
    assert log_a2 == log_a1 and log_b2 == log_b1 and keys_a2 == keys_a1
