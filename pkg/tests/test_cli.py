import csv
import json

import pytest

from soundpair.cli import EXIT_ABORT, EXIT_OK, EXIT_USAGE, main


class TestRun:
    def test_honest_run_exits_zero(self, capsys):
        assert main(["run", "--n", "3", "--seed", "0"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("contacts-imported") == 3

    def test_attack_run_exits_two(self, capsys):
        code = main(["run", "--n", "3", "--seed", "0", "--attack", "mitm_key_substitution"])
        assert code == EXIT_ABORT
        assert "contacts-imported" not in capsys.readouterr().out

    def test_reject_one_exits_two(self):
        assert main(["run", "--n", "3", "--seed", "0", "--users", "reject-one"]) == EXIT_ABORT

    def test_unknown_attack_is_usage_error(self, capsys):
        assert main(["run", "--attack", "no-such-preset"]) == EXIT_USAGE
        assert "error" in capsys.readouterr().err

    def test_group_of_one_is_usage_error(self):
        assert main(["run", "--n", "1"]) == EXIT_USAGE

    def test_bad_noise_is_usage_error(self):
        assert main(["run", "--noise", "brownian"]) == EXIT_USAGE

    def test_unknown_subcommand_is_usage_error(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_transcript_output(self, tmp_path):
        path = tmp_path / "t.jsonl"
        assert main(["run", "--n", "2", "--seed", "3", "--output", str(path)]) == EXIT_OK
        lines = path.read_text().strip().splitlines()
        assert lines
        for line in lines:
            json.loads(line)

    def test_policy_file_attack(self, tmp_path):
        policy = tmp_path / "p.txt"
        policy.write_text("inband action=drop kind=DISPERSE dest=1\n")
        assert main(["run", "--n", "3", "--seed", "0", "--attack", str(policy)]) == EXIT_ABORT


class TestCampaign:
    def test_small_campaign_csv(self, tmp_path, capsys):
        out = tmp_path / "c.csv"
        code = main(
            [
                "campaign",
                "--presets",
                "none,oob_inject",
                "--seeds",
                "2",
                "--n-set",
                "2,3",
                "--output",
                str(out),
            ]
        )
        assert code == EXIT_OK
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        # presets x seeds x sum(n) endpoint rows
        assert len(rows) == 2 * 2 * (2 + 3)
        assert {r["preset"] for r in rows} == {"none", "oob_inject"}
        assert all(r["false_accept"] == "0" for r in rows)
        assert "zero-false-accept assertion: PASS" in capsys.readouterr().out

    def test_unknown_preset_is_usage_error(self):
        assert main(["campaign", "--presets", "bogus", "--seeds", "1"]) == EXIT_USAGE


class TestModemCommands:
    def test_wav_roundtrip(self, tmp_path, capsys):
        wav = tmp_path / "f.wav"
        payload = ("ab" * 16) + ("cd" * 16)
        assert main(["modem-encode", "--kind", "verify-hash", "--payload", payload, "--output", str(wav)]) == EXIT_OK
        capsys.readouterr()
        assert main(["modem-decode", "--input", str(wav)]) == EXIT_OK
        assert f"VERIFY_HASH: {payload}" in capsys.readouterr().out

    def test_raw_f32_roundtrip(self, tmp_path, capsys):
        raw = tmp_path / "f.f32"
        payload = "00" * 30
        assert main(["modem-encode", "--kind", "network-init", "--payload", payload, "--output", str(raw)]) == EXIT_OK
        capsys.readouterr()
        assert main(["modem-decode", "--input", str(raw)]) == EXIT_OK
        assert f"NETWORK_INIT: {payload}" in capsys.readouterr().out

    def test_bad_hex_is_usage_error(self):
        assert main(["modem-encode", "--payload", "zz", "--output", "x.wav"]) == EXIT_USAGE

    def test_missing_input_is_usage_error(self, tmp_path):
        assert main(["modem-decode", "--input", str(tmp_path / "absent.wav")]) == EXIT_USAGE

    def test_silence_decodes_to_nothing(self, tmp_path, capsys):
        import numpy as np

        from soundpair import wavio

        path = tmp_path / "s.wav"
        wavio.write_wav(str(path), np.zeros(48000), 48000, "int16")
        assert main(["modem-decode", "--input", str(path)]) == EXIT_ABORT
        assert "no frames found" in capsys.readouterr().out


class TestScalingReport:
    def test_table_contents(self, capsys):
        assert main(["scaling-report", "--max-n", "7", "--seed", "0"]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        header, rows = lines[0], [l.split() for l in lines[1:]]
        assert header.split()[:2] == ["n", "pairwise"]
        assert [int(r[0]) for r in rows] == list(range(2, 8))
        pairwise = [int(r[1]) for r in rows]
        assert pairwise == [1, 3, 6, 10, 15, 21]
        # quadratic pairwise growth vs linear acoustic effort
        acoustic = [int(r[3]) for r in rows]
        assert acoustic == [1 + n for n in range(2, 8)]

    def test_max_n_too_small_is_usage_error(self):
        assert main(["scaling-report", "--max-n", "1"]) == EXIT_USAGE
