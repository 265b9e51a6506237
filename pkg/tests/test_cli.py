import json
import math

import pytest

from clanmc import cli
from clanmc.cli import RunConfig, parse_config_file
from clanmc.errors import ConfigurationError


def make_config(**over):
    values = {"seed": "12345"}
    values.update({k: str(v) for k, v in over.items()})
    return RunConfig.from_strings(values)


def result_lines(path):
    out = []
    for line in open(path, encoding="utf-8"):
        rec = json.loads(line)
        if rec.get("kind") == "result":
            out.append(line)
    return out


class TestConfig:
    def test_seed_mandatory(self):
        with pytest.raises(ConfigurationError):
            RunConfig.from_strings({})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError):
            RunConfig.from_strings({"seed": "1", "bogus": "2"})

    def test_echo_round_trip(self):
        cfg = make_config(family="uniform", halfwidth="2.5", n_grid="8,16,32",
                          beta_grid="0.5,inf", shards="3", m_samples="777")
        again = RunConfig.from_strings(cfg.echo_dict())
        assert again == cfg

    def test_infinity_parses(self):
        cfg = make_config(beta_grid="1,inf")
        assert cfg.beta_grid == (1.0, math.inf)

    def test_config_file_parsing(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nseed = 42\nm_samples = 1000  # trailing\n\nfamily=gaussian\n")
        values = parse_config_file(str(p))
        assert values == {"seed": "42", "m_samples": "1000", "family": "gaussian"}

    def test_single_n_defaults_to_grid_max(self):
        cfg = make_config(n_grid="8,64,32")
        assert cfg.single_n() == 64
        assert make_config(n="16").single_n() == 16


class TestSubcommands:
    def test_validate_exit_zero(self, capsys, tmp_path):
        out = tmp_path / "v.ndjson"
        rc = cli.main(["validate", "--seed", "1", "--out", str(out)])
        assert rc == 0
        rec = json.loads(out.read_text().splitlines()[1])
        assert rec["quantity"] == "validate" and rec["tag"] == "conforms"

    def test_prob_symmetry_smoke(self, tmp_path):
        out = tmp_path / "p.ndjson"
        rc = cli.main(["prob", "--seed", "7", "--n-grid", "1", "--regime", "fixed_i",
                       "--regime-param", "0", "--m-samples", "20000", "--out", str(out)])
        assert rc == 0
        rec = json.loads(result_lines(out)[0])
        assert abs(rec["mean"] - 0.5) <= 3 * rec["stderr"]

    def test_pgf_requires_end_window(self, tmp_path):
        rc = cli.main(["pgf", "--seed", "3", "--regime", "fixed_i", "--regime-param", "2",
                       "--n", "16", "--m-samples", "100", "--out", str(tmp_path / "t.ndjson")])
        assert rc == 2

    def test_pgf_endpoints_exact(self, tmp_path):
        out = tmp_path / "t.ndjson"
        rc = cli.main(["pgf", "--seed", "3", "--n", "32", "--m-samples", "2000",
                       "--s-grid", "0,0.5,1", "--out", str(out)])
        assert rc == 0
        recs = [json.loads(line) for line in result_lines(out)]
        assert recs[0]["param"] == 0.0 and recs[0]["mean"] == 0.0
        assert recs[-1]["param"] == 1.0 and recs[-1]["mean"] == 1.0

    def test_lst_unreliable_ratio_exit_three(self, tmp_path):
        rc = cli.main(["lst", "--seed", "11", "--regime", "proportional", "--regime-param",
                       "0.5", "--n", "2048", "--m-samples", "2000",
                       "--out", str(tmp_path / "l.ndjson")])
        assert rc == 3

    def test_proportional_lattice_exit_four(self, tmp_path):
        rc = cli.main(["scaling", "--seed", "5", "--family", "twopoint", "--step", "0.7",
                       "--regime", "proportional", "--regime-param", "0.5",
                       "--n-grid", "8,16,32,64", "--m-samples", "200",
                       "--out", str(tmp_path / "s.ndjson")])
        assert rc == 4

    def test_unknown_subcommand_exit_two(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate", "--seed", "1"])
        assert exc.value.code == 2

    def test_missing_seed_exit_two(self, tmp_path):
        rc = cli.main(["prob", "--n-grid", "4", "--m-samples", "10",
                       "--out", str(tmp_path / "x.ndjson")])
        assert rc == 2

    def test_csv_format(self, tmp_path):
        out = tmp_path / "p.csv"
        rc = cli.main(["prob", "--seed", "7", "--n-grid", "4,8", "--m-samples", "500",
                       "--format", "csv", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "quantity,n,i,param,mean,stderr,count,tag"
        assert len(lines) == 3
        assert lines[1].startswith("prob,4,1,,")

    def test_oracle_all_pass(self, tmp_path, capsys):
        out = tmp_path / "o.ndjson"
        rc = cli.main(["oracle", "--seed", "13", "--m-samples", "5000", "--out", str(out)])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "oracle suite: all checks passed" in printed
        recs = [json.loads(line) for line in result_lines(out)]
        assert len(recs) == 5 and all(r["tag"] == "pass" for r in recs)

    def test_duality_and_strata_smoke(self, tmp_path):
        rc = cli.main(["duality", "--seed", "9", "--regime", "fixed_i", "--regime-param", "12",
                       "--n", "16", "--beta-grid", "1,inf", "--m-samples", "2000",
                       "--out", str(tmp_path / "d.ndjson")])
        assert rc == 0
        rc = cli.main(["strata", "--seed", "9", "--regime", "fixed_i", "--regime-param", "48",
                       "--n", "64", "--beta-grid", "1", "--strata-N", "3",
                       "--m-samples", "2000", "--out", str(tmp_path / "st.ndjson")])
        assert rc == 0
        recs = [json.loads(line) for line in result_lines(tmp_path / "st.ndjson")]
        total = next(r for r in recs if r["quantity"] == "strata-total")
        masses = sum(r["mean"] for r in recs if r["quantity"] != "strata-total")
        assert masses == pytest.approx(total["mean"], rel=1e-12)


class TestDeterminism:
    def test_shard_count_immaterial(self, tmp_path):
        args = ["prob", "--seed", "2024", "--n-grid", "32,64", "--m-samples", "3000",
                "--regime", "end_window", "--regime-param", "3"]
        out1, out4 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        assert cli.main(args + ["--shards", "1", "--out", str(out1)]) == 0
        assert cli.main(args + ["--shards", "4", "--out", str(out4)]) == 0
        assert result_lines(out1) == result_lines(out4)

    def test_identical_rerun_byte_identical(self, tmp_path):
        args = ["lst", "--seed", "31337", "--regime", "end_window", "--regime-param", "3",
                "--n", "64", "--beta-grid", "0.5,inf", "--m-samples", "2000"]
        out1, out2 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        assert cli.main(args + ["--out", str(out1)]) == 0
        assert cli.main(args + ["--out", str(out2)]) == 0
        assert result_lines(out1) == result_lines(out2)
        # run records differ only in wall-clock timing and the output path
        rec1, rec2 = (json.loads(open(p).readlines()[-1]) for p in (out1, out2))
        for rec in (rec1, rec2):
            rec.pop("timing_s")
            rec["config"].pop("out")
        assert rec1 == rec2
