import os

import pytest

from graphsync import experiments
from graphsync.cli import main
from graphsync.netsim import parse_scenario


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestMergeScaling:
    def test_small_run_shapes(self, tmp_path):
        res = experiments.run_merge_scaling(tmp_path, revisions=30, seed=1,
                                            triple_counts=(10,))
        assert res[10]["final_triples"] == 5 + 30 * 10
        assert len(res[10]["singles"]) == 29
        assert read(tmp_path / "merge-scaling.csv").startswith(b"triples_per_revision")


class TestMaxRate:
    def test_deterministic_csv_across_runs_and_seeds(self, tmp_path):
        for seed in (1, 2, 3):
            a, b = tmp_path / f"a{seed}", tmp_path / f"b{seed}"
            experiments.run_max_rate(a, agents=2, docs=1, changes=10, seed=seed)
            experiments.run_max_rate(b, agents=2, docs=1, changes=10, seed=seed)
            assert read(a / "max-rate.csv") == read(b / "max-rate.csv")

    def test_merge_count_matches_agents(self, tmp_path):
        experiments.run_max_rate(tmp_path, agents=5, docs=2, changes=10, seed=1,
                                 iterations=3)
        rows = read(tmp_path / "max-rate.csv").decode().strip().splitlines()[1:]
        for row in rows:
            it, doc, merges, triples = row.split(",")
            assert int(merges) == 4  # N heads fold into one with N-1 merges


class TestNeverSync:
    def test_merge_only_starves_b(self, tmp_path):
        res = experiments.run_never_sync(tmp_path, "merge-only", seed=2,
                                         edit_stop=3000, hard_end=8000)
        assert res["b_never_saw_a"]

    def test_merge_rebase_converges(self, tmp_path):
        res = experiments.run_never_sync(tmp_path, "merge-rebase", seed=2,
                                         edit_stop=3000, hard_end=12_000)
        assert not res["b_never_saw_a"]
        assert res["converged_at"] is not None


class TestVerify:
    def test_verify_passes_on_golden_run(self, tmp_path):
        experiments.run_partition_12(tmp_path, seed=3, end_time=120_000,
                                     windows=((20_000, 35_000, 1),))
        ok, lines = experiments.verify_run(tmp_path)
        assert ok
        assert any("heads equal" in l for l in lines)

    def test_verify_fails_on_tampered_log(self, tmp_path):
        experiments.run_partition_12(tmp_path, seed=3, end_time=120_000,
                                     windows=((20_000, 35_000, 1),))
        path = tmp_path / "doc0.log"
        blob = bytearray(read(path))
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        ok, lines = experiments.verify_run(tmp_path)
        assert not ok
        assert any(l.startswith("[FAIL]") for l in lines)

    def test_verify_empty_dir_warns(self, tmp_path):
        ok, lines = experiments.verify_run(tmp_path)
        assert ok and lines[0].startswith("[WARN]")


class TestScenarioRunner:
    SCN = """
seed 11
agent alpha group 0
agent beta group 0
agent gamma group 1
latency uniform 2 6
loss 0.05
edit alpha doc:m 8000 3
edit gamma doc:m 9000 2
edit beta doc:m 12000 1
offline 1 15000 20000
edit gamma doc:m 16000 2
transfer alpha beta,gamma ds:x 30000 512 4096
run-until 90000
"""

    def test_scenario_end_state(self, tmp_path):
        scenario = parse_scenario(self.SCN)
        experiments.run_scenario(scenario, tmp_path)
        ok, lines = experiments.verify_run(tmp_path)
        assert ok, lines
        for name in ("beta", "gamma"):
            store = os.path.join(tmp_path, f"store-{name}")
            files = os.listdir(store)
            assert any(f.endswith(".payload") for f in files)


class TestCli:
    def test_run_never_sync(self, tmp_path, capsys):
        rc = main(["run", "never-sync", "--seed", "5", "--out", str(tmp_path)])
        assert rc == 0
        assert "starved=True" in capsys.readouterr().out

    def test_run_collab_mapping(self, tmp_path, capsys):
        rc = main(["run", "collab-mapping", "--seed", "5", "--out", str(tmp_path)])
        assert rc == 0

    def test_run_max_rate_and_verify(self, tmp_path, capsys):
        rc = main(["run", "max-rate", "--seed", "5", "--agents", "2", "--docs", "1",
                   "--changes", "10", "--out", str(tmp_path)])
        assert rc == 0
        rc = main(["verify", str(tmp_path)])
        assert rc == 0

    def test_seed_is_mandatory(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["run", "never-sync", "--out", str(tmp_path)])

    def test_scenario_command(self, tmp_path, capsys):
        scn = tmp_path / "x.scn"
        scn.write_text("seed 2\nagent a0 group 0\nagent a1 group 0\n"
                       "edit a0 doc:m 8000 2\nrun-until 30000\n")
        rc = main(["scenario", str(scn), "--out", str(tmp_path / "out")])
        assert rc == 0
        rc = main(["verify", str(tmp_path / "out")])
        assert rc == 0
