"""End-to-end command pipelines: gen, run, aggregate, delta, smoke."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

from qgp.cli import main
from qgp.core import RECORD_FIELDS, read_record_dicts


@pytest.fixture(scope="module")
def mini_manifest(snapshot_roots, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("cli") / "mini.json"
    code = main(
        [
            "gen-reposcan",
            "--snapshot",
            str(snapshot_roots[0]),
            "--targets",
            "10",
            "--instances",
            "3",
            "--seed",
            "3",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def mini_dataops_manifest(csv_sources, snapshot_roots, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("cli") / "mini-dataops.json"
    code = main(
        [
            "gen-dataops",
            "--csv",
            str(csv_sources[0]),
            "--snapshot",
            str(snapshot_roots[0]),
            "--targets",
            "3,5",
            "--instances",
            "2",
            "--seed",
            "5",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    return out


class TestGeneration:
    def test_same_invocation_same_digest(self, snapshot_roots, tmp_path, capsys):
        args = [
            "gen-reposcan",
            "--snapshot",
            str(snapshot_roots[0]),
            "--targets",
            "10",
            "--instances",
            "2",
            "--seed",
            "9",
        ]
        assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
        first = capsys.readouterr().out.split("digest=")[1].strip()
        assert main(args + ["--out", str(tmp_path / "b.json")]) == 0
        second = capsys.readouterr().out.split("digest=")[1].strip()
        assert first == second
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_missing_snapshot_nonzero_exit(self, tmp_path, capsys):
        code = main(
            [
                "gen-reposcan",
                "--snapshot",
                str(tmp_path / "nope"),
                "--out",
                str(tmp_path / "x.json"),
            ]
        )
        assert code == 2
        assert "not found" in capsys.readouterr().err


class TestRun:
    def test_record_fields_bit_exact(self, mini_manifest, tmp_path):
        out = tmp_path / "records.jsonl"
        code = main(
            [
                "run",
                "--manifest",
                str(mini_manifest),
                "--controller",
                "state_qgp",
                "--policy",
                "duplicator",
                "--seed",
                "1",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        rows = read_record_dicts(out)
        assert len(rows) == 3
        for row in rows:
            assert tuple(list(row)[: len(RECORD_FIELDS)]) == RECORD_FIELDS
            assert row["duplicate_occurrences"] == 0
            assert "intervention_log" in row

    def test_jobs_do_not_change_output(self, mini_manifest, tmp_path):
        outputs = []
        for jobs in ("1", "4"):
            out = tmp_path / f"records-{jobs}.jsonl"
            code = main(
                [
                    "run",
                    "--manifest",
                    str(mini_manifest),
                    "--controller",
                    "verifier_gated",
                    "--policy",
                    "greedy_oracle",
                    "--seed",
                    "2",
                    "--jobs",
                    jobs,
                    "--out",
                    str(out),
                ]
            )
            assert code == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_solver_standard_full_success(self, mini_dataops_manifest, tmp_path):
        out = tmp_path / "solver.jsonl"
        code = main(
            [
                "run",
                "--manifest",
                str(mini_dataops_manifest),
                "--controller",
                "standard",
                "--policy",
                "solver",
                "--seed",
                "0",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        rows = read_record_dicts(out)
        assert rows and all(r["outcome"] == "success" for r in rows)

    def test_false_completer_gating_contrast(self, mini_dataops_manifest, tmp_path):
        outcomes = {}
        for controller in ("standard", "verifier_gated", "unit_qgp"):
            out = tmp_path / f"fc-{controller}.jsonl"
            assert (
                main(
                    [
                        "run",
                        "--manifest",
                        str(mini_dataops_manifest),
                        "--controller",
                        controller,
                        "--policy",
                        "false_completer",
                        "--seed",
                        "0",
                        "--out",
                        str(out),
                    ]
                )
                == 0
            )
            outcomes[controller] = [r["outcome"] for r in read_record_dicts(out)]
        assert all(o == "false_completion" for o in outcomes["standard"])
        assert all(o != "false_completion" for o in outcomes["verifier_gated"])
        assert all(o != "false_completion" for o in outcomes["unit_qgp"])

    def test_dead_adapter_aborts_with_nonzero_exit(self, mini_manifest, tmp_path):
        out = tmp_path / "abort.jsonl"
        code = main(
            [
                "run",
                "--manifest",
                str(mini_manifest),
                "--policy",
                "external",
                "--policy-cmd",
                f"{sys.executable} -c 'import sys; sys.exit(3)'",
                "--out",
                str(out),
            ]
        )
        assert code == 1
        rows = read_record_dicts(out)
        assert all(r["outcome"] == "aborted" for r in rows)
        assert all("abort_reason" in r for r in rows)


@pytest.fixture(scope="module")
def record_files(mini_manifest, tmp_path_factory):
    base = tmp_path_factory.mktemp("analysis")
    files = {}
    for controller in ("standard", "state_qgp"):
        out = base / f"{controller}.jsonl"
        code = main(
            [
                "run",
                "--manifest",
                str(mini_manifest),
                "--controller",
                controller,
                "--policy",
                "duplicator",
                "--seed",
                "4",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        files[controller] = out
    return files


class TestAnalysis:
    def test_aggregate_csv(self, record_files, tmp_path):
        out = tmp_path / "agg.csv"
        code = main(
            [
                "aggregate",
                "--records",
                str(record_files["standard"]),
                "--records",
                str(record_files["state_qgp"]),
                "--group-by",
                "controller,policy",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == (
            "controller,policy,runs,success_rate,avg_valid_count,duplicate_submit_rate,"
            "valid_per_step,budget_exhausted_rate,premature_stop_rate,"
            "false_completion_rate,provider_error_rate"
        )
        assert len(lines) == 3

    def test_delta_identical_files_zero(self, record_files, tmp_path):
        out = tmp_path / "delta.csv"
        code = main(
            [
                "delta",
                "--left",
                str(record_files["standard"]),
                "--right",
                str(record_files["standard"]),
                "--resamples",
                "500",
                "--seed",
                "6",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        row = out.read_text().splitlines()[1].split(",")
        assert row[3] == "0.000000"  # success_delta
        assert row[4] == "0.000000" and row[5] == "0.000000"  # ci bounds

    def test_delta_seeded_twice_byte_identical(self, record_files, tmp_path):
        outputs = []
        for name in ("d1.csv", "d2.csv"):
            out = tmp_path / name
            code = main(
                [
                    "delta",
                    "--left",
                    str(record_files["state_qgp"]),
                    "--right",
                    str(record_files["standard"]),
                    "--resamples",
                    "1000",
                    "--seed",
                    "7",
                    "--out",
                    str(out),
                ]
            )
            assert code == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]

    def test_delta_no_common_tasks_nonzero(self, record_files, tmp_path, mini_dataops_manifest):
        other = tmp_path / "other.jsonl"
        code = main(
            [
                "run",
                "--manifest",
                str(mini_dataops_manifest),
                "--policy",
                "solver",
                "--out",
                str(other),
            ]
        )
        assert code == 0
        code = main(
            [
                "delta",
                "--left",
                str(record_files["standard"]),
                "--right",
                str(other),
                "--out",
                str(tmp_path / "nope.csv"),
            ]
        )
        assert code == 2


class TestRunConfig:
    def test_file_round_trip_lossless(self, tmp_path):
        from qgp.cli import RunConfig

        config = RunConfig(
            manifest="/abs/manifest.json",
            controller="unit_qgp",
            policy="no_submit_looper",
            out="/abs/records.jsonl",
            policy_params={"loop_unit": "u003"},
            no_progress_limit=4,
            seed=17,
            jobs=3,
            workspace_root="/abs/ws",
        )
        path = tmp_path / "run.json"
        config.save(path)
        assert RunConfig.load(path) == config

    def test_run_from_config_file(self, mini_manifest, tmp_path):
        from qgp.cli import RunConfig

        out = tmp_path / "via-config.jsonl"
        config = RunConfig(
            manifest=str(mini_manifest),
            controller="state_qgp",
            policy="duplicator",
            out=str(out),
            seed=1,
        )
        config_path = tmp_path / "cfg.json"
        config.save(config_path)
        assert main(["run", "--config", str(config_path)]) == 0
        direct = tmp_path / "direct.jsonl"
        assert main(
            [
                "run",
                "--manifest",
                str(mini_manifest),
                "--controller",
                "state_qgp",
                "--policy",
                "duplicator",
                "--seed",
                "1",
                "--out",
                str(direct),
            ]
        ) == 0
        assert out.read_bytes() == direct.read_bytes()

    def test_run_without_manifest_errors(self, capsys):
        assert main(["run", "--policy", "duplicator"]) == 2
        assert "requires" in capsys.readouterr().err


class TestSmoke:
    def test_intact_manifests_pass(self, mini_manifest, mini_dataops_manifest, capsys):
        assert main(["smoke", "--manifest", str(mini_manifest)]) == 0
        assert "ok:" in capsys.readouterr().out
        assert main(["smoke", "--manifest", str(mini_dataops_manifest)]) == 0
        assert "ok:" in capsys.readouterr().out

    def test_injected_fault_detected(self, mini_manifest, tmp_path, capsys):
        obj = json.loads(Path(mini_manifest).read_text())
        obj["tasks"][0]["hidden"]["valid_ids"].pop()
        broken = tmp_path / "broken.json"
        broken.write_text(json.dumps(obj))
        assert main(["smoke", "--manifest", str(broken)]) == 1
        assert "hidden set mismatch" in capsys.readouterr().out

    def test_leaky_manifest_detected(self, mini_dataops_manifest, tmp_path, capsys):
        obj = json.loads(Path(mini_dataops_manifest).read_text())
        # Leak a checker's expected digest into a public prompt.
        task = obj["tasks"][0]
        for checker in task["hidden"]["checkers"].values():
            if checker["type"] == "file_digest":
                task["units"][0]["prompt"] += " " + checker["expected_digest"]
                break
        else:
            pytest.skip("no digest checker in first backlog")
        leaky = tmp_path / "leaky.json"
        leaky.write_text(json.dumps(obj))
        assert main(["smoke", "--manifest", str(leaky)]) == 1
        assert "leaked" in capsys.readouterr().out
