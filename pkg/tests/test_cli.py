import json
import shutil

import pytest

from wga.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def err_json(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture
def bundle(tmp_path, mock_dir):
    dst = tmp_path / "mock"
    shutil.copytree(mock_dir, dst)
    return dst


def test_agent_run(tmp_path, capsys, bundle):
    out = tmp_path / "traj.jsonl"
    code, stdout, _ = run(capsys, "agent-run", "--input", bundle / "prompts.jsonl", "--output", out,
                          "--mock-dir", bundle)
    assert code == 0 and "3/3" in stdout
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert [ln["prompt"]["id"] for ln in lines] == ["mascot-001", "landmark-001", "toy-001"]
    assert lines[0]["visual"]["selected"] == [0, 1]
    assert lines[1]["visual"]["selected"] == [2, 0]
    assert [e["stage"] for e in lines[0]["stage_log"]] == ["Think", "Research-Text", "Research-Visual",
                                                           "Recaption", "Generate"]


def test_parallel_run_matches_serial(tmp_path, capsys, bundle):
    a, b = tmp_path / "a" / "t.jsonl", tmp_path / "b" / "t.jsonl"
    run(capsys, "agent-run", "--input", bundle / "prompts.jsonl", "--output", a, "--mock-dir", bundle)
    run(capsys, "agent-run", "--input", bundle / "prompts.jsonl", "--output", b, "--mock-dir", bundle,
        "--parallelism", "3")
    assert a.read_bytes() == b.read_bytes()


def test_build_pack_mask(tmp_path, capsys, bundle):
    rec = tmp_path / "sft.jsonl"
    code, stdout, _ = run(capsys, "data-build", "--input", bundle / "prompts.jsonl", "--output", rec,
                          "--mock-dir", bundle)
    assert code == 0 and "2 records, 1 discarded" in stdout
    records = [json.loads(x) for x in rec.read_text().splitlines()]
    assert [(r["prompt"]["id"], r["trials_used"]) for r in records] == [("mascot-001", 1), ("landmark-001", 3)]
    (discard,) = [json.loads(x) for x in (tmp_path / "sft.discards.jsonl").read_text().splitlines()]
    assert discard["prompt_id"] == "toy-001" and discard["trials_used"] == 5
    assert len((tmp_path / "sft.trajectories.jsonl").read_text().splitlines()) == 3

    packs = tmp_path / "packs.jsonl"
    assert run(capsys, "data-pack", "--input", rec, "--output", packs)[0] == 0
    (pack,) = [json.loads(x) for x in packs.read_text().splitlines()]
    assert sorted(pack["samples"]) == ["landmark-001", "mascot-001"]
    assert pack["total_tokens"] <= 41520

    mask = tmp_path / "mask.txt"
    assert run(capsys, "mask", "dump", "--input", packs, "--output", mask, "--pack", "0")[0] == 0
    assert mask.read_text().startswith(f"# hybrid-mask n={pack['total_tokens']}\n")
    code, _, err = run(capsys, "mask-dump", "--input", packs, "--output", mask, "--pack", "5")
    assert code == 2 and err_json(err)["kind"] == "config"


def test_data_pack_skips_unverified(tmp_path, capsys, bundle):
    rec = tmp_path / "sft.jsonl"
    run(capsys, "data-build", "--input", bundle / "prompts.jsonl", "--output", rec, "--mock-dir", bundle)
    lines = rec.read_text().splitlines()
    bad = json.loads(lines[0])
    bad["verified"] = False
    rec.write_text(json.dumps(bad) + "\n" + lines[1] + "\n")
    out = tmp_path / "packs.jsonl"
    code, _, err = run(capsys, "data-pack", "--input", rec, "--output", out)
    assert code == 4 and err_json(err)["failures"] == 1
    assert json.loads((tmp_path / "packs.failures.json").read_text())["failures"][0]["id"] == "mascot-001"
    assert len(out.read_text().splitlines()) == 1


def test_data_pack_bad_jsonl(tmp_path, capsys):
    p = tmp_path / "x.jsonl"
    p.write_text("{bad\n")
    code, _, err = run(capsys, "data-pack", "--input", p, "--output", tmp_path / "o.jsonl")
    assert code == 2 and "line 1" in err_json(err)["message"]


def test_eval_score_and_aggregate(tmp_path, capsys, bundle):
    out = tmp_path / "report"
    code, stdout, _ = run(capsys, "eval-score", "--input", bundle / "eval_manifest.jsonl", "--output", out,
                          "--mock-dir", bundle)
    assert code == 0 and "3/3" in stdout
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"overall", "dimensions", "mini"}
    assert "Relevance" in (out / "table.txt").read_text()
    again = tmp_path / "again"
    assert run(capsys, "eval-aggregate", "--input", out / "items.csv", "--output", again)[0] == 0
    for name in ("items.csv", "summary.json", "table.txt"):
        assert (out / name).read_bytes() == (again / name).read_bytes()


def test_eval_partial_failure(tmp_path, capsys, bundle):
    rows = (bundle / "eval_manifest.jsonl").read_text().splitlines()
    broken = json.loads(rows[0])
    broken["generated"] = "images/nope.png"
    (bundle / "eval_manifest.jsonl").write_text("\n".join([json.dumps(broken)] + rows[1:]) + "\n")
    out = tmp_path / "report"
    code, _, err = run(capsys, "eval-score", "--input", bundle / "eval_manifest.jsonl", "--output", out,
                       "--mock-dir", bundle)
    assert code == 4 and err_json(err)["kind"] == "partial"
    assert json.loads((out / "failures.json").read_text())["failures"][0]["id"] == "mascot-001"
    assert (out / "items.csv").exists()


def test_judge_outage_exits_3(tmp_path, capsys, bundle):
    judge = bundle / "judge.jsonl"
    judge.write_text('{"match": "expert Image Quality Assessor", "status": 503}\n' + judge.read_text())
    out = tmp_path / "t.jsonl"
    code, _, err = run(capsys, "agent-run", "--input", bundle / "prompts.jsonl", "--output", out,
                       "--mock-dir", bundle)
    assert code == 3 and err_json(err)["kind"] == "backend"
    failures = json.loads((tmp_path / "t.failures.json").read_text())["failures"]
    assert {f["stage"] for f in failures} == {"Research-Visual"}


def test_live_mode_without_endpoint(tmp_path, capsys, bundle, monkeypatch):
    for var in ("WGA_BACKEND_URL", "WGA_BACKEND_URL_CHAT", "WGA_BACKEND_URL_JUDGE", "WGA_BACKEND_URL_IMAGEGEN"):
        monkeypatch.delenv(var, raising=False)
    code, _, err = run(capsys, "agent-run", "--input", bundle / "prompts.jsonl", "--output", tmp_path / "t.jsonl")
    assert code == 3 and "WGA_BACKEND_URL_CHAT" in err_json(err)["message"]


@pytest.mark.parametrize("config_text", [None, "{not json", '{"pipeline": {"warp_speed": 9}}', "[1]",
                                         '{"pipeline": {"clock": "sundial"}}'])
def test_config_errors(tmp_path, capsys, bundle, config_text):
    cfg = tmp_path / "cfg.json"
    if config_text is not None:
        cfg.write_text(config_text)
    code, _, err = run(capsys, "agent-run", "--config", cfg, "--input", bundle / "prompts.jsonl",
                       "--output", tmp_path / "t.jsonl", "--mock-dir", bundle)
    assert code == 2 and err_json(err)["status"] == "error"


def test_config_override_applies(tmp_path, capsys, bundle):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"pipeline": {"max_verify_trials": 2}}')
    rec = tmp_path / "sft.jsonl"
    code, stdout, _ = run(capsys, "data-build", "--config", cfg, "--input", bundle / "prompts.jsonl",
                          "--output", rec, "--mock-dir", bundle)
    assert code == 0 and "1 records, 2 discarded" in stdout


@pytest.mark.parametrize("extra", [["--parallelism", "0"], ["--mock-dir", "/nonexistent/mock"]])
def test_manifest_validation(tmp_path, capsys, bundle, extra):
    code, _, _ = run(capsys, "agent-run", "--input", bundle / "prompts.jsonl", "--output", tmp_path / "t.jsonl",
                     *extra)
    assert code == 2


def test_missing_input(tmp_path, capsys):
    code, _, err = run(capsys, "agent-run", "--input", tmp_path / "none.jsonl", "--output", tmp_path / "t.jsonl")
    assert code == 2 and "does not exist" in err_json(err)["message"]


def test_bad_prompt_line(tmp_path, capsys, bundle):
    p = tmp_path / "p.jsonl"
    p.write_text('{"text": "no id"}\n')
    code, _, err = run(capsys, "agent-run", "--input", p, "--output", tmp_path / "t.jsonl", "--mock-dir", bundle)
    assert code == 2 and "p.jsonl:1" in err_json(err)["message"]
