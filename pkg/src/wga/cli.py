"""Command-line entry point.

Exit codes: 0 success, 2 bad config or input, 3 backend unreachable,
4 some items failed (a per-item failure manifest is written next to the
output).
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .backends import (
    BackendError,
    BackendUnavailable,
    MockBackend,
    RetryPolicy,
    backend_from_env,
)
from .evaluation import (
    CategoryTaxonomy,
    FactIpWeights,
    emit_report,
    read_manifest,
    read_results_csv,
    score_manifest,
)
from .masks import build_hybrid_mask, dump_mask
from .pipeline import PipelineConfig, build_one, run_many, run_trajectory, trajectory_line, wall_clock
from .ranker import RankerConfig
from .records import (
    ImageStore,
    RecordParseError,
    SftRecord,
    UserPrompt,
    atomic_write_text,
    dumps_record,
    read_records,
)
from .search import FixtureProvider, LiveProvider, ToolError
from .trainprep import OversizeItemError, TrainConfig, assemble_packs, pack_from_dict, pack_to_dict, sample_segments

log = logging.getLogger("wga")

EXIT_OK, EXIT_CONFIG, EXIT_UNREACHABLE, EXIT_PARTIAL = 0, 2, 3, 4
COMMANDS = ("agent-run", "data-build", "data-pack", "mask-dump", "eval-score", "eval-aggregate")


class ConfigError(Exception):
    pass


class CliExit(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


# ---------------------------------------------------------------------------
# configuration


def default_config() -> dict:
    text = resources.files("wga").joinpath("data/default_config.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    return _merge(cfg, user)


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    input: Path
    output: Path
    seed: int | None = None
    parallelism: int = 1
    mock_dir: Path | None = None
    strict_json: bool = False
    pack: int = 0

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.parallelism < 1:
            raise ConfigError("--parallelism must be >= 1")
        if not self.input.exists():
            raise ConfigError(f"input {self.input} does not exist")
        if self.mock_dir is not None and not self.mock_dir.is_dir():
            raise ConfigError(f"mock directory {self.mock_dir} does not exist")


def _sidecar(output: Path, suffix: str) -> Path:
    return output.with_name(output.stem + suffix)


def _store(manifest: RunManifest) -> ImageStore:
    root = manifest.config["store"].get("root")
    if root is None:
        root = manifest.output.parent / "images"
    return ImageStore(root)


def _backends(manifest: RunManifest, store: ImageStore, roles=("chat", "judge", "imagegen")) -> dict:
    bcfg = manifest.config["backends"]
    out = {}
    if manifest.mock_dir is not None:
        for role in roles:
            path = manifest.mock_dir / f"{role}.jsonl"
            if not path.exists() and role == "factip_judge":
                path = manifest.mock_dir / "judge.jsonl"
            if not path.exists():
                raise ConfigError(f"mock bundle lacks {path.name}")
            try:
                out[role] = MockBackend.from_file(path, store, concurrency=bcfg["concurrency"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return out
    try:
        policy = RetryPolicy(**bcfg["retry"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backends.retry: {exc}") from None
    for role in roles:
        try:
            out[role] = backend_from_env(role, store, policy=policy, timeout=bcfg["timeout"],
                                         concurrency=bcfg["concurrency"])
        except BackendError as exc:
            raise CliExit(EXIT_UNREACHABLE, "backend", str(exc)) from None
    return out


def _search(manifest: RunManifest):
    if manifest.mock_dir is not None:
        return FixtureProvider(manifest.mock_dir / "search", manifest.mock_dir / "images")
    try:
        return LiveProvider.from_env()
    except ToolError as exc:
        raise CliExit(EXIT_UNREACHABLE, "backend", str(exc)) from None


def pipeline_config(manifest: RunManifest, store: ImageStore) -> PipelineConfig:
    p = dict(manifest.config["pipeline"])
    clock = p.pop("clock", "logical")
    if clock not in ("logical", "wall"):
        raise ConfigError("pipeline.clock must be 'logical' or 'wall'")
    if manifest.seed is not None:
        p["seed"] = manifest.seed
    if manifest.strict_json:
        p["strict_json"] = True
    try:
        ranker = RankerConfig.from_dict(manifest.config["ranker"])
        b = _backends(manifest, store)
        return PipelineConfig(chat=b["chat"], judge=b["judge"], imagegen=b["imagegen"], search=_search(manifest),
                              store=store, ranker=ranker, clock=wall_clock if clock == "wall" else None, **p)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pipeline config: {exc}") from None


def _read_prompts(path: Path) -> list[tuple[UserPrompt, list[Path]]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                truth = [path.parent / g for g in d.pop("ground_truth", [])]
                out.append((UserPrompt.from_dict(d), truth))
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad prompt line: {exc}") from None
    return out


def _failure_manifest(path: Path, failures: list[dict]) -> None:
    atomic_write_text(path, json.dumps({"failures": failures}, indent=2, ensure_ascii=False) + "\n")


def _finish(failures: list[dict], unavailable: bool, manifest_path: Path) -> int:
    if not failures:
        return EXIT_OK
    _failure_manifest(manifest_path, failures)
    code = EXIT_UNREACHABLE if unavailable else EXIT_PARTIAL
    kind = "backend" if unavailable else "partial"
    raise CliExit(code, kind, f"{len(failures)} item(s) failed", failures=len(failures),
                  manifest=str(manifest_path))


# ---------------------------------------------------------------------------
# commands


def cmd_agent_run(m: RunManifest) -> int:
    prompts = [p for p, _ in _read_prompts(m.input)]
    store = _store(m)
    config = pipeline_config(m, store)
    trajs = run_many(lambda p: run_trajectory(p, config), prompts, m.parallelism)
    atomic_write_text(m.output, "".join(trajectory_line(t) + "\n" for t in trajs))
    failures = [{"id": t.prompt.id, "stage": t.failed_stage, "error": t.error} for t in trajs if t.failed]
    print(f"agent-run: {len(trajs) - len(failures)}/{len(trajs)} trajectories completed -> {m.output}")
    return _finish(failures, any(t.backend_unavailable for t in trajs), _sidecar(m.output, ".failures.json"))


def cmd_data_build(m: RunManifest) -> int:
    items = _read_prompts(m.input)
    store = _store(m)
    config = pipeline_config(m, store)

    def one(item):
        prompt, truth_paths = item
        try:
            truth = [store.put(p.read_bytes()) for p in truth_paths]
        except OSError as exc:
            raise ConfigError(f"ground truth for {prompt.id}: {exc}") from None
        return build_one(prompt, truth, config)

    results = run_many(one, items, m.parallelism)
    records, discards, failures = [], [], []
    for r in results:
        if isinstance(r.outcome, SftRecord):
            records.append(r.outcome)
        elif r.outcome is not None:
            discards.append(r.outcome)
        else:
            failures.append({"id": r.prompt.id, "stage": r.trajectory.failed_stage, "error": r.error})
    atomic_write_text(m.output, "".join(dumps_record(rec) + "\n" for rec in records))
    atomic_write_text(_sidecar(m.output, ".discards.jsonl"),
                      "".join(json.dumps(d.to_dict(), ensure_ascii=False) + "\n" for d in discards))
    atomic_write_text(_sidecar(m.output, ".trajectories.jsonl"),
                      "".join(trajectory_line(r.trajectory) + "\n" for r in results))
    print(f"data-build: {len(records)} records, {len(discards)} discarded, {len(failures)} failed -> {m.output}")
    return _finish(failures, any(r.backend_unavailable for r in results), _sidecar(m.output, ".failures.json"))


def cmd_data_pack(m: RunManifest) -> int:
    try:
        tcfg = TrainConfig.from_dict(m.config["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train config: {exc}") from None
    try:
        with open(m.input, encoding="utf-8") as fh:
            records = read_records(fh)
    except RecordParseError as exc:
        raise ConfigError(str(exc)) from None
    samples, failures = [], []
    for rec in records:
        if not rec.verified:
            failures.append({"id": rec.prompt.id, "error": "record is not verified"})
            continue
        segs = sample_segments(rec, tcfg)
        cost = sum(s.token_count for s in segs)
        if cost > tcfg.max_tokens_per_sample:
            failures.append({"id": rec.prompt.id, "error": str(OversizeItemError(rec.prompt.id, cost,
                                                                                 tcfg.max_tokens_per_sample))})
            continue
        samples.append(segs)
    packs = assemble_packs(samples, tcfg)
    atomic_write_text(m.output, "".join(json.dumps(pack_to_dict(p, i), ensure_ascii=False) + "\n"
                                        for i, p in enumerate(packs)))
    print(f"data-pack: {len(samples)} samples in {len(packs)} packs -> {m.output}")
    return _finish(failures, False, _sidecar(m.output, ".failures.json"))


def cmd_mask_dump(m: RunManifest) -> int:
    with open(m.input, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not 0 <= m.pack < len(lines):
        raise ConfigError(f"--pack {m.pack} out of range (file has {len(lines)} packs)")
    try:
        pack = pack_from_dict(json.loads(lines[m.pack]))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"pack {m.pack}: {exc}") from None
    atomic_write_text(m.output, dump_mask(build_hybrid_mask(pack)))
    print(f"mask-dump: pack {m.pack} ({pack.total_tokens} tokens) -> {m.output}")
    return EXIT_OK


def _eval_settings(m: RunManifest) -> tuple[FactIpWeights, CategoryTaxonomy, int]:
    e = m.config["eval"]
    try:
        return FactIpWeights(*e["factip_weights"]), CategoryTaxonomy.full(), int(e["mini_size"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"eval config: {exc}") from None


def cmd_eval_score(m: RunManifest) -> int:
    weights, tax, mini = _eval_settings(m)
    try:
        items = read_manifest(m.input)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    store = ImageStore()
    role = m.config["eval"]["judge_role"]
    judge = _backends(m, store, roles=(role,))[role]
    results = score_manifest(items, judge, store, weights, m.input.parent, m.strict_json,
                             m.seed or 0, m.parallelism)
    emit_report(results, m.output, tax, mini_size=mini)
    failures = [{"id": r.item_id, "error": r.error} for r in results if r.error]
    print(f"eval-score: {len(results) - len(failures)}/{len(results)} items scored -> {m.output}")
    return _finish(failures, any(r.unavailable for r in results), m.output / "failures.json")


def cmd_eval_aggregate(m: RunManifest) -> int:
    _, tax, mini = _eval_settings(m)
    try:
        results = read_results_csv(m.input.read_text(encoding="utf-8"))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{m.input}: {exc}") from None
    emit_report(results, m.output, tax, mini_size=mini)
    print(f"eval-aggregate: {len(results)} items -> {m.output}")
    return EXIT_OK


HANDLERS = {
    "agent-run": cmd_agent_run,
    "data-build": cmd_data_build,
    "data-pack": cmd_data_pack,
    "mask-dump": cmd_mask_dump,
    "eval-score": cmd_eval_score,
    "eval-aggregate": cmd_eval_aggregate,
}


def dispatch(manifest: RunManifest) -> int:
    manifest.validate()
    return HANDLERS[manifest.command](manifest)


# ---------------------------------------------------------------------------
# argv


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config; sections override the bundled defaults")
    common.add_argument("--input", required=True, type=Path)
    common.add_argument("--output", required=True, type=Path)
    common.add_argument("--seed", type=int)
    common.add_argument("--parallelism", type=int, default=1)
    common.add_argument("--mock-dir", type=Path, help="run against a scripted mock bundle instead of live endpoints")
    common.add_argument("--strict-json", action="store_true", help="reject judge replies that are not bare JSON")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wga", description="World-grounded image synthesis agent tooling")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "agent-run": "run the agent on prompts and write a trajectory log",
        "data-build": "build verified SFT records with reject sampling",
        "data-pack": "pack SFT records into training sequences",
        "mask-dump": "write the hybrid attention mask of one pack",
        "eval-score": "judge a benchmark manifest and write reports",
        "eval-aggregate": "re-aggregate an items.csv into reports",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "mask-dump":
            p.add_argument("--pack", type=int, default=0, help="pack index within the input file")
    return parser


def _normalize_argv(argv: list[str]) -> list[str]:
    # accept "mask dump" as well as "mask-dump"
    if len(argv) >= 2 and f"{argv[0]}-{argv[1]}" in COMMANDS:
        return [f"{argv[0]}-{argv[1]}", *argv[2:]]
    return argv


def _report(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"status": "error", "exit": code, "kind": kind, "message": message, **extra},
                     ensure_ascii=False), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(_normalize_argv(list(sys.argv[1:] if argv is None else argv)))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = RunManifest(
            command=args.command,
            config=load_config(args.config),
            input=args.input,
            output=args.output,
            seed=args.seed,
            parallelism=args.parallelism,
            mock_dir=args.mock_dir,
            strict_json=args.strict_json,
            pack=getattr(args, "pack", 0),
        )
        return dispatch(manifest)
    except ConfigError as exc:
        return _report(EXIT_CONFIG, "config", str(exc))
    except CliExit as exc:
        return _report(exc.code, exc.kind, str(exc), **exc.extra)
    except BackendUnavailable as exc:
        return _report(EXIT_UNREACHABLE, "backend", str(exc))


if __name__ == "__main__":
    sys.exit(main())
