"""Command line front end: individual stages plus the end-to-end pipeline.

One JSON config document describes all inputs; command line flags override
config keys (flag > config key > built-in default). Relative paths inside
the config resolve against the config file's directory. All randomness
(key generation) flows from one seed so a pipeline run is reproducible
byte for byte; pass --system-entropy to use OS entropy instead.

Exit codes: 0 success, 1 findings remain (or an audit failed), 2
configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import dam
from .ahp import AhpHierarchy, resolve
from .collector import RawStream, load_grammars, load_probes, run_collector
from .correlation import correlate, load_rules
from .events import deserialize_alarm, deserialize_event, serialize_alarm, serialize_event
from .policies import (
    detect_conflicts,
    detect_policy_anomalies,
    dump_system_description,
    load_policies,
    load_system_description,
)
from .reachability import react, remediate, run_reachability_analysis
from .storage import AlarmStore, ResilientStorage, audit
from .thresholdsig import ThresholdParams, dealer_keygen, public_from_dict

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_CONFIG = 2
EXIT_STAGE = 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusEntry:
    stream_id: str
    grammar: str
    path: Path


@dataclass(frozen=True)
class PipelineConfig:
    grammars: Path
    probes: Path
    rules: Path
    policies: Path
    system: Path
    corpus: tuple[CorpusEntry, ...]
    hierarchy: Optional[Path]
    n: int
    k: int
    key_bits: int
    seed: Optional[int]
    out: Path


_ALL_INPUTS = ("grammars", "probes", "rules", "policies", "system")


def load_config(args, required: tuple[str, ...] = _ALL_INPUTS) -> PipelineConfig:
    """Merge the config document with command line overrides and validate.

    Inputs in `required` must resolve to existing files; any other input
    that is referenced (by flag or config key) must exist too, but may be
    omitted entirely.
    """
    doc = {}
    base = Path(".")
    if getattr(args, "config", None):
        config_path = Path(args.config)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            doc = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        base = config_path.parent

    def pick(flag: str, key: str, default=None):
        value = getattr(args, flag, None)
        if value is not None:
            return value, Path(".")  # flag paths resolve against the cwd
        if doc.get(key) is not None:
            return doc[key], base
        return default, base

    def pick_path(flag: str, key: str, required: bool) -> Optional[Path]:
        value, root = pick(flag, key)
        if value is None:
            if required:
                raise ConfigError(f"missing required input: {key}")
            return None
        path = root / str(value)
        if not path.is_file():
            raise ConfigError(f"{key} file not found: {path}")
        return path

    corpus = []
    for entry in doc.get("corpus", []) or []:
        path = base / str(entry["path"])
        if not path.is_file():
            raise ConfigError(f"corpus file not found: {path}")
        corpus.append(CorpusEntry(entry["id"], entry["grammar"], path))

    storage_doc = doc.get("storage", {}) or {}
    n = int(storage_doc.get("n", 4))
    k = int(storage_doc.get("k", 3))
    key_bits = int(storage_doc.get("key_bits", 512))
    if not 1 <= k <= n:
        raise ConfigError(f"storage params need n >= k >= 1, got n={n} k={k}")

    seed_value, _ = pick("seed", "seed", 0)
    seed: Optional[int] = int(seed_value)
    if getattr(args, "system_entropy", False):
        seed = None

    out_value, out_root = pick("out", "out", ".")
    return PipelineConfig(
        grammars=pick_path("grammars", "grammars", required="grammars" in required),
        probes=pick_path("probes", "probes", required="probes" in required),
        rules=pick_path("rules", "rules", required="rules" in required),
        policies=pick_path("policies", "policies", required="policies" in required),
        system=pick_path("system", "system", required="system" in required),
        corpus=tuple(corpus),
        hierarchy=pick_path("hierarchy", "hierarchy", required=False),
        n=n,
        k=k,
        key_bits=key_bits,
        seed=seed,
        out=out_root / str(out_value),
    )


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text())


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_hierarchy(path: Optional[Path]) -> Optional[AhpHierarchy]:
    if path is None:
        return None
    doc = _read_json(path)
    return AhpHierarchy(
        goal=doc.get("goal", "resolve-conflict"),
        criteria=tuple((c["name"], float(c["weight"])) for c in doc["criteria"]),
        subcriteria={
            name: tuple((s["name"], float(s["weight"])) for s in subs)
            for name, subs in doc.get("subcriteria", {}).items()
        },
    )


# --- stages (shared by subcommands and the pipeline) ---------------------------------


def stage_collect(config: PipelineConfig) -> dict:
    grammars = load_grammars(_read_json(config.grammars))
    probes = load_probes(_read_json(config.probes))
    streams = [
        RawStream(entry.stream_id, entry.grammar, entry.path.read_text().splitlines())
        for entry in config.corpus
    ]
    result = run_collector(grammars, probes, streams)
    config.out.mkdir(parents=True, exist_ok=True)
    with open(config.out / "events.jsonl", "wb") as fh:
        for event in result.events:
            fh.write(serialize_event(event))
    _write_json(
        config.out / "quarantine.json",
        [{"stream": s, "line": n, "reason": r} for s, n, r in result.quarantine_log],
    )
    return {
        "events": len(result.events),
        "parsed": result.parsed,
        "emitted": result.emitted,
        "quarantined": result.quarantined,
    }


def stage_correlate(config: PipelineConfig, events_path: Path) -> dict:
    events = [deserialize_event(line) for line in events_path.read_bytes().splitlines()]
    result = correlate(events, load_rules(_read_json(config.rules)))
    config.out.mkdir(parents=True, exist_ok=True)
    with open(config.out / "alarms.jsonl", "wb") as fh:
        for alarm in result.alarms:
            fh.write(serialize_alarm(alarm))
    return {"alarms": len(result.alarms)}


def stage_store(config: PipelineConfig, alarms_path: Path) -> dict:
    alarms = [deserialize_alarm(line) for line in alarms_path.read_bytes().splitlines()]
    params = ThresholdParams(config.n, config.k)
    material = dealer_keygen(params, bits=config.key_bits, seed=config.seed)
    config.out.mkdir(parents=True, exist_ok=True)
    _write_json(config.out / "key.json", material.public())
    store_path = config.out / "store.bin"
    store_path.write_bytes(b"")  # fresh store per run
    store = AlarmStore(store_path)
    vault = ResilientStorage(material, store, config.out / "dead_letter.jsonl")
    for alarm in alarms:
        vault.process_alarm(alarm)
    report = audit(store, material)
    return {
        "records": report.records_checked,
        "audit_clean": report.clean,
        "audit_failures": list(report.failures),
    }


def stage_resolve(config: PipelineConfig) -> dict:
    policies = load_policies(_read_json(config.policies))
    sd = load_system_description(_read_json(config.system))
    hierarchy = _load_hierarchy(config.hierarchy)
    anomalies = detect_policy_anomalies(policies)
    conflicts = detect_conflicts(policies, sd)
    dropped: set[str] = set()
    resolutions = []
    for first, second in conflicts:
        resolution = resolve(first, second, hierarchy)
        loser = second if resolution.chosen_policy_id == first.policy_id else first
        dropped.add(loser.policy_id)
        resolutions.append(resolution.as_dict())
    active = [p.policy_id for p in policies if p.policy_id not in dropped]
    doc = {
        "anomalies": [
            {"kind": a.kind, "policies": list(a.policy_ids), "detail": a.detail}
            for a in anomalies
        ],
        "resolutions": resolutions,
        "active_policies": active,
    }
    _write_json(config.out / "resolutions.json", doc)
    return {"conflicts": len(resolutions), "anomalies": len(anomalies), "active": active}


def _active_policies(config: PipelineConfig, resolutions_path: Optional[Path]):
    policies = load_policies(_read_json(config.policies))
    if resolutions_path is not None and resolutions_path.is_file():
        keep = set(_read_json(resolutions_path)["active_policies"])
        policies = [p for p in policies if p.policy_id in keep]
    return policies


def stage_reachability(config: PipelineConfig, resolutions_path: Optional[Path]) -> dict:
    sd = load_system_description(_read_json(config.system))
    policies = _active_policies(config, resolutions_path)
    run = run_reachability_analysis(sd, policies)
    doc = {
        "findings": [f.as_dict() for f in run.findings],
        "generated_rules": {
            fw: [r.as_dict() for r in ruleset.rules] for fw, ruleset in run.generated.items()
        },
    }
    _write_json(config.out / "findings_pre.json", doc)
    return {"findings_pre": len(run.findings)}


def stage_react(config: PipelineConfig, resolutions_path: Optional[Path]) -> dict:
    sd = load_system_description(_read_json(config.system))
    policies = _active_policies(config, resolutions_path)
    run = run_reachability_analysis(sd, policies)
    remediation = remediate(run.findings, sd, policies)
    fixed = react(sd, remediation)
    rerun = run_reachability_analysis(fixed, policies)
    _write_json(config.out / "remediation.json", remediation.as_dict())
    _write_json(config.out / "system_after.json", dump_system_description(fixed))
    _write_json(config.out / "findings_post.json", {"findings": [f.as_dict() for f in rerun.findings]})
    return {"suggestions": len(remediation.suggestions), "findings_post": len(rerun.findings)}


def stage_audit(config: PipelineConfig, store_path: Path, key_path: Path) -> dict:
    material = public_from_dict(_read_json(key_path))
    report = audit(AlarmStore(store_path), material)
    doc = report.as_dict()
    _write_json(config.out / "audit.json", doc)
    return doc


# --- pipeline -------------------------------------------------------------------------


def run_pipeline(config: PipelineConfig) -> int:
    """collect -> correlate -> sign+store -> resolve -> analyze -> react -> re-analyze."""
    summary: dict = {}
    stage = "collect"
    try:
        summary.update(stage_collect(config))
        stage = "correlate"
        summary.update(stage_correlate(config, config.out / "events.jsonl"))
        stage = "store"
        summary.update(stage_store(config, config.out / "alarms.jsonl"))
        stage = "resolve-conflicts"
        resolved = stage_resolve(config)
        summary["conflicts"] = resolved["conflicts"]
        summary["policy_anomalies"] = resolved["anomalies"]
        stage = "reachability"
        summary.update(stage_reachability(config, config.out / "resolutions.json"))
        stage = "react"
        summary.update(stage_react(config, config.out / "resolutions.json"))
    except Exception as exc:  # noqa: BLE001  (stage errors become a report, not a trace)
        config.out.mkdir(parents=True, exist_ok=True)
        _write_json(
            config.out / "error.json",
            {"stage": stage, "error": type(exc).__name__, "detail": str(exc)},
        )
        print(f"stage {stage} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    clean = summary["findings_post"] == 0 and summary["audit_clean"]
    summary["status"] = "clean" if clean else "findings_remain"
    summary["exit_code"] = EXIT_OK if clean else EXIT_FINDINGS
    _write_json(config.out / "summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return summary["exit_code"]


# --- argument parsing -------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, *flags: str) -> None:
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--out", help="output directory (default: config key, then cwd)")
    parser.add_argument("--seed", type=int, help="seed for key generation")
    parser.add_argument(
        "--system-entropy",
        action="store_true",
        help="use OS entropy instead of the seed (run is no longer reproducible)",
    )
    for flag in flags:
        parser.add_argument(f"--{flag}", help=f"override the {flag} input path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="siemflow",
        description="event collection, correlation, policy analysis and signed alarm storage",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="parse raw streams into normalized events")
    _add_common(p, "grammars", "probes", "rules", "policies", "system")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("correlate", help="turn normalized events into alarms")
    _add_common(p, "rules", "grammars", "probes", "policies", "system")
    p.add_argument("--events", help="events.jsonl from the collect stage")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("resolve-conflicts", help="detect policy conflicts and pick winners")
    _add_common(p, "policies", "system", "hierarchy", "grammars", "probes", "rules")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("reachability", help="compare policy intent against deployed filtering")
    _add_common(p, "policies", "system", "grammars", "probes", "rules")
    p.add_argument("--resolutions", help="resolutions.json limiting the active policy set")
    p.set_defaults(func=cmd_reachability)

    p = sub.add_parser("react", help="apply remediation suggestions and re-analyze")
    _add_common(p, "policies", "system", "grammars", "probes", "rules")
    p.add_argument("--resolutions", help="resolutions.json limiting the active policy set")
    p.set_defaults(func=cmd_react)

    p = sub.add_parser("res-audit", help="verify every signed record in an alarm store")
    _add_common(p, "grammars", "probes", "rules", "policies", "system")
    p.add_argument("--store", help="store.bin path (default: <out>/store.bin)")
    p.add_argument("--key", help="public key material JSON (default: <out>/key.json)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("dam-sim", help="write the dam misuse-case scenario bundle")
    p.add_argument("--out", required=True, help="directory for the scenario bundle")
    p.add_argument("--seed", type=int, default=1234, help="seed recorded in the bundle config")
    p.set_defaults(func=cmd_dam_sim)

    p = sub.add_parser("run", help="run the full pipeline")
    _add_common(p, "grammars", "probes", "rules", "policies", "system", "hierarchy")
    p.set_defaults(func=cmd_run)

    return parser


def _staged(name: str, fn, config: PipelineConfig, *args) -> tuple[int, dict]:
    try:
        return EXIT_OK, fn(config, *args)
    except Exception as exc:  # noqa: BLE001
        config.out.mkdir(parents=True, exist_ok=True)
        _write_json(
            config.out / "error.json",
            {"stage": name, "error": type(exc).__name__, "detail": str(exc)},
        )
        print(f"stage {name} failed: {exc}", file=sys.stderr)
        return EXIT_STAGE, {}


def cmd_collect(args) -> int:
    config = load_config(args, required=("grammars", "probes"))
    code, info = _staged("collect", lambda c: stage_collect(c), config)
    if code == EXIT_OK:
        print(json.dumps(info, indent=2, sort_keys=True))
    return code


def cmd_correlate(args) -> int:
    config = load_config(args, required=("rules",))
    events = Path(args.events) if args.events else config.out / "events.jsonl"
    if not events.is_file():
        raise ConfigError(f"events file not found: {events}")
    code, info = _staged("correlate", stage_correlate, config, events)
    if code == EXIT_OK:
        print(json.dumps(info, indent=2, sort_keys=True))
    return code


def cmd_resolve(args) -> int:
    config = load_config(args, required=("policies", "system"))
    code, info = _staged("resolve-conflicts", lambda c: stage_resolve(c), config)
    if code == EXIT_OK:
        print(json.dumps(info, indent=2, sort_keys=True))
    return code


def _resolutions_path(args, config: PipelineConfig) -> Optional[Path]:
    if getattr(args, "resolutions", None):
        path = Path(args.resolutions)
        if not path.is_file():
            raise ConfigError(f"resolutions file not found: {path}")
        return path
    return None


def cmd_reachability(args) -> int:
    config = load_config(args, required=("policies", "system"))
    code, info = _staged("reachability", stage_reachability, config, _resolutions_path(args, config))
    if code != EXIT_OK:
        return code
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK if info["findings_pre"] == 0 else EXIT_FINDINGS


def cmd_react(args) -> int:
    config = load_config(args, required=("policies", "system"))
    code, info = _staged("react", stage_react, config, _resolutions_path(args, config))
    if code != EXIT_OK:
        return code
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK if info["findings_post"] == 0 else EXIT_FINDINGS


def cmd_audit(args) -> int:
    config = load_config(args, required=())
    store = Path(args.store) if args.store else config.out / "store.bin"
    key = Path(args.key) if args.key else config.out / "key.json"
    for path, label in ((store, "store"), (key, "key")):
        if not path.is_file():
            raise ConfigError(f"{label} file not found: {path}")
    code, info = _staged("res-audit", stage_audit, config, store, key)
    if code != EXIT_OK:
        return code
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK if info["clean"] else EXIT_FINDINGS


def cmd_dam_sim(args) -> int:
    bundle = dam.misuse_case()
    config_path = dam.write_bundle(bundle, Path(args.out), seed=args.seed)
    print(str(config_path))
    return EXIT_OK


def cmd_run(args) -> int:
    return run_pipeline(load_config(args))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "detail": str(exc)}, sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
