"""``dcot`` command line: gen-matrix, generate, pack, decontam, orpo-check, eval, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from dcot import __version__
from dcot import datagen, decontam, evalharness, orpo
from dcot.config import PipelineConfig
from dcot.decode import WHITESPACE, HFTokenizerCounter, RetryPolicy
from dcot.endpoints import (
    MultipleChoiceStub,
    OpenAIChatEndpoint,
    OpenAIEmbeddingEndpoint,
    ScriptedEndpoint,
    load_stub_rules,
)
from dcot.errors import ConfigError, DcotError

log = logging.getLogger("dcot")


class BadArgs(DcotError):
    code = "BAD_ARGS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadArgs(message)


def _emit_error(err: DcotError) -> None:
    print(json.dumps({"error": err.as_dict()}, default=str), file=sys.stderr)


# -- run directory ------------------------------------------------------------------

class RunDir:
    """``<out_root>/<UTC timestamp>-<config hash>`` plus a manifest written on close."""

    def __init__(self, cfg: PipelineConfig, command: str, args: dict, out_dir: str | None, argv):
        self.config_hash = cfg.hash({"command": command, **args})
        self.started = datetime.now(timezone.utc)
        stamp = self.started.strftime("%Y%m%dT%H%M%S%fZ")
        self.path = Path(out_dir) if out_dir else Path(cfg.out_root) / f"{stamp}-{self.config_hash[:10]}"
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "argv": list(argv),
            "config_hash": self.config_hash,
            "config": asdict(cfg),
            "args": args,
            "versions": {"dcot": __version__, "python": platform.python_version(), "numpy": np.__version__},
            "started_at": self.started.isoformat(),
            "outputs": {},
        }

    def out(self, name: str) -> Path:
        p = self.path / name
        self.manifest["outputs"][name] = str(p)
        return p

    def close(self, **summary) -> None:
        self.manifest["finished_at"] = datetime.now(timezone.utc).isoformat()
        self.manifest["summary"] = summary
        (self.path / "run_manifest.json").write_text(json.dumps(self.manifest, indent=2, default=str),
                                                   encoding="utf-8")


def _args_dict(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(ns).items() if k not in ("func", "config", "out_dir", "verbose")}


def _retry(cfg: PipelineConfig) -> RetryPolicy:
    return RetryPolicy(cfg.retry_attempts, cfg.retry_base_delay)


def _chat_endpoint(ec):
    return OpenAIChatEndpoint(ec.base_url, ec.model, ec.api_key_env, ec.timeout, ec.extra_body)


# -- subcommands --------------------------------------------------------------------

def cmd_gen_matrix(ns, cfg, run: RunDir) -> dict:
    matrix = datagen.ScenarioMatrix.load(ns.matrix)
    combos = datagen.enumerate_matrix(matrix)
    if ns.sample:
        combos = datagen.sample_combinations(combos, ns.sample, ns.seed)
    with open(run.out("combos.jsonl"), "w", encoding="utf-8") as f:
        for c in combos:
            f.write(json.dumps({
                **asdict(c),
                "scenario": matrix.scenarios[c.scenario_id].topic,
                "domain": matrix.scenarios[c.scenario_id].domain,
                "template": matrix.templates[c.template_id].id,
                "rejection_category": matrix.rejection_categories[c.category_id].name,
            }) + "\n")
    return {"domains": len(matrix.domains), "scenarios": len(matrix.scenarios),
            "templates": len(matrix.templates), "rejection_categories": len(matrix.rejection_categories),
            "combinations": matrix.size, "written": len(combos)}


def _read_combos(path) -> list[datagen.Combo]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                d = json.loads(line)
                out.append(datagen.Combo(d["scenario_id"], d["template_id"], d["category_id"]))
    return out


def cmd_generate(ns, cfg, run: RunDir) -> dict:
    matrix = datagen.ScenarioMatrix.load(ns.matrix)
    if ns.combos:
        combos = _read_combos(ns.combos)
    else:
        combos = datagen.sample_combinations(datagen.enumerate_matrix(matrix), ns.sample, ns.seed)
    fewshot = datagen.load_fewshot(ns.fewshot)
    if ns.stub:
        endpoint, teacher_id = ScriptedEndpoint(load_stub_rules(ns.stub)), "stub"
    else:
        endpoint, teacher_id = _chat_endpoint(cfg.teacher_endpoint), cfg.teacher_endpoint.model
    res = datagen.generate_samples(
        matrix, combos, fewshot, endpoint, run.out("pairs.jsonl"), sampling=cfg.teacher_sampling,
        teacher_model_id=teacher_id, max_concurrency=ns.concurrency or cfg.generate_concurrency,
        rejects_path=run.out("rejects.jsonl"))
    return {"requested": len(combos), "accepted": res.accepted, "dropped": len(res.dropped)}


def cmd_pack(ns, cfg, run: RunDir) -> dict:
    packed, invalid = [], 0
    with open(ns.pairs, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            raw = json.loads(line)
            pair = datagen.validate_sample(raw)
            if isinstance(pair, datagen.PreferencePair):
                packed.append(datagen.pack(pair))
            else:
                invalid += 1
    n = datagen.write_packed(packed, run.out("packed_orpo.jsonl"))
    return {"packed": n, "invalid": invalid}


def _kv(values, what) -> dict:
    out = {}
    for v in values or []:
        if "=" not in v:
            raise BadArgs(f"{what} expects NAME=PATH, got {v!r}")
        k, p = v.split("=", 1)
        out[k] = p
    return out


def cmd_decontam(ns, cfg, run: RunDir) -> dict:
    fields = tuple(ns.fields.split(","))
    samples = []
    with open(ns.samples, encoding="utf-8") as f:
        for i, line in enumerate(l for l in f if l.strip()):
            raw = json.loads(line)
            samples.append((raw, decontam.Sample(str(raw.get("id", i)), decontam.pair_text(raw, fields))))
    sample_emb = decontam.load_embedding_sidecar(ns.sample_embeddings) if ns.sample_embeddings else {}
    bench_paths = _kv(ns.benchmark, "--benchmark")
    bench_emb_paths = _kv(ns.benchmark_embeddings, "--benchmark-embeddings")
    embedder = None
    if ns.embed:
        ec = cfg.embedder_endpoint
        embedder = OpenAIEmbeddingEndpoint(ec.base_url, ec.model, ec.api_key_env).embed
    if embedder:
        decontam.embed_missing([s.id for _, s in samples], [s.text for _, s in samples], sample_emb, embedder)
    sets = []
    for name, path in bench_paths.items():
        items = evalharness.load_benchmark(path)
        texts = [it.question + "\n" + "\n".join(it.options) for it in items]
        ids = [it.id for it in items]
        emb = decontam.load_embedding_sidecar(bench_emb_paths[name]) if name in bench_emb_paths else {}
        if embedder:
            decontam.embed_missing(ids, texts, emb, embedder)
        sets.append(decontam.BenchmarkSet(name, ids, texts, emb))
    result = decontam.filter_corpus([s for _, s in samples], sample_emb, sets,
                                    threshold=ns.threshold, n=ns.ngram)
    removed = {v.sample_id for v in result.verdicts if v.removed}
    with open(run.out("clean.jsonl"), "w", encoding="utf-8") as f:
        for raw, s in samples:
            if s.id not in removed:
                f.write(json.dumps(raw, ensure_ascii=False) + "\n")
    decontam.write_verdicts_csv(result.verdicts, run.out("verdicts.csv"))
    decontam.write_histograms(result.histograms, run.out("histogram.csv"), run.out("histogram.vl.json"))
    return {"input": len(samples), "removed": len(removed), "clean": len(samples) - len(removed),
            "removed_by_cosine": {k: h.removed_count for k, h in result.histograms.items()}}


def cmd_orpo_check(ns, cfg, run: RunDir) -> dict:
    from dcot.gradcheck import run_gradient_check

    res = run_gradient_check(ns.instances, ns.seed)
    equal = orpo.orpo_loss([-0.7, -1.3], [-0.7, -1.3], orpo.DEFAULT_LAMBDA)
    overrides = {}
    for kv in ns.set or []:
        if "=" not in kv:
            raise BadArgs(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        overrides[k] = v
    try:
        tc = orpo.TrainingConfig().with_overrides(**overrides)
    except (KeyError, ValueError) as e:
        raise ConfigError(str(e)) from e
    orpo.emit_training_manifest(tc, run.out("training_manifest.yaml"))
    summary = {"instances": res.instances, "max_rel_error": res.max_rel_error,
               "passed": res.passed(ns.tol), "equal_odds_loss_or": equal.loss_or}
    print(f"gradient check: {res.instances} instances, max relative error {res.max_rel_error:.3e} "
          f"({'PASS' if res.passed(ns.tol) else 'FAIL'} at {ns.tol:g})")
    if not res.passed(ns.tol):
        raise DcotError(f"gradient check failed: {res.max_rel_error:.3e} > {ns.tol:g}")
    return summary


def cmd_eval(ns, cfg, run: RunDir) -> dict:
    benchmark = ns.benchmark
    if ns.data:
        items = evalharness.load_benchmark(ns.data, ns.shuffle_seed)
    elif ns.synthetic:
        n_opt = 4 if benchmark.lower().startswith("gpqa") else 10
        items = evalharness.synthetic_benchmark(ns.synthetic, n_opt, seed=ns.shuffle_seed)
    else:
        raise BadArgs("eval needs --data or --synthetic")
    if ns.limit:
        items = items[:ns.limit]
    condition = evalharness.Condition(
        name=ns.condition or f"{ns.model_label}/{ns.mode}/{ns.prompt}",
        model=ns.model_label, prompt_variant=ns.prompt, custom_system=cfg.custom_system_prompt)
    if ns.stub:
        endpoint = ScriptedEndpoint(load_stub_rules(ns.stub))
    elif ns.stub_mc:
        key = {evalharness.format_question(it): it.correct_label for it in items}
        endpoint = ScriptedEndpoint(MultipleChoiceStub(
            accuracy=ns.stub_accuracy, null_rate=ns.stub_null_rate, tagged=ns.prompt == "custom",
            answer_key=key))
    else:
        endpoint = _chat_endpoint(cfg.eval_endpoint)
    counter = HFTokenizerCounter(ns.tokenizer) if ns.tokenizer else WHITESPACE
    policy = cfg.policy(ns.mode, benchmark, ns.max_tokens)
    seeds = list(range(ns.seeds))
    result = evalharness.run_eval(items, condition, endpoint, policy, seeds, benchmark, counter,
                                  _retry(cfg), ns.concurrency or cfg.eval_concurrency)
    evalharness.write_records_jsonl(result.records, run.out("records.jsonl"), include_text=not ns.no_text)
    rows = [evalharness.metrics_row(m, condition, ns.mode, seed, counter.name)
            for seed, m in zip(seeds, result.per_seed)]
    rows.append(evalharness.metrics_row(result.aggregate, condition, ns.mode, "mean", counter.name))
    evalharness.write_metrics_csv(rows, run.out("metrics.csv"))
    agg = result.aggregate
    print(f"{condition.name} [{benchmark}] acc={100 * agg.accuracy:.2f}% null={100 * agg.null_rate:.2f}% "
          f"corrected={100 * agg.null_corrected:.2f}% tokens={agg.mean_tokens:.1f} "
          f"(n={agg.n_items}, seeds={agg.n_seeds})")
    return {"condition": condition.name, "accuracy": agg.accuracy, "null_rate": agg.null_rate,
            "null_corrected": agg.null_corrected, "mean_tokens": agg.mean_tokens,
            "n_items": agg.n_items, "n_seeds": agg.n_seeds, "token_counter": counter.name}


def cmd_report(ns, cfg, run: RunDir) -> dict:
    rows = [r for p in ns.metrics for r in evalharness.read_metrics_csv(p)]
    means = [r for r in rows if r.get("seed", "mean") == "mean"]
    if not means:
        raise BadArgs("no aggregate ('mean') rows in the given metrics files")
    table = evalharness.comparison_rows(means)
    with open(run.out("comparison.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=evalharness.COMPARISON_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(table)
    fronts = {}
    reductions = []
    for bench in sorted({r["benchmark"] for r in means}):
        sub = [r for r in means if r["benchmark"] == bench]
        pts = evalharness.pareto_front([(r["condition"], float(r["accuracy_pct"]), float(r["mean_tokens"]))
                                        for r in sub])
        safe = bench.replace("/", "_")
        evalharness.write_pareto(pts, run.out(f"pareto_{safe}.csv"), run.out(f"pareto_{safe}.vl.json"),
                                 title=bench)
        fronts[bench] = [p.condition_name for p in pts if p.on_front]
        base = next((r for r in sub if r["condition"] == ns.baseline), sub[0])
        for r in sub:
            red = evalharness.token_reduction(float(base["mean_tokens"]), float(r["mean_tokens"]))
            reductions.append({"benchmark": bench, "baseline": base["condition"],
                               "condition": r["condition"], "token_reduction_pct": f"{100 * red:.1f}"})
    with open(run.out("token_reduction.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["benchmark", "baseline", "condition", "token_reduction_pct"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(reductions)
    for row in table:
        print(" | ".join(f"{row[c]}" for c in evalharness.COMPARISON_COLUMNS))
    return {"conditions": len(table), "pareto_front": fronts}


# -- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dcot", description="Tag-structured CoT data, decontamination, ORPO checks and evaluation.")
    p.add_argument("--version", action="version", version=f"dcot {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out-dir", help="write outputs here instead of a fresh run directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("gen-matrix", parents=[common], help="enumerate or sample scenario combinations")
    s.add_argument("--matrix")
    s.add_argument("--sample", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_matrix)

    s = sub.add_parser("generate", parents=[common], help="prompt the teacher and validate samples")
    s.add_argument("--matrix")
    s.add_argument("--combos", help="combos.jsonl from gen-matrix")
    s.add_argument("--sample", type=int, default=5181)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fewshot")
    s.add_argument("--stub", help="scripted teacher responses (offline)")
    s.add_argument("--concurrency", type=int)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("pack", parents=[common], help="pack validated pairs into ORPO records")
    s.add_argument("--pairs", required=True)
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("decontam", parents=[common], help="dual-criterion benchmark decontamination")
    s.add_argument("--samples", required=True)
    s.add_argument("--benchmark", action="append", required=True, metavar="NAME=PATH")
    s.add_argument("--sample-embeddings")
    s.add_argument("--benchmark-embeddings", action="append", metavar="NAME=PATH")
    s.add_argument("--embed", action="store_true", help="fetch missing embeddings from the embedder endpoint")
    s.add_argument("--threshold", type=float, default=decontam.COSINE_THRESHOLD)
    s.add_argument("--ngram", type=int, default=decontam.NGRAM_N)
    s.add_argument("--fields", default="user_prompt,chosen_response")
    s.set_defaults(func=cmd_decontam)

    s = sub.add_parser("orpo-check", parents=[common], help="gradient check and training manifest")
    s.add_argument("--instances", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a training hyperparameter")
    s.set_defaults(func=cmd_orpo_check)

    s = sub.add_parser("eval", parents=[common], help="run a multiple-choice benchmark")
    s.add_argument("--benchmark", required=True, help="mmlu-pro, gpqa, or any label")
    s.add_argument("--data", help="benchmark JSONL or GPQA CSV")
    s.add_argument("--synthetic", type=int, help="use N synthetic items instead of --data")
    s.add_argument("--limit", type=int)
    s.add_argument("--mode", choices=["locked", "dynamic"], default="locked")
    s.add_argument("--prompt", choices=["base", "custom"], default="base")
    s.add_argument("--model-label", default="base")
    s.add_argument("--condition")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--shuffle-seed", type=int, default=0)
    s.add_argument("--max-tokens", type=int)
    s.add_argument("--concurrency", type=int)
    s.add_argument("--tokenizer", help="Hugging Face tokenizer for counting (default: whitespace)")
    s.add_argument("--stub", help="scripted responses file (offline)")
    s.add_argument("--stub-mc", action="store_true", help="built-in deterministic multiple-choice stub")
    s.add_argument("--stub-accuracy", type=float, default=0.5)
    s.add_argument("--stub-null-rate", type=float, default=0.1)
    s.add_argument("--no-text", action="store_true", help="omit generated text from records.jsonl")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="comparison table, Pareto fronts, token reduction")
    s.add_argument("metrics", nargs="+")
    s.add_argument("--baseline", help="condition used as the token-reduction baseline")
    s.set_defaults(func=cmd_report)
    return p


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = build_parser().parse_args(argv)
    except BadArgs as e:
        _emit_error(e)
        return 2
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = PipelineConfig.load(ns.config)
        rd = RunDir(cfg, ns.command, _args_dict(ns), ns.out_dir, argv)
        summary = ns.func(ns, cfg, rd)
        rd.close(**(summary or {}))
    except BadArgs as e:
        _emit_error(e)
        return 2
    except DcotError as e:
        _emit_error(e)
        return 1
    except (OSError, json.JSONDecodeError, KeyError) as e:
        _emit_error(DcotError(f"{type(e).__name__}: {e}"))
        return 1
    print(json.dumps({"run_dir": str(rd.path), **(summary or {})}, default=str))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
