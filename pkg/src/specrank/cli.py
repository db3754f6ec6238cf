"""Stage-oriented command line: sample | verify | featurize | train | evaluate
| certify | run-all.

Every stage reads the files named in the config, writes exactly its declared
output, and is deterministic given fixed seeds and a fixed completion cache, so
deleting any downstream artifact and rerunning reproduces it bit for bit.
Config is an INI file ([paths], [sampler], [executor], [train], [evaluate]);
flags override individual fields. Exit codes: 0 ok, 1 internal error,
2 missing input, 3 schema-version mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import random
import shlex
import sys

import numpy as np
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from . import certify as certify_mod
from . import corpus, evaluation, features, sampler, scorer
from .corpus import SchemaError, SpecKind, ValidationError
from .executor import ExecutorConfig, verify_corpus
from .features import FeatureVector
from .sampler import CompletionClient, SamplerConfig
from .scorer import TrainConfig

logger = logging.getLogger(__name__)

PR_CURVE_K = 1  # precision/recall bookkeeping is reported for the top-1 slot
REPORT_SCHEMA = "specrank/report"


class MissingInputError(FileNotFoundError):
    pass


@dataclass
class PipelineConfig:
    problems: Path
    samples: Path
    matrix: Path
    features: Path
    model: Path
    report: Path
    sampler: SamplerConfig
    executor: ExecutorConfig
    train: TrainConfig
    ks: tuple[int, ...] = (1, 2, 10)
    mode: str = "cluster"
    baseline: str | None = None
    train_on: str | None = None
    test_on: str | None = None
    ablation_mlp: bool = False
    random_certificate: bool = False
    plot_data: Path | None = None

    def config_hash(self) -> str:
        doc = asdict(self)
        doc["sampler"]["cache_dir"] = str(doc["sampler"]["cache_dir"])
        for key in ("problems", "samples", "matrix", "features", "model", "report", "plot_data"):
            doc[key] = str(doc[key])
        doc["executor"]["runner_cmd"] = list(doc["executor"]["runner_cmd"])
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _require_input(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing {what}: {path}")
    return path


def load_pipeline_config(path: Path, overrides: argparse.Namespace) -> PipelineConfig:
    _require_input(path, "config file")
    ini = configparser.ConfigParser()
    ini.read(path, encoding="utf-8")
    if "paths" not in ini:
        raise MissingInputError(f"missing [paths] section in config: {path}")
    base = path.parent

    def _path(key: str, default: str | None = None) -> Path:
        raw = ini["paths"].get(key, default)
        if raw is None:
            raise MissingInputError(f"missing paths.{key} in config: {path}")
        p = Path(raw)
        return p if p.is_absolute() else base / p

    smp = ini["sampler"] if "sampler" in ini else {}
    sampler_config = SamplerConfig(
        endpoint_url=smp.get("endpoint_url", ""),
        model_name=smp.get("model_name", "code-model"),
        temperature=float(smp.get("temperature", 0.8)),
        top_p=float(smp.get("top_p", 1.0)),
        max_tokens=int(smp.get("max_tokens", 580)),
        n_programs=int(smp.get("n_programs", 100)),
        n_spec_generations=int(smp.get("n_spec_generations", 100)),
        cache_dir=_path("cache_dir", "completion-cache"),
        api_key_env_var=smp.get("api_key_env_var", "COMPLETION_API_KEY"),
        offline=bool(getattr(overrides, "offline", False)),
    )

    exe = ini["executor"] if "executor" in ini else {}
    runner = exe.get("runner", "")
    runner_cmd = tuple(shlex.split(runner)) if runner else ()
    executor_config = ExecutorConfig(
        runner_cmd=runner_cmd,
        workers=int(exe["workers"]) if "workers" in exe else None,
        per_task_timeout_ms=int(exe.get("per_task_timeout_ms", 3000)),
        hard_kill_grace_ms=int(exe.get("hard_kill_grace_ms", 1000)),
        sandbox_mode=exe.get("sandbox_mode", "subprocess_no_net"),
        runner_recycle_every=int(exe.get("runner_recycle_every", 50)),
    )

    trn = ini["train"] if "train" in ini else {}
    train_config = TrainConfig(
        learning_rate=float(trn.get("learning_rate", 1e-3)),
        weight_decay=float(trn.get("weight_decay", 1e-4)),
        epochs=int(trn.get("epochs", 1500)),
        cross_epochs=int(trn.get("cross_epochs", 2000)),
        seed=int(trn.get("seed", 0)),
        folds=int(trn.get("folds", 10)),
    )

    ev = ini["evaluate"] if "evaluate" in ini else {}
    ks = tuple(int(k) for k in ev.get("ks", "1,2,10").replace(" ", "").split(",") if k)

    cfg = PipelineConfig(
        problems=_path("problems"),
        samples=_path("samples", "out/samples.jsonl"),
        matrix=_path("matrix", "out/matrix.jsonl"),
        features=_path("features", "out/features.jsonl"),
        model=_path("model", "out/model.json"),
        report=_path("report", "out/report.json"),
        sampler=sampler_config,
        executor=executor_config,
        train=train_config,
        ks=ks,
        mode=ev.get("mode", "cluster"),
    )

    # flag overrides
    if getattr(overrides, "workers", None) is not None:
        cfg.executor = replace(cfg.executor, workers=overrides.workers)
    if getattr(overrides, "timeout_ms", None) is not None:
        cfg.executor = replace(cfg.executor, per_task_timeout_ms=overrides.timeout_ms)
    if getattr(overrides, "seed", None) is not None:
        cfg.train = replace(cfg.train, seed=overrides.seed)
    if getattr(overrides, "k", None):
        cfg.ks = tuple(int(v) for v in overrides.k.replace(" ", "").split(",") if v)
    if getattr(overrides, "mode", None):
        cfg.mode = overrides.mode
    cfg.baseline = getattr(overrides, "baseline", None)
    cfg.train_on = getattr(overrides, "train_on", None)
    cfg.test_on = getattr(overrides, "test_on", None)
    cfg.ablation_mlp = bool(getattr(overrides, "ablation_mlp", False))
    cfg.random_certificate = bool(getattr(overrides, "random_certificate", False))
    if getattr(overrides, "plot_data", None):
        cfg.plot_data = Path(overrides.plot_data)
    if cfg.mode not in ("cluster", "individual"):
        raise ValidationError(f"unknown ranking mode {cfg.mode!r}")
    return cfg


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def cmd_sample(cfg: PipelineConfig) -> None:
    problems = corpus.load_corpus(_require_input(cfg.problems, "problems file"))
    client = CompletionClient(cfg.sampler)
    all_programs: list[corpus.ProgramSample] = []
    all_specs: list[corpus.SpecSample] = []
    for problem in problems:
        prompts = sampler.build_prompts(problem)
        program_completions = client.sample(
            prompts.program_prompt, cfg.sampler.n_programs, cfg.sampler.stop_tokens_program_io
        )
        all_programs.extend(sampler.assemble_programs(problem, program_completions))
        io_completions = client.sample(
            prompts.io_spec_prompt, cfg.sampler.n_spec_generations, cfg.sampler.stop_tokens_program_io
        )
        io_specs, io_skipped = sampler.extract_io_tests(io_completions, problem.entry_point, problem.id)
        relation_completions = client.sample(
            prompts.relation_prompt, cfg.sampler.n_spec_generations, (cfg.sampler.stop_token_relation,)
        )
        relation_specs, rel_skipped = sampler.extract_relation_specs(
            relation_completions, problem.entry_point, problem.id
        )
        all_specs.extend(io_specs)
        all_specs.extend(relation_specs)
        print(
            f"[sample] {problem.id}: {len(program_completions)} programs, "
            f"{len(io_specs)} io tests ({io_skipped} skipped), "
            f"{len(relation_specs)} relations ({rel_skipped} skipped)",
            file=sys.stderr,
        )
    corpus.save_samples(cfg.samples, all_programs, all_specs, cfg.config_hash())


def cmd_verify(cfg: PipelineConfig) -> None:
    problems = corpus.load_corpus(_require_input(cfg.problems, "problems file"))
    programs, specs = corpus.load_samples(_require_input(cfg.samples, "samples file"))
    if cfg.executor.runner_cmd:
        runner_path = Path(cfg.executor.runner_cmd[-1])
        if runner_path.suffix == ".py":
            _require_input(runner_path, "runner script")
    matrices = verify_corpus(problems, programs, specs, cfg.executor)
    corpus.save_matrices(cfg.matrix, [matrices[p.id] for p in problems], cfg.config_hash())


def cmd_featurize(cfg: PipelineConfig) -> None:
    matrices = corpus.load_matrices(_require_input(cfg.matrix, "matrix file"))
    rows = []
    for pid, matrix in matrices.items():
        vectors = features.problem_features(matrix)
        for idx in sorted(vectors):
            rows.append((pid, idx, vectors[idx].values))
    corpus.save_features(cfg.features, rows, cfg.config_hash())


def _load_feature_table(cfg: PipelineConfig) -> dict[str, dict[int, FeatureVector]]:
    raw = corpus.load_features(_require_input(cfg.features, "features file"))
    return {pid: {idx: FeatureVector(values) for idx, values in rows.items()} for pid, rows in raw.items()}


def _labels_from_matrices(matrices) -> dict[str, dict[int, bool]]:
    return {pid: dict(matrix.gt_correct) for pid, matrix in matrices.items()}


def _tags(problems) -> dict[str, str]:
    return {p.id: p.dataset_tag for p in problems}


def cmd_train(cfg: PipelineConfig) -> None:
    table = _load_feature_table(cfg)
    matrices = corpus.load_matrices(_require_input(cfg.matrix, "matrix file"))
    labels = _labels_from_matrices(matrices)
    trained_on = "all"
    keep = set(table)
    if cfg.train_on:
        problems = corpus.load_corpus(_require_input(cfg.problems, "problems file"))
        tags = _tags(problems)
        keep = {pid for pid in table if tags.get(pid) == cfg.train_on}
        trained_on = cfg.train_on
    rows = [
        (table[pid][idx], labels[pid][idx])
        for pid in sorted(keep)
        for idx in sorted(table[pid])
    ]
    model_kind = "mlp" if cfg.ablation_mlp else "logistic"
    estimator = scorer.train(rows, cfg.train, model=model_kind)
    scorer.save_model(cfg.model, estimator, trained_on=trained_on, config_hash=cfg.config_hash())
    print(f"[train] fitted {model_kind} on {len(rows)} programs from {len(keep)} problems", file=sys.stderr)


def _method_scores(
    cfg: PipelineConfig,
    problems,
    table: dict[str, dict[int, FeatureVector]],
    matrices,
) -> tuple[str, dict[str, dict[int, float]], dict, list[str]]:
    """Scores for the selected method plus audit info (trained-on problem ids)."""
    labels = _labels_from_matrices(matrices)
    model_kind = "mlp" if cfg.ablation_mlp else "logistic"
    eval_ids = [p.id for p in problems if p.id in table]

    if cfg.baseline:
        scores = {}
        for pid in eval_ids:
            if cfg.baseline == "oracle":
                scores[pid] = evaluation.oracle_scores(matrices[pid])
            else:
                scores[pid] = evaluation.baseline_scores(matrices[pid], cfg.baseline)
        return f"baseline:{cfg.baseline}", scores, {"kind": "baseline"}, eval_ids

    if cfg.train_on or cfg.test_on:
        if not (cfg.train_on and cfg.test_on):
            raise ValidationError("--train-on and --test-on must be used together")
        tags = _tags(problems)
        train_ids = sorted(pid for pid in table if tags.get(pid) == cfg.train_on)
        test_ids = [p.id for p in problems if p.id in table and tags.get(p.id) == cfg.test_on]
        if not train_ids or not test_ids:
            raise ValidationError(
                f"no problems tagged {cfg.train_on!r}/{cfg.test_on!r} in the features file"
            )
        epochs = cfg.train.cross_epochs if cfg.train_on != cfg.test_on else cfg.train.epochs
        rows = [(table[pid][idx], labels[pid][idx]) for pid in train_ids for idx in sorted(table[pid])]
        estimator = scorer.train(rows, cfg.train, model=model_kind, epochs=epochs)
        scores = {}
        for pid in test_ids:
            indices = sorted(table[pid])
            X = np.asarray([table[pid][i].values for i in indices])
            p = estimator.predict_proba(X)[:, 1]
            scores[pid] = {i: float(v) for i, v in zip(indices, p)}
        audit = {
            "kind": "cross_corpus",
            "train_on": cfg.train_on,
            "test_on": cfg.test_on,
            "epochs": epochs,
            "train_problem_ids": train_ids,
        }
        return f"{model_kind}:cross", scores, audit, test_ids

    folds = corpus.split_folds(
        [p for p in problems if p.id in table], k=cfg.train.folds, seed=cfg.train.seed
    )
    result = scorer.cross_validate(table, labels, folds, cfg.train, model=model_kind)
    audit = {
        "kind": "cross_validation",
        "folds": folds.k,
        "fold_train_problem_ids": {str(f): list(ids) for f, ids in result.fold_train_problems.items()},
        "fold_of": {pid: folds.fold_of[pid] for pid in sorted(folds.fold_of)},
    }
    return f"{model_kind}:cv", result.scores, audit, eval_ids


def cmd_evaluate(cfg: PipelineConfig) -> None:
    problems = corpus.load_corpus(_require_input(cfg.problems, "problems file"))
    table = _load_feature_table(cfg)
    matrices = corpus.load_matrices(_require_input(cfg.matrix, "matrix file"))

    method_name, scores, audit, eval_ids = _method_scores(cfg, problems, table, matrices)

    ranked = [evaluation.rank_problem(matrices[pid], scores[pid]) for pid in eval_ids]

    methods: dict[str, list[evaluation.RankedProblem]] = {method_name: ranked}
    for baseline in evaluation.BASELINES:
        methods[f"baseline:{baseline}"] = [
            evaluation.rank_problem(matrices[pid], evaluation.baseline_scores(matrices[pid], baseline))
            for pid in eval_ids
        ]
    methods["oracle"] = [
        evaluation.rank_problem(matrices[pid], evaluation.oracle_scores(matrices[pid]))
        for pid in eval_ids
    ]

    pass_k_n = {
        name: {
            mode: {str(k): evaluation.pass_at_k_n(problems_ranked, k, mode) for k in cfg.ks}
            for mode in ("cluster", "individual")
        }
        for name, problems_ranked in methods.items()
    }

    raw_pass: dict[str, float | None] = {}
    for k in cfg.ks:
        per_problem = []
        for pid in eval_ids:
            matrix = matrices[pid]
            n = len(matrix.program_indices())
            c = sum(1 for ok in matrix.gt_correct.values() if ok)
            if k > n:
                per_problem = None
                break
            per_problem.append(evaluation.pass_at_k(n, c, k))
        raw_pass[str(k)] = (sum(per_problem) / len(per_problem)) if per_problem else None

    curve = evaluation.pr_curve(ranked, PR_CURVE_K)
    pr_section = {
        "k": PR_CURVE_K,
        "points": [
            {
                "tau": point.tau if point.tau != float("inf") else "inf",
                "precision": point.precision,
                "recall": point.recall,
                "predicted_positives": point.predicted_positives,
                "true_positives": point.true_positives,
                "actual_positives": point.actual_positives,
            }
            for point in curve
        ],
        "auc": evaluation.auc(curve),
        "max_f1": evaluation.max_f1(curve),
        "recall_at_precision": {
            "0.9": evaluation.recall_at_precision(curve, 0.9),
            "1.0": evaluation.recall_at_precision(curve, 1.0),
        },
    }

    per_problem_section = []
    for problem_ranked in ranked:
        top = problem_ranked.order[0]
        per_problem_section.append(
            {
                "problem_id": problem_ranked.problem_id,
                "n_programs": len(problem_ranked.order),
                "n_correct": len(problem_ranked.correct),
                "n_clusters": len(problem_ranked.cluster_order),
                "solvable": problem_ranked.solvable,
                "top_program": top,
                "top_score": problem_ranked.scores[top],
                "top_correct": top in problem_ranked.correct,
            }
        )

    report = {
        "schema": REPORT_SCHEMA,
        "schema_version": corpus.SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "config": {
            "ks": list(cfg.ks),
            "mode": cfg.mode,
            "method": method_name,
            "folds": cfg.train.folds,
            "seed": cfg.train.seed,
            "epochs": cfg.train.epochs,
            "learning_rate": cfg.train.learning_rate,
            "weight_decay": cfg.train.weight_decay,
        },
        "counts": {
            "problems": len(eval_ids),
            "actual_positives": sum(1 for r in ranked if r.solvable),
        },
        "training_audit": audit,
        "pass_at_k": raw_pass,
        "pass_at_k_n": pass_k_n,
        "pr": pr_section,
        "summary": {
            "method": method_name,
            "mode": cfg.mode,
            "pass_at_k_n": pass_k_n[method_name][cfg.mode],
        },
        "per_problem": per_problem_section,
        "certificates": None,
    }
    cfg.report.parent.mkdir(parents=True, exist_ok=True)
    cfg.report.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    if cfg.plot_data:
        lines = [f"{point.recall} {point.precision}" for point in curve]
        cfg.plot_data.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"[evaluate] {method_name}: report written to {cfg.report}", file=sys.stderr)


def cmd_certify(cfg: PipelineConfig) -> None:
    report_path = _require_input(cfg.report, "report file")
    report = json.loads(report_path.read_text(encoding="utf-8"))
    if report.get("schema") != REPORT_SCHEMA or report.get("schema_version") != corpus.SCHEMA_VERSION:
        raise SchemaError(f"{report_path}: not a report of the expected schema version")
    matrices = corpus.load_matrices(_require_input(cfg.matrix, "matrix file"))
    _, specs = corpus.load_samples(_require_input(cfg.samples, "samples file"))
    spec_source = {(s.problem_id, s.kind, s.index): s.source for s in specs}

    certificates = []
    for entry in report["per_problem"]:
        pid = entry["problem_id"]
        p_star = entry["top_program"]
        certificate = certify_mod.select_certificate(matrices[pid], p_star)
        if certificate is None:
            record = {"problem_id": pid, "program_index": p_star, "certificate": None}
        else:
            record = {
                "problem_id": pid,
                "program_index": p_star,
                "spec_kind": certificate.spec_kind.value,
                "spec_index": certificate.spec_index,
                "satisfier_count": certificate.satisfier_count,
                "spec_source": spec_source.get((pid, certificate.spec_kind, certificate.spec_index), ""),
                "alternates": [
                    {"spec_kind": kind.value, "spec_index": idx, "satisfier_count": count}
                    for kind, idx, count in certificate.alternates
                ],
            }
        if cfg.random_certificate:
            keys = matrices[pid].spec_keys("S")
            if keys:
                rng = random.Random(f"{cfg.train.seed}:{pid}")
                kind, idx = keys[rng.randrange(len(keys))]
                record["random_spec"] = {
                    "spec_kind": kind.value,
                    "spec_index": idx,
                    "satisfied_by_program": matrices[pid].passes(p_star, kind, idx),
                    "spec_source": spec_source.get((pid, kind, idx), ""),
                }
        certificates.append(record)
    report["certificates"] = certificates
    cfg.report.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"[certify] {len(certificates)} certificates embedded in {cfg.report}", file=sys.stderr)


STAGES = {
    "sample": cmd_sample,
    "verify": cmd_verify,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "certify": cmd_certify,
}


def cmd_run_all(cfg: PipelineConfig) -> None:
    for name in ("sample", "verify", "featurize", "train", "evaluate", "certify"):
        print(f"[run-all] stage {name}", file=sys.stderr)
        STAGES[name](cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specrank",
        description="Sample programs and executable checks, verify their agreement, "
        "rank by learned confidence, and certify the winners.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["run-all"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--timeout-ms", type=int, default=None, dest="timeout_ms")
        p.add_argument("--offline", action="store_true", help="fail instead of contacting the API")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--k", type=str, default=None, help="comma-separated k values")
        p.add_argument("--mode", choices=["cluster", "individual"], default=None)
        p.add_argument("--baseline", choices=["cluster", "codet", "random", "oracle"], default=None)
        p.add_argument("--train-on", dest="train_on", default=None)
        p.add_argument("--test-on", dest="test_on", default=None)
        p.add_argument("--ablation-mlp", dest="ablation_mlp", action="store_true")
        p.add_argument("--random-certificate", dest="random_certificate", action="store_true")
        p.add_argument("--plot-data", dest="plot_data", default=None, help="write recall/precision columns")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_pipeline_config(Path(args.config), args)
        if args.command == "run-all":
            cmd_run_all(cfg)
        else:
            STAGES[args.command](cfg)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("stage failed: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
