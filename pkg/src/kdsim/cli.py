"""Command-line pipeline driver.

Stages run as subcommands against one run directory:

    kdsim partition    carve the public pool, partition the remainder
    kdsim pretrain     train one model per participant
    kdsim distill      transfer one teacher -> student pair
    kdsim grid         temperature/alpha search for one pair
    kdsim matrix       the full ordered pairwise matrix
    kdsim consolidate  merge all participants into one model
    kdsim fedavg       paired federations: random vs consolidated start
    kdsim report       emit the canonical result files

Each stage records its outputs in the run manifest under a fingerprint
of the configuration slice it depends on; downstream stages refuse stale
artifacts unless --force is given. Exit codes: 0 success, 1 bad
configuration or usage, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (
    config_fingerprint,
    load_model,
    read_json,
    record_stage,
    require_stage,
    save_model,
    write_json,
)
from .config import RunConfig, parse_config
from .data import (
    PartitionPlan,
    build_transfer_set,
    load_dataset,
    make_partition,
    validate_plan,
)
from .errors import ConfigError, KdsimError
from .fed import FedTrajectory, preconsolidated_fedavg, rounds_to_target
from .metrics import cumulative_gain, emit_report, parse_results_json
from .nn import EvalReport, init_model
from .orchestrate import (
    Scenario,
    _run_cell,
    best_teacher_frequency,
    carve_public_pool,
    consolidate_models,
    grid_search_tuned,
    pair_seed,
    participant_arch,
    pretrain_participants,
    run_pairwise_matrix,
    scenario_from_plan,
)
from .seeding import stable_seed
from .toydata import gaussian_blobs

ENV_OUT_DIR = "KDSIM_OUT_DIR"

PLAN_FILE = "plan.json"
POOL_FILE = "pool.json"
PRETRAIN_EVALS_FILE = "pretrain_evals.json"
RESULTS_FILE = "results.json"
CONSOLIDATED_MODEL = "consolidated.kdsm"
CONSOLIDATE_FILE = "consolidate.json"
TRAJECTORIES_FILE = "trajectories.json"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage mistakes as configuration errors."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument(
        "--out-dir", metavar="PATH", help=f"run directory (or ${ENV_OUT_DIR})"
    )
    common.add_argument("--jobs", type=int, help="worker processes for the matrix")
    common.add_argument(
        "--force",
        action="store_true",
        help="consume artifacts even if their config fingerprint is stale",
    )

    pair = _Parser(add_help=False)
    pair.add_argument("--teacher", type=int, required=True, help="teacher participant id")
    pair.add_argument("--student", type=int, required=True, help="student participant id")

    parser = _Parser(prog="kdsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kdsim {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    sub.add_parser("partition", parents=[common], help="carve pool and shards")
    sub.add_parser("pretrain", parents=[common], help="train every participant")

    p = sub.add_parser("distill", parents=[common, pair], help="one pairwise transfer")
    p.add_argument("--method", default="vanilla", help="vanilla, dml, dpkd or tuned")
    p.add_argument("--transfer-option", default="student_data", dest="transfer_option")

    p = sub.add_parser("grid", parents=[common, pair], help="search one pair's grid")
    p.add_argument("--transfer-option", default="student_data", dest="transfer_option")

    sub.add_parser("matrix", parents=[common], help="full pairwise matrix")
    sub.add_parser("consolidate", parents=[common], help="merge into one model")
    sub.add_parser("fedavg", parents=[common], help="paired federation arms")
    sub.add_parser("report", parents=[common], help="emit canonical result files")
    return parser


def _load_config(args) -> RunConfig:
    out_dir = args.out_dir if args.out_dir is not None else os.environ.get(ENV_OUT_DIR)
    overrides = {"seed": args.seed, "out_dir": out_dir, "jobs": args.jobs}
    path = args.config
    if path is not None and not Path(path).exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path, overrides)


# -- shared stage plumbing --------------------------------------------------


def _base_data(cfg: RunConfig):
    d = cfg.dataset
    if d.kind == "toy":
        return gaussian_blobs(
            d.classes,
            d.dim,
            d.train_per_class,
            d.test_per_class,
            d.spread,
            stable_seed(cfg.seed, "dataset"),
        )
    train = load_dataset(d.train_path)
    test = load_dataset(d.test_path, class_count=train.class_count)
    return train, test


def _partition_params(cfg: RunConfig) -> dict:
    p = cfg.partition
    params = {
        "beta": p.beta,
        "dominant_fraction": p.dominant_fraction,
        "min_chunk": p.min_chunk,
    }
    if p.betas is not None:
        params["betas"] = list(p.betas)
    return params


def _scenario(cfg: RunConfig, out: Path, force: bool) -> tuple[Scenario, list]:
    """Rebuild the Scenario for this run from the partition artifacts.

    Returns the scenario plus each participant's full shard (train and
    validation together), which federated runs train on.
    """
    arts = require_stage(out, cfg, "partition", force)
    train, test = _base_data(cfg)
    plan = PartitionPlan.from_json_dict(read_json(out / arts["plan"]))
    pool = read_json(out / arts["pool"])
    pool_idx = np.asarray(pool["pool_indices"], dtype=np.int64)
    remainder_idx = np.asarray(pool["remainder_indices"], dtype=np.int64)
    scenario = scenario_from_plan(
        train,
        test,
        plan,
        pool_idx,
        remainder_idx,
        cfg.partition.val_fraction,
        cfg.seed,
        label=cfg.partition.strategy,
    )
    shards = [train.subset(idx) for idx in scenario.participant_indices]
    return scenario, shards


def _model_path(i: int) -> str:
    return f"models/participant_{i:02d}.kdsm"


def _load_pretrained(cfg: RunConfig, out: Path, force: bool):
    arts = require_stage(out, cfg, "pretrain", force)
    fingerprint = config_fingerprint(cfg, "pretrain")
    reports = [
        EvalReport.from_dict(item)
        for item in read_json(out / arts["evals"])["reports"]
    ]
    pretrained = []
    for i, report in enumerate(reports):
        key = f"model_{i:02d}"
        if key not in arts:
            raise ConfigError(
                f"pretrained model {i} missing from manifest; rerun `kdsim pretrain`"
            )
        model = load_model(out / arts[key], fingerprint, force)
        pretrained.append((model, report))
    return pretrained


def _check_pair(args, k: int) -> tuple[int, int]:
    teacher, student = args.teacher, args.student
    for label, value in (("teacher", teacher), ("student", student)):
        if not 0 <= value < k:
            raise ConfigError(f"--{label} must lie in [0, {k - 1}], got {value}")
    if teacher == student:
        raise ConfigError("teacher and student must differ")
    return teacher, student


def _pair_transfer(cfg: RunConfig, scenario: Scenario, option: str, student_id: int):
    sizes = cfg.transfer_sizes()
    if option == "student_data":
        return build_transfer_set(
            "student_data", None, scenario.participants[student_id].train, sizes, 0
        )
    return build_transfer_set(
        option, scenario.public_pool, None, sizes, stable_seed(cfg.seed, "transfer-sample")
    )


# -- subcommands ------------------------------------------------------------


def cmd_partition(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, _ = _base_data(cfg)
    pool_idx, remainder_idx = carve_public_pool(train, cfg.pool.size, cfg.seed)
    remainder = train.subset(remainder_idx)
    plan = make_partition(
        remainder,
        cfg.partition.strategy,
        cfg.partition.k,
        _partition_params(cfg),
        stable_seed(cfg.seed, "partition"),
    )
    validate_plan(plan, len(remainder))
    write_json(out / PLAN_FILE, plan.to_json_dict())
    write_json(
        out / POOL_FILE,
        {
            "pool_indices": [int(i) for i in pool_idx],
            "remainder_indices": [int(i) for i in remainder_idx],
        },
    )
    record_stage(out, cfg, "partition", {"plan": PLAN_FILE, "pool": POOL_FILE})
    sizes = plan.sizes()
    print(
        f"partitioned {sum(sizes)} samples into {plan.k} shards "
        f"({cfg.partition.strategy}): {sizes}"
    )
    print(f"public pool: {len(pool_idx)} samples")
    return 0


def cmd_pretrain(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    scenario, _ = _scenario(cfg, out, args.force)
    pretrained = pretrain_participants(
        scenario, tuple(cfg.model.hidden_layers), cfg.train_config(), cfg.seed
    )
    (out / "models").mkdir(exist_ok=True)
    fingerprint = config_fingerprint(cfg, "pretrain")
    artifacts = {"evals": PRETRAIN_EVALS_FILE}
    for i, (model, _report) in enumerate(pretrained):
        rel = _model_path(i)
        save_model(out / rel, model, fingerprint)
        artifacts[f"model_{i:02d}"] = rel
    write_json(
        out / PRETRAIN_EVALS_FILE,
        {"schema_version": 1, "reports": [rep.as_dict() for _, rep in pretrained]},
    )
    record_stage(out, cfg, "pretrain", artifacts)
    for i, (_model, rep) in enumerate(pretrained):
        print(f"participant {i}: test accuracy {rep.overall_accuracy:.4f}")
    return 0


def cmd_distill(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    scenario, _ = _scenario(cfg, out, args.force)
    pretrained = _load_pretrained(cfg, out, args.force)
    teacher, student = _check_pair(args, scenario.k)
    option = args.transfer_option
    transfer = _pair_transfer(cfg, scenario, option, student)
    result = _run_cell(
        (
            scenario.label,
            args.method,
            option,
            teacher,
            student,
            pretrained[teacher][0],
            pretrained[teacher][1],
            pretrained[student][0],
            pretrained[student][1],
            scenario.participants[student].val,
            transfer,
            scenario.test,
            cfg.distill_config(),
            cfg.grid_spec(),
            cfg.seed,
        )
    )
    rel = f"distill_t{teacher}_s{student}_{args.method}_{option}.json"
    write_json(out / rel, result.to_json_dict())
    record_stage(out, cfg, "distill", {"result": rel})
    print(
        f"{args.method} transfer {teacher} -> {student} via {option}: "
        f"gain {result.gain_points:+.2f} points "
        f"({result.pre_eval.overall_accuracy:.4f} -> "
        f"{result.post_eval.overall_accuracy:.4f})"
    )
    return 0


def cmd_grid(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    scenario, _ = _scenario(cfg, out, args.force)
    pretrained = _load_pretrained(cfg, out, args.force)
    teacher, student = _check_pair(args, scenario.k)
    option = args.transfer_option
    transfer = _pair_transfer(cfg, scenario, option, student)
    search = grid_search_tuned(
        pretrained[student][0],
        pretrained[teacher][0],
        transfer,
        cfg.grid_spec(),
        cfg.distill_config(),
        scenario.participants[student].val,
        seed_fn=lambda t, a: pair_seed(cfg.seed, teacher, student, "vanilla", t, a),
        sequential=cfg.grid.sequential,
    )
    rel = f"grid_t{teacher}_s{student}_{option}.json"
    write_json(
        out / rel,
        {
            "best_alpha": search.best_alpha,
            "best_temperature": search.best_temperature,
            "student": student,
            "surface": [
                {"alpha": a, "gain_points": g, "temperature": t}
                for (t, a), g in sorted(search.surface.items())
            ],
            "teacher": teacher,
            "transfer_option": option,
        },
    )
    record_stage(out, cfg, "grid", {"surface": rel})
    print(
        f"grid for {teacher} -> {student} via {option}: best T = "
        f"{search.best_temperature:g}, alpha = {search.best_alpha:g} "
        f"({len(search.surface)} cells)"
    )
    return 0


def cmd_matrix(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    scenario, _ = _scenario(cfg, out, args.force)
    pretrained = _load_pretrained(cfg, out, args.force)
    results = run_pairwise_matrix(
        pretrained,
        scenario,
        list(cfg.distill.methods),
        list(cfg.distill.transfer_options),
        cfg.distill_config(),
        cfg.grid_spec(),
        cfg.transfer_sizes(),
        cfg.seed,
        jobs=cfg.jobs,
    )
    emit_report(results, [], "json", out)
    record_stage(out, cfg, "matrix", {"results": RESULTS_FILE})
    totals = cumulative_gain(results)
    print(f"{len(results)} pairwise records")
    for method in sorted(totals):
        print(f"  {method}: cumulative gain {totals[method]:+.2f} points")
    return 0


def cmd_consolidate(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    scenario, _ = _scenario(cfg, out, args.force)
    pretrained = _load_pretrained(cfg, out, args.force)
    c = cfg.consolidate
    dcfg = cfg.distill_config()
    merged, report = consolidate_models(
        pretrained,
        scenario,
        c.start_policy,
        c.weighting,
        c.transfer_option,
        c.epochs,
        dcfg,
        cfg.transfer_sizes(),
        cfg.seed,
    )
    save_model(out / CONSOLIDATED_MODEL, merged, config_fingerprint(cfg, "consolidate"))
    write_json(
        out / CONSOLIDATE_FILE,
        {
            "participant_accuracies": [
                rep.overall_accuracy for _, rep in pretrained
            ],
            "post_eval": report.as_dict(),
            "start_policy": c.start_policy,
            "transfer_option": c.transfer_option,
            "weighting": c.weighting,
        },
    )
    record_stage(
        out,
        cfg,
        "consolidate",
        {"model": CONSOLIDATED_MODEL, "summary": CONSOLIDATE_FILE},
    )
    best = max(rep.overall_accuracy for _, rep in pretrained)
    print(
        f"consolidated ({c.start_policy} start, {c.weighting} weights): "
        f"test accuracy {report.overall_accuracy:.4f} (best single {best:.4f})"
    )
    return 0


def cmd_fedavg(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    scenario, shards = _scenario(cfg, out, args.force)
    arts = require_stage(out, cfg, "consolidate", args.force)
    consolidated = load_model(
        out / arts["model"], config_fingerprint(cfg, "consolidate"), args.force
    )
    arch = participant_arch(scenario, tuple(cfg.model.hidden_layers))
    random_init = init_model(arch, stable_seed(cfg.seed, "fed-init"))
    random_arm, consolidated_arm = preconsolidated_fedavg(
        random_init,
        consolidated,
        shards,
        scenario.test,
        cfg.fed_config(),
        stable_seed(cfg.seed, "fed"),
    )
    write_json(out / TRAJECTORIES_FILE, _trajectories_payload([random_arm, consolidated_arm]))
    record_stage(out, cfg, "fedavg", {"trajectories": TRAJECTORIES_FILE})
    for traj in (random_arm, consolidated_arm):
        final = traj.accuracies[-1]
        print(
            f"{traj.init_tag}: start {traj.init_accuracy:.4f}, "
            f"final {final:.4f} after {len(traj.accuracies)} rounds"
        )
    target = max(random_arm.accuracies)
    reached = rounds_to_target(consolidated_arm, target)
    if reached is not None:
        print(
            f"consolidated start reaches the random arm's best accuracy "
            f"({target:.4f}) in round {reached}"
        )
    return 0


def _trajectories_payload(trajectories: list[FedTrajectory]) -> dict:
    return {
        "schema_version": 1,
        "trajectories": [
            {
                "accuracies": [float(a) for a in t.accuracies],
                "init_accuracy": t.init_accuracy,
                "init_tag": t.init_tag,
                "participants_per_round": t.participants_per_round,
            }
            for t in trajectories
        ],
    }


def _load_trajectories(path: Path) -> list[FedTrajectory]:
    payload = read_json(path)
    return [
        FedTrajectory(
            init_tag=item["init_tag"],
            init_accuracy=float(item["init_accuracy"]),
            accuracies=[float(a) for a in item["accuracies"]],
            participants_per_round=[
                [int(c) for c in row] for row in item["participants_per_round"]
            ],
        )
        for item in payload["trajectories"]
    ]


def cmd_report(cfg: RunConfig, args) -> int:
    out = Path(cfg.out_dir)
    arts = require_stage(out, cfg, "matrix", args.force)
    results = parse_results_json(out / arts["results"])
    trajectories: list[FedTrajectory] = []
    traj_path = out / TRAJECTORIES_FILE
    if traj_path.exists():
        trajectories = _load_trajectories(traj_path)
    written = emit_report(results, trajectories, cfg.report.format, out)
    totals = cumulative_gain(results)
    frequency = best_teacher_frequency(results)
    for path in written:
        print(f"wrote {path}")
    for method in sorted(totals):
        print(f"  {method}: cumulative gain {totals[method]:+.2f} points")
    winners = ", ".join(f"{t}:{n}" for t, n in frequency.items())
    print(f"  best-teacher wins per student: {winners}")
    return 0


_COMMANDS = {
    "partition": cmd_partition,
    "pretrain": cmd_pretrain,
    "distill": cmd_distill,
    "grid": cmd_grid,
    "matrix": cmd_matrix,
    "consolidate": cmd_consolidate,
    "fedavg": cmd_fedavg,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("no command given; see kdsim --help")
        cfg = _load_config(args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"kdsim: {exc}", file=sys.stderr)
        return 1
    except KdsimError as exc:
        print(f"kdsim: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
