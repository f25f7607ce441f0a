"""Experiment orchestration: scenarios, pretraining, pairwise transfer.

A Scenario materializes one experimental world: a public pool carved out
of the training data before partitioning, participant shards built by a
partitioning strategy, per-participant train/validation splits and one
shared held-out test set. On top of that the orchestrator runs the full
ordered teacher -> student matrix (K participants give K * (K - 1)
pairs), temperature/alpha grid searches, many-to-one consolidation, and
turns experience into method recommendations via a data-encoded rule
table.

Seed policy: every pairwise cell derives its seed from (master seed,
teacher id, student id, method, temperature, alpha), so cells are
independent, reproducible and insensitive to execution order. Grid
cells hash as vanilla runs at their grid point, which makes the default
(1, 0.5) cell bit-identical to the standalone vanilla baseline.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    LabeledDataset,
    PartitionPlan,
    PUBLIC_TRANSFER_OPTIONS,
    TRANSFER_OPTIONS,
    TransferSet,
    TransferSizes,
    build_transfer_set,
    make_partition,
    split_train_val,
)
from .distill import (
    DistillConfig,
    TeacherWeights,
    adaptive_teacher_weights,
    distill_dml,
    distill_dpkd,
    distill_multi_teacher,
    distill_vanilla,
    equal_teacher_weights,
)
from .errors import ConfigError, DataError
from .metrics import PairResult, build_pair_result, canonical_order
from .nn import ArchSpec, EvalReport, Model, TrainConfig, evaluate, init_model, train_supervised
from .seeding import stable_seed

MATRIX_METHODS = ("vanilla", "dml", "dpkd", "tuned")
START_POLICIES = ("worst", "best", "untrained")
WEIGHTINGS = ("adaptive", "equal")

DEFAULT_GRID_TEMPERATURES = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0)
DEFAULT_GRID_ALPHAS = (0.1, 0.25, 0.5, 0.75, 0.9)


@dataclass(eq=False)
class GridSpec:
    """Axes of the temperature/alpha search grid."""

    temperatures: tuple[float, ...] = DEFAULT_GRID_TEMPERATURES
    alphas: tuple[float, ...] = DEFAULT_GRID_ALPHAS

    def __post_init__(self) -> None:
        self.temperatures = tuple(float(t) for t in self.temperatures)
        self.alphas = tuple(float(a) for a in self.alphas)
        if any(t <= 0 for t in self.temperatures):
            raise ConfigError("grid temperatures must be > 0")
        if any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise ConfigError("grid alphas must lie in [0, 1]")

    @property
    def empty(self) -> bool:
        return not self.temperatures or not self.alphas


@dataclass(eq=False)
class ParticipantData:
    train: LabeledDataset
    val: LabeledDataset


@dataclass(eq=False)
class Scenario:
    """One materialized experimental world."""

    label: str
    participants: list[ParticipantData]
    test: LabeledDataset
    public_pool: LabeledDataset
    pool_indices: np.ndarray
    remainder_indices: np.ndarray
    participant_indices: list[np.ndarray]
    partition: PartitionPlan

    @property
    def k(self) -> int:
        return len(self.participants)


def carve_public_pool(
    train_data: LabeledDataset, pool_size: int, master_seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Reserve the public pool before any partitioning.

    Returns (pool indices, remainder indices), both into train_data and
    mutually disjoint by construction.
    """
    if not 0 < pool_size < len(train_data):
        raise ConfigError(
            f"pool size must lie in (0, {len(train_data)}), got {pool_size}"
        )
    rng = np.random.default_rng(stable_seed(master_seed, "public-pool"))
    pool = np.sort(rng.choice(len(train_data), size=pool_size, replace=False))
    mask = np.ones(len(train_data), dtype=bool)
    mask[pool] = False
    return pool.astype(np.int64), np.flatnonzero(mask).astype(np.int64)


def scenario_from_plan(
    train_data: LabeledDataset,
    test_data: LabeledDataset,
    plan: PartitionPlan,
    pool_indices: np.ndarray,
    remainder_indices: np.ndarray,
    val_fraction: float,
    master_seed: int,
    label: str | None = None,
) -> Scenario:
    """Assemble a Scenario from a persisted plan and pool reservation."""
    pool_indices = np.asarray(pool_indices, dtype=np.int64)
    remainder_indices = np.asarray(remainder_indices, dtype=np.int64)
    participants = []
    participant_indices = []
    for i, shard in enumerate(plan.participants):
        global_idx = remainder_indices[shard]
        participant_indices.append(global_idx)
        shard_data = train_data.subset(global_idx)
        train, val = split_train_val(
            shard_data, val_fraction, stable_seed(master_seed, "participant-split", i)
        )
        participants.append(ParticipantData(train=train, val=val))
    return Scenario(
        label=label if label is not None else plan.strategy,
        participants=participants,
        test=test_data,
        public_pool=train_data.subset(pool_indices),
        pool_indices=pool_indices,
        remainder_indices=remainder_indices,
        participant_indices=participant_indices,
        partition=plan,
    )


def build_scenario(
    train_data: LabeledDataset,
    test_data: LabeledDataset,
    strategy: str,
    k: int,
    partition_params: dict,
    pool_size: int,
    val_fraction: float,
    master_seed: int,
    label: str | None = None,
) -> Scenario:
    """Carve the pool, partition the remainder, split every shard."""
    pool_idx, remainder_idx = carve_public_pool(train_data, pool_size, master_seed)
    remainder = train_data.subset(remainder_idx)
    plan = make_partition(
        remainder, strategy, k, partition_params, stable_seed(master_seed, "partition")
    )
    return scenario_from_plan(
        train_data,
        test_data,
        plan,
        pool_idx,
        remainder_idx,
        val_fraction,
        master_seed,
        label=label,
    )


# --------------------------------------------------------------------------
# Pre-training
# --------------------------------------------------------------------------


def participant_arch(scenario: Scenario, hidden_layers: tuple[int, ...]) -> ArchSpec:
    return ArchSpec(
        input_dim=scenario.test.feature_dim,
        hidden_layers=tuple(hidden_layers),
        num_classes=scenario.test.class_count,
    )


def pretrain_participants(
    scenario: Scenario,
    hidden_layers: tuple[int, ...],
    cfg: TrainConfig,
    master_seed: int,
) -> list[tuple[Model, EvalReport]]:
    """Train one model per participant on its own shard.

    Each participant gets its own init seed derived from the master
    seed, trains with early stopping on its validation split, and is
    evaluated on the shared test set.
    """
    arch = participant_arch(scenario, hidden_layers)
    out: list[tuple[Model, EvalReport]] = []
    for i, part in enumerate(scenario.participants):
        model = init_model(arch, stable_seed(master_seed, "participant-init", i))
        trained, _ = train_supervised(model, part.train, part.val, cfg)
        out.append((trained, evaluate(trained, scenario.test)))
    return out


# --------------------------------------------------------------------------
# Pairwise matrix
# --------------------------------------------------------------------------


def pair_seed(
    master_seed: int,
    teacher_id: int,
    student_id: int,
    method: str,
    temperature: float,
    alpha: float,
) -> int:
    """Seed for one pairwise cell; the documented seed policy."""
    return stable_seed(
        master_seed, "pair", teacher_id, student_id, method, float(temperature), float(alpha)
    )


def _shared_transfer_sets(
    scenario: Scenario,
    options: list[str],
    sizes: TransferSizes,
    master_seed: int,
) -> dict[str, TransferSet]:
    shared = {}
    for option in options:
        if option in PUBLIC_TRANSFER_OPTIONS:
            shared[option] = build_transfer_set(
                option,
                scenario.public_pool,
                None,
                sizes,
                stable_seed(master_seed, "transfer-sample"),
            )
    return shared


def _transfer_for(
    scenario: Scenario,
    shared: dict[str, TransferSet],
    option: str,
    student_id: int,
    sizes: TransferSizes,
) -> TransferSet:
    if option == "student_data":
        return build_transfer_set(
            "student_data", None, scenario.participants[student_id].train, sizes, 0
        )
    return shared[option]


def _run_cell(args: tuple) -> PairResult:
    (
        scenario_label,
        method,
        option,
        teacher_id,
        student_id,
        teacher_model,
        teacher_eval,
        student_model,
        student_eval,
        student_val,
        transfer,
        test,
        cfg,
        grid,
        master_seed,
    ) = args
    if method == "vanilla":
        temperature, alpha = cfg.temperature, cfg.alpha
        seed = pair_seed(master_seed, teacher_id, student_id, "vanilla", temperature, alpha)
        distilled = distill_vanilla(student_model, [teacher_model], transfer, cfg, seed)
    elif method == "dml":
        # mutual learning has no temperature/alpha knobs; record the
        # canonical baseline values
        temperature, alpha = 1.0, 0.5
        seed = pair_seed(master_seed, teacher_id, student_id, "dml", temperature, alpha)
        distilled, _ = distill_dml(
            student_model, teacher_model, transfer, transfer, cfg, seed
        )
    elif method == "dpkd":
        temperature, alpha = cfg.temperature, cfg.alpha
        supervised = option == "public_labeled"
        run_cfg = replace(cfg, method="dpkd", supervised_dpkd=supervised)
        seed = pair_seed(master_seed, teacher_id, student_id, "dpkd", temperature, alpha)
        distilled = distill_dpkd(student_model, teacher_model, transfer, run_cfg, seed)
    elif method == "tuned":
        if grid is None or grid.empty:
            raise ConfigError("tuned method needs a non-empty search grid")
        search = grid_search_tuned(
            student_model,
            teacher_model,
            transfer,
            grid,
            cfg,
            student_val,
            seed_fn=lambda t, a: pair_seed(master_seed, teacher_id, student_id, "vanilla", t, a),
        )
        temperature, alpha = search.best_temperature, search.best_alpha
        best_cfg = replace(cfg, temperature=temperature, alpha=alpha)
        seed = pair_seed(master_seed, teacher_id, student_id, "vanilla", temperature, alpha)
        distilled = distill_vanilla(student_model, [teacher_model], transfer, best_cfg, seed)
    else:
        raise ConfigError(f"unknown method {method!r}; choose one of {MATRIX_METHODS}")
    post_eval = evaluate(distilled, test)
    return build_pair_result(
        scenario_label,
        method,
        option,
        teacher_id,
        student_id,
        temperature,
        alpha,
        student_eval,
        post_eval,
        teacher_eval,
    )


def run_pairwise_matrix(
    pretrained: list[tuple[Model, EvalReport]],
    scenario: Scenario,
    methods: list[str],
    transfer_options: list[str],
    cfg: DistillConfig,
    grid: GridSpec | None,
    sizes: TransferSizes,
    master_seed: int,
    jobs: int = 1,
) -> list[PairResult]:
    """Every ordered teacher -> student pair for every method and option.

    With K participants each (method, option) block holds exactly
    K * (K - 1) records; self-transfers are excluded. Each record's
    pre-distillation evaluation is the stored pre-training report, not a
    recomputation. Cells are independent, so `jobs` > 1 fans them out
    over processes without changing any result.
    """
    if len(pretrained) != scenario.k:
        raise ConfigError(
            f"{len(pretrained)} pretrained models for {scenario.k} participants"
        )
    for m in methods:
        if m not in MATRIX_METHODS:
            raise ConfigError(f"unknown method {m!r}; choose one of {MATRIX_METHODS}")
    for option in transfer_options:
        if option not in TRANSFER_OPTIONS:
            raise ConfigError(
                f"unknown transfer option {option!r}; choose one of {TRANSFER_OPTIONS}"
            )
    shared = _shared_transfer_sets(scenario, transfer_options, sizes, master_seed)
    cells = []
    for method in methods:
        for option in transfer_options:
            for teacher_id in range(scenario.k):
                for student_id in range(scenario.k):
                    if teacher_id == student_id:
                        continue
                    transfer = _transfer_for(scenario, shared, option, student_id, sizes)
                    cells.append(
                        (
                            scenario.label,
                            method,
                            option,
                            teacher_id,
                            student_id,
                            pretrained[teacher_id][0],
                            pretrained[teacher_id][1],
                            pretrained[student_id][0],
                            pretrained[student_id][1],
                            scenario.participants[student_id].val,
                            transfer,
                            scenario.test,
                            cfg,
                            grid,
                            master_seed,
                        )
                    )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(cell) for cell in cells]
    return canonical_order(results)


# --------------------------------------------------------------------------
# Grid search
# --------------------------------------------------------------------------


@dataclass(eq=False)
class GridSearchResult:
    best_temperature: float
    best_alpha: float
    surface: dict[tuple[float, float], float]


def argmax_surface(surface: dict[tuple[float, float], float]) -> tuple[float, float]:
    """Highest-gain cell; ties resolve to smaller temperature, then alpha."""
    if not surface:
        raise ConfigError("empty gain surface")
    best_key = None
    best_gain = -np.inf
    for key in sorted(surface):
        if surface[key] > best_gain:
            best_gain = surface[key]
            best_key = key
    return best_key


def grid_search_tuned(
    student: Model,
    teacher: Model,
    transfer: TransferSet,
    grid: GridSpec,
    cfg: DistillConfig,
    select_data: LabeledDataset,
    seed_fn=None,
    evaluate_cell=None,
    sequential: bool = False,
) -> GridSearchResult:
    """Search the temperature/alpha grid for the best vanilla-KD setting.

    Every cell runs the same vanilla distillation, differing only in
    (temperature, alpha) and the cell seed produced by seed_fn; the gain
    used for selection is measured on select_data (the student's
    validation split in orchestrated runs). Exhaustive mode scans the
    full Cartesian product; sequential mode tunes alpha first at
    temperature 1, then temperature at the chosen alpha, trading
    optimality for a linear number of cells.

    evaluate_cell can replace the real runner (used by tests to probe
    selection logic against a synthetic surface).
    """
    if grid.empty:
        raise ConfigError("grid must contain at least one temperature and one alpha")
    if seed_fn is None:
        seed_fn = lambda t, a: pair_seed(0, 0, 1, "vanilla", t, a)
    if evaluate_cell is None:
        pre_acc = evaluate(student, select_data).overall_accuracy

        def evaluate_cell(temperature: float, alpha: float) -> float:
            cell_cfg = replace(cfg, temperature=temperature, alpha=alpha)
            distilled = distill_vanilla(
                student, [teacher], transfer, cell_cfg, seed_fn(temperature, alpha)
            )
            return (evaluate(distilled, select_data).overall_accuracy - pre_acc) * 100.0

    surface: dict[tuple[float, float], float] = {}
    temperatures = sorted(set(grid.temperatures))
    alphas = sorted(set(grid.alphas))
    if sequential:
        anchor = 1.0 if 1.0 in temperatures else temperatures[len(temperatures) // 2]
        for a in alphas:
            surface[(anchor, a)] = evaluate_cell(anchor, a)
        best_alpha = argmax_surface(surface)[1]
        for t in temperatures:
            if (t, best_alpha) not in surface:
                surface[(t, best_alpha)] = evaluate_cell(t, best_alpha)
    else:
        for t in temperatures:
            for a in alphas:
                surface[(t, a)] = evaluate_cell(t, a)
    best_t, best_a = argmax_surface(surface)
    return GridSearchResult(best_temperature=best_t, best_alpha=best_a, surface=surface)


# --------------------------------------------------------------------------
# Aggregation over results
# --------------------------------------------------------------------------


def best_teacher_frequency(results: list[PairResult]) -> dict[int, int]:
    """How often each teacher produced a student's highest gain.

    Per student the winning teacher is the one with the maximum gain,
    ties going to the lowest teacher id; the returned counts cover every
    teacher appearing in the results, including zero-count ones, and sum
    to the number of distinct students.
    """
    if not results:
        raise DataError("no results to aggregate")
    by_student: dict[int, list[PairResult]] = {}
    teachers: set[int] = set()
    for r in results:
        by_student.setdefault(r.student_id, []).append(r)
        teachers.add(r.teacher_id)
    counts = {t: 0 for t in sorted(teachers)}
    for student_id in sorted(by_student):
        rows = by_student[student_id]
        best = max(rows, key=lambda r: (r.gain_points, -r.teacher_id))
        counts[best.teacher_id] += 1
    return counts


# --------------------------------------------------------------------------
# Method recommendation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TransferContext:
    """What is known about a transfer situation before choosing a method."""

    teacher_strength: str = "strong"  # weak | comparable | strong
    transfer_labeled: bool = False
    student_data_available: bool = False
    tuning_budget: bool = False


@dataclass(frozen=True)
class Recommendation:
    method: str
    reason: str


# Ordered rule table; the first rule whose `when` clause matches the
# context wins. Callers may pass their own table, so policy changes are
# configuration, not code edits. The unlabeled guard sits above the
# weak-teacher rule on purpose: mutual learning is never recommended
# without labels or student data.
DEFAULT_RECOMMENDATION_RULES: list[dict] = [
    {
        "when": {"tuning_budget": True},
        "method": "tuned",
        "reason": "a searched temperature/alpha setting dominates any fixed choice",
    },
    {
        "when": {"transfer_labeled": False, "student_data_available": False},
        "method": "vanilla",
        "reason": "without labels or local data mutual learning degrades; "
        "fixed-parameter distillation is the safe default",
    },
    {
        "when": {"teacher_strength": "weak"},
        "method": "dml",
        "reason": "mutual learning recovers positive transfer from a weaker "
        "teacher when labeled or local data is available",
    },
    {
        "when": {},
        "method": "vanilla",
        "reason": "with a comparable or stronger teacher the fixed-parameter "
        "baseline transfers reliably",
    },
]


def recommend_kd_method(
    context: TransferContext, rules: list[dict] | None = None
) -> Recommendation:
    """Pick a transfer method for a context via the ordered rule table."""
    if context.teacher_strength not in ("weak", "comparable", "strong"):
        raise ConfigError(
            f"teacher_strength must be weak, comparable or strong, "
            f"got {context.teacher_strength!r}"
        )
    table = DEFAULT_RECOMMENDATION_RULES if rules is None else rules
    for rule in table:
        if all(getattr(context, key) == value for key, value in rule["when"].items()):
            return Recommendation(method=rule["method"], reason=rule["reason"])
    raise ConfigError("no recommendation rule matched the context")


# --------------------------------------------------------------------------
# Consolidation
# --------------------------------------------------------------------------


def consolidate_models(
    pretrained: list[tuple[Model, EvalReport]],
    scenario: Scenario,
    start_policy: str,
    weighting: str,
    ts_option: str,
    epochs: int,
    cfg: DistillConfig,
    sizes: TransferSizes,
    master_seed: int,
) -> tuple[Model, EvalReport]:
    """Merge every participant's knowledge into one model by distillation.

    The starting student is the worst participant, the best one, or a
    fresh untrained model; all remaining participants teach. Teacher
    weights are either class-wise competence shares or flat 1 / (J + 1).
    """
    if len(pretrained) < 2:
        raise ConfigError("consolidation needs at least two participants")
    if start_policy not in START_POLICIES:
        raise ConfigError(
            f"start_policy must be one of {START_POLICIES}, got {start_policy!r}"
        )
    if weighting not in WEIGHTINGS:
        raise ConfigError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")

    overall = [rep.overall_accuracy for _, rep in pretrained]
    if start_policy == "worst":
        chosen = int(np.argmin(overall))
    elif start_policy == "best":
        chosen = int(np.argmax(overall))
    else:
        chosen = None

    if chosen is None:
        if ts_option == "student_data":
            raise ConfigError(
                "an untrained start has no own dataset; pick a public transfer option"
            )
        arch = pretrained[0][0].arch
        student = init_model(arch, stable_seed(master_seed, "consolidation-init"))
        student_eval = evaluate(student, scenario.test)
        teachers = [m for m, _ in pretrained]
        teacher_evals = [rep for _, rep in pretrained]
    else:
        student = pretrained[chosen][0]
        student_eval = pretrained[chosen][1]
        teachers = [m for i, (m, _) in enumerate(pretrained) if i != chosen]
        teacher_evals = [rep for i, (_, rep) in enumerate(pretrained) if i != chosen]

    if weighting == "adaptive":
        weights = adaptive_teacher_weights(student_eval, teacher_evals)
    else:
        weights = equal_teacher_weights(len(teachers), scenario.test.class_count)

    student_data = scenario.participants[chosen].train if chosen is not None else None
    transfer = build_transfer_set(
        ts_option,
        scenario.public_pool,
        student_data,
        sizes,
        stable_seed(master_seed, "transfer-sample"),
    )
    run_cfg = replace(cfg, epochs=epochs)
    seed = stable_seed(master_seed, "consolidate", start_policy, weighting, ts_option)
    merged = distill_multi_teacher(student, teachers, weights, transfer, run_cfg, seed)
    return merged, evaluate(merged, scenario.test)
