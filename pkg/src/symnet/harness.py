"""Experiment matrix: dataset resolution, training runs, result files, tables."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data
from .kernels import T2BMode
from .network import (
    ALL_CONDITIONS,
    BASELINE,
    CONDITION_NAMES,
    DEFAULT_ARCHITECTURE,
    Architecture,
    Condition,
    Network,
    count_network_parameters,
    cross_entropy,
    save_checkpoint,
)
from .stats import wilcoxon_rank_sum

log = logging.getLogger(__name__)

MNIST_ENV = "SYMNET_MNIST_DIR"
DESK_TRAIN, DESK_TEST = 6000, 1000


@dataclass
class TrainingConfig:
    lr: float = 0.001
    epochs: int = 5
    batch_size: int = 1
    train_fraction: float = 0.9
    t2b_mode: str = T2BMode.LITERAL.value
    log_every: int = 1000
    split_seed: int = 0


@dataclass
class Splits:
    train: data.PreparedDataset
    val: data.PreparedDataset
    test: data.PreparedDataset
    name: str

    @property
    def normalization(self) -> data.ZScore:
        return data.ZScore(self.train.mean, self.train.std)


@dataclass
class RunResult:
    condition: str
    seed: int
    epochs: int
    lr: float
    t2b_mode: str
    param_counts: dict
    history: list = field(default_factory=list)
    test: dict = field(default_factory=dict)
    wall_s: float = 0.0
    dataset: str = ""
    updates: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "RunResult":
        return cls(**doc)


# -- datasets ----------------------------------------------------------------


def _default_mnist_root() -> Path:
    return Path(os.environ.get(MNIST_ENV, "data/mnist"))


def load_raw(spec: str, seed: int = 0) -> tuple[data.RawDataset, data.RawDataset]:
    """(training-file dataset, test dataset) for a ``--dataset`` value.

    Accepted forms: ``synthetic[:N_PER_CLASS]``, ``mnist[:DIR]``,
    ``idx:TRAIN_IMAGES,TRAIN_LABELS,TEST_IMAGES,TEST_LABELS`` and
    ``manifest:TRAIN_CSV,TEST_CSV``.
    """
    kind, _, arg = spec.partition(":")
    if kind == "synthetic":
        n = int(arg) if arg else 100
        return data.generate_synthetic(n, seed), data.generate_synthetic(max(1, n // 5), seed + 1)
    if kind == "mnist":
        files = data.find_mnist(arg or _default_mnist_root())
        return data.load_idx(*files["train"]), data.load_idx(*files["test"])
    if kind == "idx":
        paths = arg.split(",")
        if len(paths) != 4:
            raise data.DataError("idx dataset needs TRAIN_IMAGES,TRAIN_LABELS,TEST_IMAGES,TEST_LABELS")
        return data.load_idx(*paths[:2]), data.load_idx(*paths[2:])
    if kind == "manifest":
        paths = arg.split(",")
        if len(paths) != 2:
            raise data.DataError("manifest dataset needs TRAIN_CSV,TEST_CSV")
        return data.load_manifest(paths[0]), data.load_manifest(paths[1])
    raise ValueError(f"unknown dataset {spec!r}; use synthetic, mnist, idx:... or manifest:...")


def prepare_splits(
    train_raw: data.RawDataset,
    test_raw: data.RawDataset,
    train_fraction: float = 0.9,
    seed: int = 0,
    subset: tuple[int, int] | None = None,
    name: str = "",
    normalization: data.ZScore | None = None,
) -> Splits:
    if subset is not None:
        train_raw = data.stratified_subset(train_raw, subset[0], seed)
        test_raw = data.stratified_subset(test_raw, subset[1], seed)
    train_part, val_part = data.split_train_val(train_raw, train_fraction, seed)
    x_train = data.prepare_images(train_part)
    z = normalization or data.ZScore.fit(x_train)

    def pack(raw, images, split):
        return data.PreparedDataset(z.apply(images), raw.labels, split, z.mean, z.std)

    return Splits(
        pack(train_part, x_train, "train"),
        pack(val_part, data.prepare_images(val_part), "val"),
        pack(test_raw, data.prepare_images(test_raw), "test"),
        name,
    )


def load_dataset(spec: str, full_scale: bool = False, train_fraction: float = 0.9, seed: int = 0) -> Splits:
    """Resolve, preprocess and split a dataset. MNIST defaults to the 6000/1000 desk subset."""
    train_raw, test_raw = load_raw(spec, seed)
    subset = None
    if spec.split(":")[0] == "mnist" and not full_scale:
        subset = (DESK_TRAIN, DESK_TEST)
    return prepare_splits(train_raw, test_raw, train_fraction, seed, subset, spec)


# -- training ----------------------------------------------------------------


def evaluate(net: Network, images: np.ndarray, labels: np.ndarray, batch_size: int = 100) -> tuple[float, float]:
    """(accuracy in percent, mean cross-entropy)."""
    if len(labels) == 0:
        return 0.0, 0.0
    probs = net.predict_proba(images, batch_size)
    acc = float((probs.argmax(axis=1) == labels).mean() * 100.0)
    return acc, float(cross_entropy(probs, labels).mean())


def train_network(net: Network, splits: Splits, config: TrainingConfig, seed: int) -> RunResult:
    """Plain SGD for ``config.epochs`` epochs; logs every epoch and every ``log_every`` updates."""
    start = time.perf_counter()
    rng = np.random.default_rng([seed, 1])
    x, y = splits.train.images, splits.train.labels
    features, classifier = count_network_parameters(net.condition, net.arch)
    result = RunResult(
        condition=net.condition.name,
        seed=seed,
        epochs=config.epochs,
        lr=config.lr,
        t2b_mode=net.t2b_mode.value,
        param_counts={"features": features, "classifier": classifier},
        dataset=splits.name,
    )
    updates = 0
    window_ce, window_hits, window_n = 0.0, 0, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(y))
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            probs, cache = net.forward(x[idx])
            net.sgd_step(net.backward(cache, y[idx]), config.lr)
            updates += 1
            window_ce += float(cross_entropy(probs, y[idx]).sum())
            window_hits += int((probs.argmax(axis=1) == y[idx]).sum())
            window_n += len(idx)
            if updates % config.log_every == 0:
                result.updates.append(
                    {
                        "update": updates,
                        "epoch": epoch,
                        "train_acc": 100.0 * window_hits / window_n,
                        "train_ce": window_ce / window_n,
                    }
                )
                window_ce, window_hits, window_n = 0.0, 0, 0
        train_acc, train_ce = evaluate(net, x, y)
        val_acc, val_ce = evaluate(net, splits.val.images, splits.val.labels)
        result.history.append(
            {"epoch": epoch, "train_acc": train_acc, "val_acc": val_acc, "train_ce": train_ce, "val_ce": val_ce}
        )
        log.info(
            "%s seed %d epoch %d: train %.2f%% val %.2f%% (ce %.4f)",
            result.condition, seed, epoch, train_acc, val_acc, val_ce,
        )
    acc, ce = evaluate(net, splits.test.images, splits.test.labels)
    result.test = {"acc": acc, "ce": ce}
    result.wall_s = time.perf_counter() - start
    return result


def _single_run(condition: Condition, splits: Splits, config: TrainingConfig, seed: int,
                arch: Architecture, out: Path | None) -> RunResult:
    net = Network(condition, arch, config.t2b_mode, seed=seed)
    net.metadata = {
        "seed": seed,
        "dataset": splits.name,
        "normalization": {"mean": splits.train.mean, "std": splits.train.std},
    }
    result = train_network(net, splits, config, seed)
    if out is not None:
        write_run(out, result, net)
    return result


def run_condition(
    condition: Condition | str,
    splits: Splits,
    config: TrainingConfig,
    seeds=(0,),
    arch: Architecture = DEFAULT_ARCHITECTURE,
    out: str | Path | None = None,
    jobs: int = 1,
) -> list[RunResult]:
    """Train one independent network per seed."""
    if isinstance(condition, str):
        condition = Condition.parse(condition)
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    out = Path(out) if out is not None else None
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_single_run, condition, splits, config, s, arch, out) for s in seeds]
            return [f.result() for f in futures]
    return [_single_run(condition, splits, config, s, arch, out) for s in seeds]


def parse_conditions(text: str) -> list[Condition]:
    if text.strip().lower() == "all":
        return list(ALL_CONDITIONS)
    return [Condition.parse(part) for part in text.split(",")]


# -- result files ------------------------------------------------------------


def run_stem(result: RunResult) -> str:
    return f"{result.condition}_seed{result.seed}"


def write_run(out: Path, result: RunResult, net: Network | None = None) -> Path:
    runs = out / "runs"
    runs.mkdir(parents=True, exist_ok=True)
    path = runs / f"{run_stem(result)}.json"
    path.write_text(json.dumps(result.to_json(), indent=2) + "\n")
    if net is not None:
        ckpts = out / "checkpoints"
        ckpts.mkdir(parents=True, exist_ok=True)
        save_checkpoint(net, ckpts / f"{run_stem(result)}.json")
    return path


def load_results(path: str | Path) -> list[RunResult]:
    """Run results from a JSON file, a ``runs/`` directory, or an output directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted((path / "runs").glob("*.json")) if (path / "runs").is_dir() else sorted(path.glob("*.json"))
    else:
        files = [path]
    if not files:
        raise data.DataError(f"no result files under {path}")
    results = []
    for f in files:
        try:
            results.append(RunResult.from_json(json.loads(f.read_text())))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise data.DataError(f"{f}: not a run result ({exc})") from None
    return results


def _condition_order(name: str) -> tuple[int, str]:
    return (CONDITION_NAMES.index(name) if name in CONDITION_NAMES else len(CONDITION_NAMES), name)


def aggregate_table(results: list[RunResult], baseline: str = BASELINE) -> list[dict]:
    """One row per condition: accuracy mean/std, mean CE, parameter counts, significance star.

    A star marks a condition whose accuracies are not significantly
    different from the baseline's (rank-sum p >= 0.05).
    """
    by_condition: dict[str, list[RunResult]] = {}
    for r in results:
        by_condition.setdefault(r.condition, []).append(r)
    base = [r.test["acc"] for r in by_condition.get(baseline, [])]
    rows = []
    for name in sorted(by_condition, key=_condition_order):
        runs = sorted(by_condition[name], key=lambda r: r.seed)
        accs = np.array([r.test["acc"] for r in runs])
        p_value = None
        star = False
        if name != baseline and len(base) >= 3 and len(accs) >= 3:
            report = wilcoxon_rank_sum(base, accs, baseline, name)
            p_value = report.p_value
            star = report.equivalent
        rows.append(
            {
                "condition": name,
                "runs": len(runs),
                "mean_acc": float(accs.mean()),
                "std_acc": float(accs.std(ddof=1)) if len(accs) > 1 else 0.0,
                "mean_ce": float(np.mean([r.test["ce"] for r in runs])),
                "params_features": runs[0].param_counts["features"],
                "params_classifier": runs[0].param_counts["classifier"],
                "p_value": p_value,
                "star": star,
            }
        )
    return rows


SUMMARY_COLUMNS = ("condition", "mean_acc", "std_acc", "mean_ce", "params_features", "star")


def write_summary(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row["condition"],
                    f"{row['mean_acc']:.4f}",
                    f"{row['std_acc']:.4f}",
                    f"{row['mean_ce']:.6f}",
                    row["params_features"],
                    "*" if row["star"] else "",
                ]
            )


def write_curves(path: str | Path, results: list[RunResult]) -> None:
    """Per-epoch and per-update learning curves in one long-format CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("condition", "seed", "granularity", "step", "train_acc", "val_acc", "train_ce", "val_ce"))
        for r in sorted(results, key=lambda r: (_condition_order(r.condition), r.seed)):
            for h in r.history:
                writer.writerow(
                    (r.condition, r.seed, "epoch", h["epoch"], f"{h['train_acc']:.4f}", f"{h['val_acc']:.4f}",
                     f"{h['train_ce']:.6f}", f"{h['val_ce']:.6f}")
                )
            for u in r.updates:
                writer.writerow(
                    (r.condition, r.seed, "update", u["update"], f"{u['train_acc']:.4f}", "",
                     f"{u['train_ce']:.6f}", "")
                )
