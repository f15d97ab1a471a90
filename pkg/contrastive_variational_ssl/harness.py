"""
Experiment harness: one full run per grid cell (ingest, preprocess, pretrain,
probe, evaluate), optimizer and learning-rate sweeps, the ablation study and
result-table emission.

Every cell writes its resolved config, loss curve and metrics into its own
directory; tables carry the config fingerprint of each run.
"""

import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from aws_lambda_powertools import Logger

from .config import ExperimentConfig
from .constants import (
    ABLATION_SETTINGS,
    CELLS_DIR,
    CHECKPOINT_FILE,
    LOSS_CURVE_FILE,
    LR_GRID,
    METRIC_COLUMNS,
    METRIC_DECIMALS,
    METRICS_FILE,
    MIN_VALIDATION_ROWS,
    OPTIMIZER_DISPLAY_NAMES,
    OPTIMIZER_GRID,
    RESOLVED_CONFIG_FILE,
    RESULTS_FILE,
    RESULTS_TABLE_FILE,
    RUNS_FILE,
    SERVICE_NAME,
)
from .data_pipeline import (
    DataTable,
    apply_preprocess,
    fit_preprocess,
    load_csv,
    load_schema,
    make_blobs_table,
    split_train_test,
)
from .errors import CellError, EmptyTable, InvalidValue, NoLabels, TableFileNotFound, TooFewRows, ToolkitError
from .models import ModelBundle, ModelDims, init_model, save_checkpoint
from .storage import write_text_atomic
from .train_eval import (
    LossCurve,
    MetricsReport,
    cross_validate_probe,
    evaluate,
    extract_features,
    linear_probe,
    pretrain,
)

logger = Logger(service=SERVICE_NAME, child=True)

SWEEP_AXES = ["optimizer", "lr"]


class PreparedData:
    """
    Standardized feature matrices and labels for one run
    """

    def __init__(self, pretrain_x, val_x, train_x, train_labels, test_x, test_labels, width: int):
        self.pretrain_x = pretrain_x
        self.val_x = val_x
        self.train_x = train_x
        self.train_labels = train_labels
        self.test_x = test_x
        self.test_labels = test_labels
        self.width = width


class CellOutcome:
    """
    Results of one experiment run
    """

    def __init__(
        self,
        fingerprint: str,
        report: MetricsReport,
        curve: Optional[LossCurve],
        bundle: ModelBundle,
        cv_reports: Optional[List[MetricsReport]] = None,
    ):
        self.fingerprint = fingerprint
        self.report = report
        self.curve = curve
        self.bundle = bundle
        self.cv_reports = cv_reports or []

    def to_dict(self) -> Dict[str, Any]:
        outcome = {"fingerprint": self.fingerprint, "test": self.report.to_dict()}
        if self.cv_reports:
            outcome["cross_validation"] = {
                "folds": [r.metrics() for r in self.cv_reports],
                "mean": _mean_metrics([r.metrics() for r in self.cv_reports]),
            }
        return outcome


class SweepRow:
    def __init__(self, setting: str, seed: int, fingerprint: str, report: MetricsReport):
        self.setting = setting
        self.seed = seed
        self.fingerprint = fingerprint
        self.report = report


class SweepResult:
    """
    One row per grid cell per seed, kept in grid order
    """

    def __init__(self, rows: List[SweepRow], settings: List[str]):
        self.rows = rows
        self.settings = settings

    def mean_rows(self) -> List[Tuple[str, Dict[str, float]]]:
        """Seed-mean metrics per setting, in grid order."""
        means = []
        for setting in self.settings:
            metrics = [row.report.metrics() for row in self.rows if row.setting == setting]
            if metrics:
                means.append((setting, _mean_metrics(metrics)))
        return means

    def runs_frame(self) -> pd.DataFrame:
        records = []
        for row in self.rows:
            record = {"setting": row.setting, "seed": row.seed, "fingerprint": row.fingerprint}
            record.update({k: _round(v) for k, v in row.report.metrics().items()})
            records.append(record)
        return pd.DataFrame(records, columns=["setting", "seed", "fingerprint"] + METRIC_COLUMNS)

    def results_frame(self) -> pd.DataFrame:
        records = [{"setting": s, **{k: _round(v) for k, v in m.items()}} for s, m in self.mean_rows()]
        return pd.DataFrame(records, columns=["setting"] + METRIC_COLUMNS)


def _mean_metrics(metrics: Sequence[Dict[str, float]]) -> Dict[str, float]:
    return {key: float(np.mean([m[key] for m in metrics])) for key in METRIC_COLUMNS}


def _round(value: float) -> str:
    return f"{value:.{METRIC_DECIMALS}f}"


def slugify(label: str) -> str:
    """Directory-safe form of a setting label, e.g. 'w/o Contrastive Loss' -> 'w-o-contrastive-loss'."""
    slug = re.sub(r"[^a-z0-9.]+", "-", label.lower()).strip("-")
    return slug or "cell"


def load_dataset(config: ExperimentConfig) -> DataTable:
    """Load the configured table: a CSV (optionally with a schema sidecar) or synthetic blobs."""
    data = config.data
    if data.source == "blobs":
        return make_blobs_table(
            data.blob_rows,
            data.blob_features,
            data.blob_classes,
            data.blob_std,
            data.blob_seed,
            noise_features=data.blob_noise_features,
        )
    if not data.path:
        raise TableFileNotFound("data.path is required when data.source = csv")
    schema = load_schema(data.schema_path) if data.schema_path else None
    return load_csv(data.path, schema=schema, label_column=data.label_column)


def validation_rows(n_rows: int, val_fraction: float) -> int:
    """Validation row count for a training portion of n_rows: ceil(val_fraction · n_rows), at least two."""
    return max(MIN_VALIDATION_ROWS, int(np.ceil(val_fraction * n_rows - 1e-9)))


def prepare_data(config: ExperimentConfig, table: Optional[DataTable] = None) -> PreparedData:
    """Split, fit preprocessing on the training portion and transform every part.

    The training portion is split again into pretraining and validation rows
    for the validation loss; the test rows are only used for final metrics.
    The validation side holds ceil(val_fraction · n) rows, and never fewer than two.

    Raises:
        TooFewRows: If the training portion cannot hold two pretraining and two validation rows
    """
    table = table if table is not None else load_dataset(config)
    if table.label_column is None:
        raise NoLabels("evaluation needs a label column (data.label_column or a schema label)")
    seed = config.run.seed
    train, test = split_train_test(table, config.data.train_fraction, seed, config.data.stratify, name="split")
    n_val = validation_rows(train.n_rows, config.data.val_fraction)
    if train.n_rows - n_val < 2:
        raise TooFewRows(
            f"training portion has {train.n_rows} rows; pretraining and validation need at least 2 rows each"
        )
    pretrain_rows, val_rows = split_train_test(
        train, 1.0 - config.data.val_fraction, seed, stratify=False, name="val-split", test_rows=n_val
    )
    plan = fit_preprocess(train)
    if plan.width == 0:
        raise EmptyTable("preprocessing produced zero feature columns")
    return PreparedData(
        pretrain_x=apply_preprocess(plan, pretrain_rows),
        val_x=apply_preprocess(plan, val_rows),
        train_x=apply_preprocess(plan, train),
        train_labels=train.labels(),
        test_x=apply_preprocess(plan, test),
        test_labels=test.labels(),
        width=plan.width,
    )


def _dims(config: ExperimentConfig, width: int) -> ModelDims:
    return ModelDims(
        input_dim=width,
        hidden_dims=config.model.hidden_dims,
        latent_dim=config.model.latent_dim,
        projection_dim=config.model.projection_dim,
    )


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[str] = None,
    untrained: bool = False,
    bundle: Optional[ModelBundle] = None,
    data: Optional[PreparedData] = None,
    save_model: bool = False,
) -> CellOutcome:
    """Run one cell end to end: pretrain, probe the frozen trunk and score the test split.

    Args:
        config (ExperimentConfig): Resolved settings
        out_dir (str, optional): Directory for config.resolved, loss_curve.csv and metrics.json
        untrained (bool): Probe a freshly initialized encoder instead of pretraining
        bundle (ModelBundle, optional): Probe these parameters instead of pretraining
        data (PreparedData, optional): Reuse already prepared features
        save_model (bool): Also write the trained parameters to model.npz

    Returns:
        CellOutcome: Fingerprint, test metrics, loss curve and parameters
    """
    fingerprint = config.fingerprint()
    data = data if data is not None else prepare_data(config)
    curve = None
    if bundle is None:
        if untrained:
            bundle = init_model(_dims(config, data.width), config.run.seed)
        else:
            bundle, curve = pretrain(config, data.pretrain_x, data.val_x)

    train_features = extract_features(bundle, data.train_x)
    test_features = extract_features(bundle, data.test_x)
    probe = linear_probe(train_features, data.train_labels, config)
    report = evaluate(probe.predict(test_features), data.test_labels)

    cv_reports = None
    folds = config.evaluation.cv_folds
    if folds:
        cv_reports = cross_validate_probe(train_features, data.train_labels, folds, config)

    outcome = CellOutcome(fingerprint, report, curve, bundle, cv_reports)
    if out_dir is not None:
        write_cell(out_dir, config, outcome, save_model)
    logger.info("Experiment finished", extra={"fingerprint": fingerprint, "seed": config.run.seed, **report.metrics()})
    return outcome


def write_cell(out_dir: str, config: ExperimentConfig, outcome: CellOutcome, save_model: bool = False) -> None:
    """Write the resolved config, loss curve and metrics of a cell, each atomically."""
    os.makedirs(out_dir, exist_ok=True)
    write_text_atomic(os.path.join(out_dir, RESOLVED_CONFIG_FILE), config.to_text())
    if outcome.curve is not None:
        outcome.curve.write_csv(os.path.join(out_dir, LOSS_CURVE_FILE))
    metrics = json.dumps(outcome.to_dict(), indent=2, sort_keys=True) + "\n"
    write_text_atomic(os.path.join(out_dir, METRICS_FILE), metrics)
    if save_model:
        save_checkpoint(outcome.bundle, os.path.join(out_dir, CHECKPOINT_FILE))


def write_base_config(base: ExperimentConfig, out_dir: Optional[str]) -> None:
    """Write the resolved base config of a sweep or ablation at its root directory."""
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    write_text_atomic(os.path.join(out_dir, RESOLVED_CONFIG_FILE), base.to_text())


def run_cells(
    cells: Sequence[Tuple[str, ExperimentConfig]],
    seeds: Sequence[int],
    out_dir: Optional[str] = None,
    jobs: int = 1,
    runner: Callable[..., CellOutcome] = run_experiment,
) -> SweepResult:
    """Run every (cell, seed) pair, up to `jobs` at a time.

    Rows come back in grid order then seed order, whatever the completion order.

    Args:
        cells (Sequence[Tuple[str, ExperimentConfig]]): Setting label and config per cell
        seeds (Sequence[int]): Seeds applied to every cell
        out_dir (str, optional): Root directory; cells go to cells/<slug>-seed<seed>/
        jobs (int): Maximum concurrent cells
        runner (Callable): Cell runner, run_experiment by default

    Returns:
        SweepResult: One row per cell per seed

    Raises:
        CellError: For the first failing cell in grid order
    """
    if not cells:
        raise InvalidValue("a sweep needs at least one value")
    if not seeds:
        raise InvalidValue("a sweep needs at least one seed")
    if jobs < 1:
        raise InvalidValue(f"jobs must be >= 1, got {jobs}")

    tasks = []
    for label, config in cells:
        for seed in seeds:
            cell_config = config.with_overrides({"run.seed": int(seed)})
            cell_dir = None
            if out_dir is not None:
                cell_dir = os.path.join(out_dir, CELLS_DIR, f"{slugify(label)}-seed{seed}")
            tasks.append((label, int(seed), cell_config, cell_dir))

    def run_one(task) -> SweepRow:
        label, seed, cell_config, cell_dir = task
        logger.info("Running cell", extra={"setting": label, "seed": seed, "fingerprint": cell_config.fingerprint()})
        try:
            outcome = runner(cell_config, cell_dir)
        except (ToolkitError, OSError) as e:
            logger.error("Cell failed", extra={"setting": label, "seed": seed, "error": str(e)})
            raise CellError(label, seed, e) from e
        return SweepRow(label, seed, outcome.fingerprint, outcome.report)

    if jobs == 1:
        rows = [run_one(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_one, task) for task in tasks]
            rows = [future.result() for future in futures]
    return SweepResult(rows, [label for label, _ in cells])


def sweep_cells(base: ExperimentConfig, axis: str, values: Optional[Sequence[Any]] = None) -> List[Tuple[str, ExperimentConfig]]:
    """Grid cells for an optimizer or learning-rate sweep; defaults are the standard grids."""
    if axis == "optimizer":
        values = list(values) if values is not None else list(OPTIMIZER_GRID)
        return [
            (OPTIMIZER_DISPLAY_NAMES.get(str(v).lower(), str(v)), base.with_overrides({"optimizer.kind": str(v).lower()}))
            for v in values
        ]
    if axis == "lr":
        values = list(values) if values is not None else list(LR_GRID)
        return [(format(float(v), "g"), base.with_overrides({"optimizer.lr": float(v)})) for v in values]
    raise InvalidValue(f"unknown sweep axis '{axis}', expected one of {', '.join(SWEEP_AXES)}")


def run_sweep(
    base: ExperimentConfig,
    axis: str,
    values: Optional[Sequence[Any]] = None,
    seeds: Optional[Sequence[int]] = None,
    out_dir: Optional[str] = None,
    jobs: int = 1,
) -> SweepResult:
    """Sweep the optimizer kind or the learning rate over one or more seeds."""
    seeds = list(seeds) if seeds is not None else [base.run.seed]
    write_base_config(base, out_dir)
    return run_cells(sweep_cells(base, axis, values), seeds, out_dir, jobs)


def ablation_cells(base: ExperimentConfig) -> List[Tuple[str, ExperimentConfig]]:
    """The four ablation settings in reporting order: baseline, then one switch each."""
    switches = [switch for _, switch in ABLATION_SETTINGS if switch is not None]
    cells = []
    for label, enabled in ABLATION_SETTINGS:
        overrides = {f"ablation.{switch}": switch == enabled for switch in switches}
        cells.append((label, base.with_overrides(overrides)))
    return cells


def run_ablation(
    base: ExperimentConfig,
    seeds: Optional[Sequence[int]] = None,
    out_dir: Optional[str] = None,
    jobs: int = 1,
) -> SweepResult:
    """Run the baseline and the three single-component ablations."""
    seeds = list(seeds) if seeds is not None else [base.run.seed]
    write_base_config(base, out_dir)
    return run_cells(ablation_cells(base), seeds, out_dir, jobs)


def render_table(frame: pd.DataFrame) -> str:
    """Render a frame of strings as a space-aligned plain-text table."""
    columns = list(frame.columns)
    cells = [[str(v) for v in row] for row in frame.astype(str).itertuples(index=False)]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    header = "  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    body = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    return "\n".join([header, rule] + body) + "\n"


def _tables_text(results: pd.DataFrame, runs: pd.DataFrame) -> str:
    return "Seed means\n" + render_table(results) + "\nPer-seed runs\n" + render_table(runs)


def emit_table(result: SweepResult, out_dir: str) -> Dict[str, str]:
    """Write results.csv, runs.csv and results.txt with 3-decimal metrics.

    Args:
        result (SweepResult): Nonempty sweep or ablation result
        out_dir (str): Output directory

    Returns:
        Dict[str, str]: File kind to written path
    """
    if not result.rows:
        raise InvalidValue("cannot emit an empty result")
    results = result.results_frame()
    runs = result.runs_frame()
    paths = {
        "results": os.path.join(out_dir, RESULTS_FILE),
        "runs": os.path.join(out_dir, RUNS_FILE),
        "table": os.path.join(out_dir, RESULTS_TABLE_FILE),
    }
    write_text_atomic(paths["results"], results.to_csv(index=False, lineterminator="\n"))
    write_text_atomic(paths["runs"], runs.to_csv(index=False, lineterminator="\n"))
    write_text_atomic(paths["table"], _tables_text(results, runs))
    logger.info(f"Wrote results to {out_dir}", extra={"rows": len(result.rows), "settings": len(result.settings)})
    return paths


def report(results_dir: str) -> str:
    """Re-render the aligned table from the CSVs written by emit_table."""
    runs_path = os.path.join(results_dir, RUNS_FILE)
    results_path = os.path.join(results_dir, RESULTS_FILE)
    for path in (runs_path, results_path):
        if not os.path.isfile(path):
            raise TableFileNotFound(f"missing {path}")
    runs = pd.read_csv(runs_path, dtype=str, keep_default_na=False)
    results = pd.read_csv(results_path, dtype=str, keep_default_na=False)
    return _tables_text(results, runs)
