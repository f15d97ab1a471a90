"""
Tabular data pipeline: CSV ingestion, preprocessing (z-score, one-hot,
mean/mode imputation), seeded splitting and cross-validation folds,
augmented views for contrastive training and SMOTE oversampling for the
supervised probe stage.
"""

import os
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from aws_lambda_powertools import Logger
from sklearn.datasets import make_blobs
from sklearn.model_selection import KFold, train_test_split
from sklearn.neighbors import NearestNeighbors

from .autodiff import Tensor
from .constants import DEFAULT_MASK_PROB, DEFAULT_NOISE_SIGMA, DEFAULT_SMOTE_K, SERVICE_NAME, STD_FLOOR
from .errors import (
    ClassTooSmall,
    EmptyTable,
    InvalidK,
    InvalidValue,
    LengthMismatch,
    MissingLabel,
    NoLabels,
    ParseError,
    RaggedRows,
    SchemaMismatch,
    TableFileNotFound,
    TooFewRows,
)
from .seeding import substream, substream_seed

logger = Logger(service=SERVICE_NAME, child=True)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
LABEL = "label"
SCHEMA_KINDS = [NUMERIC, CATEGORICAL, LABEL]


class Column:
    """
    One table column; missing entries are None
    """

    def __init__(self, name: str, kind: str, values: List[Any]):
        if kind not in (NUMERIC, CATEGORICAL):
            raise SchemaMismatch(f"column '{name}' has unknown kind '{kind}'")
        self.name = name
        self.kind = kind
        self.values = values

    def __len__(self) -> int:
        return len(self.values)

    def take(self, indices: Sequence[int]) -> "Column":
        return Column(self.name, self.kind, [self.values[i] for i in indices])

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "kind": self.kind, "values": list(self.values)}


class DataTable:
    """
    Ordered columns of equal length with an optional label column
    """

    def __init__(self, columns: List[Column], label_column: Optional[str] = None):
        """
        Initialize a DataTable

        Args:
            columns (List[Column]): Columns in file order, the label column included
            label_column (str, optional): Name of the label column

        Raises:
            EmptyTable: If there are no columns
            RaggedRows: If the columns differ in length
            SchemaMismatch: If the label column does not exist
            MissingLabel: If the label column holds a missing entry
        """
        if not columns:
            raise EmptyTable("table has no columns")
        lengths = {len(c) for c in columns}
        if len(lengths) != 1:
            raise RaggedRows(f"columns differ in length: {sorted(lengths)}")
        self.columns = columns
        self.label_column = label_column
        if label_column is not None:
            label = self.column(label_column)
            if any(v is None for v in label.values):
                raise MissingLabel(f"label column '{label_column}' has missing entries")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0])

    @property
    def feature_columns(self) -> List[Column]:
        return [c for c in self.columns if c.name != self.label_column]

    def column(self, name: str) -> Column:
        for column in self.columns:
            if column.name == name:
                return column
        raise SchemaMismatch(f"no column named '{name}'")

    def labels(self) -> Optional[List[str]]:
        if self.label_column is None:
            return None
        return [str(v) for v in self.column(self.label_column).values]

    def take(self, indices: Sequence[int]) -> "DataTable":
        """Select rows by position, in the given order."""
        indices = [int(i) for i in indices]
        return DataTable([c.take(indices) for c in self.columns], self.label_column)


def load_schema(path: str) -> Dict[str, str]:
    """Parse a schema sidecar of `column_name,kind` lines.

    Args:
        path (str): Schema file path

    Returns:
        Dict[str, str]: Column name to kind (numeric, categorical or label)

    Raises:
        TableFileNotFound: If the file does not exist
        ParseError: If a line is malformed or names an unknown kind
    """
    if not os.path.isfile(path):
        raise TableFileNotFound(f"schema file not found: {path}")
    schema: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            name, sep, kind = line.rpartition(",")
            name, kind = name.strip(), kind.strip().lower()
            if not sep or not name:
                raise ParseError(f"expected 'column_name,kind', got '{line}'", line_number)
            if kind not in SCHEMA_KINDS:
                raise ParseError(f"unknown column kind '{kind}'", line_number)
            if name in schema:
                raise ParseError(f"column '{name}' listed twice", line_number)
            schema[name] = kind
    if list(schema.values()).count(LABEL) > 1:
        raise ParseError("schema declares more than one label column")
    return schema


def _parse_numeric(cells: pd.Series) -> pd.Series:
    parsed = pd.to_numeric(cells.replace("", np.nan), errors="coerce")
    return parsed.where(np.isfinite(parsed))


def load_csv(path: str, schema: Optional[Dict[str, str]] = None, label_column: Optional[str] = None) -> DataTable:
    """Read a headed, comma separated UTF-8 file into a DataTable.

    Empty fields are missing. Without a schema a column is numeric iff every
    non-missing cell parses as a finite number; with a numeric schema entry,
    unparseable cells become missing.

    Args:
        path (str): CSV path
        schema (Dict[str, str], optional): Column kinds as returned by load_schema
        label_column (str, optional): Label column name when the schema does not declare one

    Returns:
        DataTable: Parsed table

    Raises:
        TableFileNotFound: If the file does not exist
        RaggedRows: If a row's width differs from the header's
        EmptyTable: If the file has no header or no data rows
        SchemaMismatch: If the schema and the header disagree
    """
    if not os.path.isfile(path):
        raise TableFileNotFound(f"data file not found: {path}")
    try:
        raw = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as e:
        raise EmptyTable(f"{path} is empty") from e
    except pd.errors.ParserError as e:
        raise RaggedRows(f"{path}: {e}") from e

    # short rows come back padded with NaN even with na_filter disabled
    if raw.isna().to_numpy().any():
        raise RaggedRows(f"{path}: some rows have fewer fields than the header")
    header = [str(h).strip() for h in raw.iloc[0].tolist()]
    body = raw.iloc[1:].reset_index(drop=True)
    if body.empty:
        raise EmptyTable(f"{path} has a header but no rows")
    if len(set(header)) != len(header):
        raise SchemaMismatch(f"{path} has duplicate column names")

    if schema is not None:
        missing = [name for name in schema if name not in header]
        unknown = [name for name in header if name not in schema]
        if missing or unknown:
            raise SchemaMismatch(f"schema/header mismatch: missing {missing}, undeclared {unknown}")
        declared = [name for name, kind in schema.items() if kind == LABEL]
        if declared:
            if label_column is not None and label_column != declared[0]:
                raise SchemaMismatch(f"label column '{label_column}' differs from schema label '{declared[0]}'")
            label_column = declared[0]
    if label_column is not None and label_column not in header:
        raise SchemaMismatch(f"label column '{label_column}' is not in the header")

    columns = []
    for position, name in enumerate(header):
        cells = body.iloc[:, position].astype(str)
        kind = schema.get(name) if schema is not None else None
        if name == label_column:
            values = [None if cell == "" else cell for cell in cells.tolist()]
            columns.append(Column(name, CATEGORICAL, values))
            continue
        parsed = _parse_numeric(cells)
        if kind is None:
            present = cells != ""
            kind = NUMERIC if bool(parsed[present].notna().all()) else CATEGORICAL
        if kind == NUMERIC:
            values = [None if pd.isna(v) else float(v) for v in parsed.tolist()]
        else:
            values = [None if cell == "" else cell for cell in cells.tolist()]
        columns.append(Column(name, kind, values))

    table = DataTable(columns, label_column)
    logger.info(
        f"Loaded {path}",
        extra={"rows": table.n_rows, "columns": len(columns), "label_column": label_column},
    )
    return table


class PreprocessPlan:
    """
    Statistics fitted on training rows: per numeric column mean and std, per
    categorical column the sorted category list and mode
    """

    def __init__(
        self,
        columns: List[Tuple[str, str]],
        numeric: Dict[str, Dict[str, float]],
        categorical: Dict[str, Dict[str, Any]],
    ):
        self.columns = columns
        self.numeric = numeric
        self.categorical = categorical

    @property
    def width(self) -> int:
        return sum(1 if kind == NUMERIC else len(self.categorical[name]["categories"]) for name, kind in self.columns)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "columns": [list(c) for c in self.columns],
            "numeric": self.numeric,
            "categorical": self.categorical,
            "width": self.width,
        }


def _mode(values: List[str]) -> Optional[str]:
    if not values:
        return None
    counts = pd.Series(values).value_counts()
    best = counts.max()
    return sorted(counts[counts == best].index.tolist())[0]


def fit_preprocess(train: DataTable) -> PreprocessPlan:
    """Fit standardization, encoding and imputation statistics on training rows.

    Args:
        train (DataTable): Training rows

    Returns:
        PreprocessPlan: Fitted plan; numeric std is the population std floored at 1e-12

    Raises:
        EmptyTable: If the table has no rows or no feature columns
    """
    if train.n_rows == 0:
        raise EmptyTable("cannot fit preprocessing on zero rows")
    features = train.feature_columns
    if not features:
        raise EmptyTable("table has no feature columns")

    numeric: Dict[str, Dict[str, float]] = {}
    categorical: Dict[str, Dict[str, Any]] = {}
    for column in features:
        present = [v for v in column.values if v is not None]
        if column.kind == NUMERIC:
            array = np.asarray(present, dtype=np.float64)
            mean = float(array.mean()) if array.size else 0.0
            std = float(array.std(ddof=0)) if array.size else 0.0
            numeric[column.name] = {"mean": mean, "std": max(std, STD_FLOOR)}
        else:
            categorical[column.name] = {
                "categories": sorted(set(str(v) for v in present)),
                "mode": _mode([str(v) for v in present]),
            }

    plan = PreprocessPlan([(c.name, c.kind) for c in features], numeric, categorical)
    logger.debug("Fitted preprocessing plan", extra={"width": plan.width, "columns": len(plan.columns)})
    return plan


def apply_preprocess(plan: PreprocessPlan, table: DataTable) -> Tensor:
    """Impute, standardize and one-hot encode a table with a fitted plan.

    Categories not seen at fit time encode as an all-zero block.

    Args:
        plan (PreprocessPlan): Plan fitted on training rows
        table (DataTable): Rows to transform

    Returns:
        Tensor: Feature matrix [n_rows, plan.width]

    Raises:
        SchemaMismatch: If the table's feature columns differ from the plan's
    """
    actual = [(c.name, c.kind) for c in table.feature_columns]
    if actual != plan.columns:
        raise SchemaMismatch(f"table columns {actual} do not match the plan {plan.columns}")

    blocks = []
    for column in table.feature_columns:
        if column.kind == NUMERIC:
            stats = plan.numeric[column.name]
            values = np.array([stats["mean"] if v is None else v for v in column.values], dtype=np.float64)
            blocks.append(((values - stats["mean"]) / stats["std"]).reshape(-1, 1))
        else:
            stats = plan.categorical[column.name]
            index = {category: position for position, category in enumerate(stats["categories"])}
            block = np.zeros((table.n_rows, len(index)))
            for row, value in enumerate(column.values):
                key = stats["mode"] if value is None else str(value)
                position = index.get(key)
                if position is not None:
                    block[row, position] = 1.0
            blocks.append(block)

    return Tensor(np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0)))


def split_train_test(
    table: DataTable,
    train_fraction: float = 0.8,
    seed: int = 0,
    stratify: bool = False,
    name: str = "split",
    test_rows: Optional[int] = None,
) -> Tuple[DataTable, DataTable]:
    """Seeded shuffle split with floor(train_fraction · n) training rows.

    Args:
        table (DataTable): Rows to split
        train_fraction (float): Fraction in (0, 1)
        seed (int): Run seed
        stratify (bool): Keep label proportions on both sides
        name (str): Substream name, so nested splits draw independent shuffles
        test_rows (int, optional): Exact held-out row count; overrides train_fraction

    Returns:
        Tuple[DataTable, DataTable]: (train, test), disjoint and exhaustive

    Raises:
        TooFewRows: If either side would be empty
    """
    if not (0.0 < train_fraction < 1.0):
        raise InvalidValue(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = table.n_rows
    n_train = int(np.floor(train_fraction * n)) if test_rows is None else n - test_rows
    if n < 2 or n_train < 1 or n_train >= n:
        raise TooFewRows(f"cannot split {n} rows with train_fraction {train_fraction}")

    labels = None
    if stratify:
        labels = table.labels()
        if labels is None:
            raise NoLabels("stratified splitting needs a label column")
    try:
        train_idx, test_idx = train_test_split(
            np.arange(n),
            train_size=n_train,
            random_state=substream_seed(seed, name),
            shuffle=True,
            stratify=labels,
        )
    except ValueError as e:
        raise TooFewRows(f"stratified split impossible: {e}") from e
    return table.take(train_idx), table.take(test_idx)


def kfold(table: Union[DataTable, int], k: int, seed: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Seeded k-fold partition; fold sizes differ by at most one.

    Args:
        table (DataTable | int): Table or row count
        k (int): Number of folds, 2 <= k <= n_rows
        seed (int): Run seed

    Returns:
        List[Tuple[np.ndarray, np.ndarray]]: (train_idx, val_idx) per fold

    Raises:
        InvalidK: If k is out of range
    """
    n = table if isinstance(table, (int, np.integer)) else table.n_rows
    if not isinstance(k, (int, np.integer)) or k < 2 or k > n:
        raise InvalidK(f"k must be in [2, {n}], got {k}")
    splitter = KFold(n_splits=int(k), shuffle=True, random_state=substream_seed(seed, "kfold"))
    return [(train_idx, val_idx) for train_idx, val_idx in splitter.split(np.arange(n))]


class AugmentConfig:
    """
    View-generation and oversampling settings
    """

    def __init__(
        self,
        noise_sigma: float = DEFAULT_NOISE_SIGMA,
        mask_prob: float = DEFAULT_MASK_PROB,
        smote: bool = False,
        smote_k: int = DEFAULT_SMOTE_K,
    ):
        """
        Initialize an AugmentConfig

        Args:
            noise_sigma (float): Gaussian noise std per standardized feature, >= 0
            mask_prob (float): Per-feature zero-mask probability in [0, 1)
            smote (bool): Balance classes with SMOTE before fitting the probe
            smote_k (int): SMOTE neighbor count, >= 1

        Raises:
            InvalidValue: If a parameter is out of range
        """
        if not np.isfinite(noise_sigma) or noise_sigma < 0:
            raise InvalidValue(f"noise_sigma must be >= 0, got {noise_sigma}")
        if not (0.0 <= mask_prob < 1.0):
            raise InvalidValue(f"mask_prob must be in [0, 1), got {mask_prob}")
        if int(smote_k) < 1:
            raise InvalidValue(f"smote_k must be >= 1, got {smote_k}")
        self.noise_sigma = float(noise_sigma)
        self.mask_prob = float(mask_prob)
        self.smote = bool(smote)
        self.smote_k = int(smote_k)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "noise_sigma": self.noise_sigma,
            "mask_prob": self.mask_prob,
            "smote": self.smote,
            "smote_k": self.smote_k,
        }


def _view(x: np.ndarray, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    view = x.copy()
    if aug.noise_sigma > 0:
        view += rng.normal(0.0, aug.noise_sigma, size=x.shape)
    if aug.mask_prob > 0:
        view *= rng.random(size=x.shape) >= aug.mask_prob
    return view


def make_views(x, aug: AugmentConfig, seed: int, name: str = "views") -> Tuple[Tensor, Tensor]:
    """Create two independently perturbed copies of a feature batch.

    Args:
        x (Tensor | array-like): Feature rows [B, D]
        aug (AugmentConfig): Noise and masking settings
        seed (int): Run seed
        name (str): Substream prefix; each view draws from its own child stream

    Returns:
        Tuple[Tensor, Tensor]: (view1, view2), constants for the tape
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    view1 = _view(data, aug, substream(seed, f"{name}/view1"))
    view2 = _view(data, aug, substream(seed, f"{name}/view2"))
    return Tensor(view1), Tensor(view2)


def smote(
    features, labels: Optional[Sequence[Any]], k_neighbors: int = DEFAULT_SMOTE_K, seed: int = 0
) -> Tuple[np.ndarray, List[Any]]:
    """Oversample every minority class up to the majority count by interpolation.

    Synthetic rows are appended after the original rows, class by class in
    sorted label order.

    Args:
        features (array-like): Rows [n, D]
        labels (Sequence): One label per row
        k_neighbors (int): Neighbors considered per minority point
        seed (int): Run seed

    Returns:
        Tuple[np.ndarray, List[Any]]: Augmented features and labels

    Raises:
        NoLabels: If no labels are given
        ClassTooSmall: If a class needing oversampling has a single sample
    """
    if labels is None or len(labels) == 0:
        raise NoLabels("SMOTE needs class labels")
    data = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    labels = list(labels)
    if data.shape[0] != len(labels):
        raise LengthMismatch(f"{data.shape[0]} rows but {len(labels)} labels")
    if int(k_neighbors) < 1:
        raise InvalidValue(f"k_neighbors must be >= 1, got {k_neighbors}")

    label_array = np.asarray([str(label) for label in labels])
    classes, counts = np.unique(label_array, return_counts=True)
    target = int(counts.max())

    synthetic_rows = []
    synthetic_labels: List[Any] = []
    for cls, count in zip(classes, counts):
        needed = target - int(count)
        if needed == 0:
            continue
        if count < 2:
            raise ClassTooSmall(f"class '{cls}' has a single sample and cannot be oversampled")
        positions = np.flatnonzero(label_array == cls)
        points = data[positions]
        k_eff = min(int(k_neighbors), int(count) - 1)
        neighbors = NearestNeighbors(n_neighbors=k_eff + 1).fit(points)
        nearest = neighbors.kneighbors(points, return_distance=False)
        # each point is its own nearest neighbor unless it has exact duplicates
        own = [row[row != i][:k_eff] for i, row in enumerate(nearest)]

        rng = substream(seed, f"smote/{cls}")
        original_label = labels[int(positions[0])]
        for _ in range(needed):
            p = int(rng.integers(count))
            q = int(own[p][rng.integers(k_eff)])
            gap = rng.random()
            synthetic_rows.append(points[p] + gap * (points[q] - points[p]))
            synthetic_labels.append(original_label)
        logger.debug("Oversampled class", extra={"class": str(cls), "synthetic": needed, "k": k_eff})

    if not synthetic_rows:
        return data.copy(), labels
    return np.vstack([data, np.asarray(synthetic_rows)]), labels + synthetic_labels


def make_blobs_table(
    n_rows: int = 600,
    n_features: int = 16,
    n_classes: int = 3,
    std: float = 1.0,
    seed: int = 0,
    noise_features: int = 0,
) -> DataTable:
    """Build a synthetic table of isotropic Gaussian blobs with a label column.

    Args:
        n_rows (int): Number of rows
        n_features (int): Number of numeric features
        n_classes (int): Number of blobs
        std (float): Blob standard deviation
        seed (int): Generator seed
        noise_features (int): Trailing features drawn from N(0, std²) for every class

    Returns:
        DataTable: Columns f0..f{n_features-1} plus "label"
    """
    if n_rows < 2 or n_features < 1 or n_classes < 2 or std <= 0 or not (0 <= noise_features < n_features):
        raise InvalidValue(
            f"invalid blob settings: rows={n_rows}, features={n_features}, classes={n_classes}, std={std}, "
            f"noise_features={noise_features}"
        )
    x, y = make_blobs(
        n_samples=n_rows,
        n_features=n_features - noise_features,
        centers=n_classes,
        cluster_std=std,
        random_state=substream_seed(seed, "blobs"),
    )
    if noise_features:
        x = np.hstack([x, substream(seed, "blob-noise").normal(0.0, std, size=(n_rows, noise_features))])
    columns = [Column(f"f{i}", NUMERIC, [float(v) for v in x[:, i]]) for i in range(n_features)]
    columns.append(Column("label", CATEGORICAL, [str(int(v)) for v in y]))
    return DataTable(columns, label_column="label")
