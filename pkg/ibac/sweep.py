"""
beta / offset sweeps over (model kind, beta, k, seed) cells.

Datasets are generated once per seed and shared by every cell with that seed.
Each cell writes its own directory under ``<out>/cells`` and returns one row;
a failing cell is recorded with its status and the sweep carries on. Rows are
sorted by key before anything is written, so serial and parallel execution
produce the same files.
"""
import dataclasses
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd
from tqdm import tqdm

from ibac.config import MODEL_KINDS, RunConfig, SweepConfig, dump_config
from ibac.envs.dataset import generate, load_dataset, save_dataset
from ibac.errors import DivergenceError, FormatError, IbacError
from ibac.experiment import Experiment, write_csv
from ibac.logs import get_logger
from ibac.tensor_core import MASK64, derive_seed

logger = get_logger(__name__)

RESULTS_FILE = "sweep_results.csv"
REPORT_FILE = "sweep_report.csv"
KEY_COLUMNS = ["kind", "beta", "offset", "seed"]
HEAD_COLUMNS = ["direct_mse", "scratch_mse", "index_mse", "index_accuracy", "mean_mse"]


def result_columns(d_a: int) -> List[str]:
    return (KEY_COLUMNS + ["status", "loss_total", "loss_rec", "loss_kl", "mean_max_pearson", "mean_max_ratio"]
            + [f"max_pearson_a{j}" for j in range(d_a)] + [f"max_ratio_a{j}" for j in range(d_a)]
            + HEAD_COLUMNS + ["error"])


@dataclass(frozen=True)
class SweepCell:
    kind: str
    beta: float
    offset: int
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.kind}_beta{self.beta!r}_k{self.offset}_seed{self.seed}"

    def sort_key(self):
        return MODEL_KINDS.index(self.kind), self.beta, self.offset, self.seed

    def train_seed(self, base_seed: int) -> int:
        """Hash of the base seed and the cell key; adding grid points leaves other cells alone."""
        return derive_seed(base_seed, self.kind, float(self.beta), self.offset, self.seed) & MASK64

    def run_config(self, base: RunConfig, out_dir) -> RunConfig:
        return dataclasses.replace(
            base, run_id=self.cell_id, model_kind=self.kind, offset=self.offset,
            out_dir=str(Path(out_dir) / "cells"),
            env=dataclasses.replace(base.env, seed=self.seed),
            train=dataclasses.replace(base.train, beta=float(self.beta), seed=self.train_seed(base.train.seed)),
        ).validate()


def sweep_cells(config: SweepConfig) -> List[SweepCell]:
    cells = [SweepCell(kind, float(beta), int(k), int(seed))
             for kind in config.kinds for beta in config.beta_grid
             for k in config.offset_grid for seed in config.seeds]
    return sorted(cells, key=SweepCell.sort_key)


def dataset_path(out_dir, seed: int) -> Path:
    return Path(out_dir) / "datasets" / f"seed_{seed}.ibds"


def prepare_datasets(config: SweepConfig, out_dir) -> None:
    for seed in config.seeds:
        env = dataclasses.replace(config.base.env, seed=int(seed))
        save_dataset(generate(env), dataset_path(out_dir, seed))


def run_cell(cell: SweepCell, base: RunConfig, out_dir, fit_heads: bool = True) -> dict:
    """Train, analyze and (optionally) fit heads for one cell. Never raises for cell failures."""
    d_a = base.env.action_dim
    row = {c: np.nan for c in result_columns(d_a)}
    row.update(kind=cell.kind, beta=cell.beta, offset=cell.offset, seed=cell.seed, status="ok", error="")
    config = cell.run_config(base, out_dir)
    try:
        experiment = Experiment(config, load_dataset(dataset_path(out_dir, cell.seed)), show_progress=False)
        result = experiment.run()
        losses = result.final_losses
        if losses is not None:
            row.update(loss_total=losses.total, loss_rec=losses.rec, loss_kl=losses.kl)
        report = experiment.evaluate()
        row.update(mean_max_pearson=report.mean_max_pearson, mean_max_ratio=report.mean_max_ratio)
        row.update({f"max_pearson_a{j}": v for j, v in enumerate(report.max_pearson_per_channel)})
        row.update({f"max_ratio_a{j}": v for j, v in enumerate(report.max_ratio_per_channel)})
        if fit_heads:
            heads = experiment.fit_heads()
            for _, h in heads.iterrows():
                row[f"{h['head']}_mse"] = h["mse"]
                if h["head"] == "index":
                    row["index_accuracy"] = h["index_accuracy"]
    except DivergenceError as exc:
        row.update(status="diverged", error=str(exc))
    except IbacError as exc:
        row.update(status="failed", error=str(exc))
    except Exception as exc:  # keep the sweep alive; the row carries the failure
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    if row["status"] != "ok":
        logger.warning("cell %s %s: %s", cell.cell_id, row["status"], row["error"])
    return row


@dataclass
class SweepResult:
    frame: pd.DataFrame

    @property
    def failures(self) -> int:
        return int((self.frame["status"] != "ok").sum())

    def to_csv(self, path) -> Path:
        return write_csv(self.frame, path)

    def aggregate(self) -> pd.DataFrame:
        return aggregate(self.frame)


def _sorted_frame(rows: List[dict], d_a: int) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=result_columns(d_a))
    frame["kind_order"] = frame["kind"].map(MODEL_KINDS.index)
    frame = frame.sort_values(["kind_order", "beta", "offset", "seed"], kind="stable")
    return frame.drop(columns="kind_order").reset_index(drop=True)


def run_sweep(config: SweepConfig, out_dir, show_progress: bool = True) -> SweepResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / "sweep_config.yaml")
    prepare_datasets(config, out_dir)

    cells = sweep_cells(config)
    workers = config.effective_parallelism()
    logger.info("sweep: %d cells, %d worker(s), output in %s", len(cells), workers, out_dir)
    bar = tqdm(total=len(cells), desc="sweep", unit="cell", disable=not show_progress)
    rows = []
    if workers == 1:
        for cell in cells:
            rows.append(run_cell(cell, config.base, out_dir, config.fit_heads))
            bar.update()
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, cell, config.base, out_dir, config.fit_heads) for cell in cells]
            for future in as_completed(futures):
                rows.append(future.result())
                bar.update()
    bar.close()

    result = SweepResult(_sorted_frame(rows, config.base.env.action_dim))
    result.to_csv(out_dir / RESULTS_FILE)
    if result.failures:
        logger.warning("sweep: %d of %d cells did not finish", result.failures, len(cells))
    return result


def metric_columns(frame: pd.DataFrame) -> List[str]:
    skip = set(KEY_COLUMNS) | {"status", "error"}
    return [c for c in frame.columns if c not in skip]


def aggregate(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and population std over seeds of every metric, per (kind, beta,
    offset), from the rows with status ok. Per-channel maxima give the
    per-dimension series, mean_max_* the across-dimension mean.
    """
    missing = [c for c in KEY_COLUMNS + ["status", "mean_max_pearson", "mean_max_ratio"] if c not in frame.columns]
    if missing:
        raise FormatError(f"sweep results are missing columns {missing}")
    ok = frame[frame["status"] == "ok"]
    metrics = metric_columns(frame)
    keys = ["kind", "beta", "offset"]
    grouped = ok.groupby(keys, sort=False)[metrics]
    means = grouped.mean().add_suffix("_mean")
    stds = grouped.std(ddof=0).add_suffix("_std")
    counts = ok.groupby(keys, sort=False).size().rename("n_seeds")
    out = pd.concat([counts, means, stds], axis=1).reset_index()
    ordered = ["n_seeds"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")]
    out["kind_order"] = out["kind"].map(lambda k: MODEL_KINDS.index(k) if k in MODEL_KINDS else len(MODEL_KINDS))
    out = out.sort_values(["kind_order", "beta", "offset"], kind="stable").drop(columns="kind_order")
    return out[keys + ordered].reset_index(drop=True)


def read_results(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, keep_default_na=True, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise FormatError(f"{path}: cannot read sweep results ({exc})")
    if "error" in frame.columns:
        frame["error"] = frame["error"].fillna("")
    return frame


def report(results_path, out_path=None) -> pd.DataFrame:
    out = aggregate(read_results(results_path))
    write_csv(out, out_path or Path(results_path).with_name(REPORT_FILE))
    return out
