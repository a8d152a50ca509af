"""
One run end to end: train a latent model on a dataset, then measure it.

``Experiment.run`` trains and writes the checkpoint, the loss curve and the
resolved config; ``Experiment.evaluate`` writes the alignment report and
``Experiment.fit_heads`` the few-shot head table. The CLI commands and every
sweep cell go through these same steps, which is what makes a singleton sweep
reproduce train + analyze exactly.
"""
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ibac.checkpoint import STATUS_DIVERGED, STATUS_OK, save_checkpoint
from ibac.config import HEAD_KINDS, BinningConfig, HeadConfig, RunConfig, dump_config
from ibac.envs.dataset import TransitionDataset, offset_pairs
from ibac.errors import DivergenceError, ShapeError
from ibac.heads import (FewShotSplit, build_codebook, evaluate_head, evaluate_index_head, fit_direct,
                        fit_index_head, fit_mean)
from ibac.logs import get_logger
from ibac.metrics.alignment import FLOAT_FORMAT, AlignmentReport, alignment_report
from ibac.models.base import LatentActionModel
from ibac.trainer import TrainResult, Trainer, init_model

logger = get_logger(__name__)

CHECKPOINT_FILE = "checkpoint.ibac"
CURVE_FILE = "loss_curve.csv"
CONFIG_FILE = "run_config.yaml"
ALIGNMENT_STEM = "alignment"
HEADS_FILE = "heads.csv"


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def prepare_dataset(dataset: TransitionDataset, config: RunConfig) -> TransitionDataset:
    """The dataset re-paired at the run's offset and label reduction."""
    if dataset.offset == config.offset and dataset.label_reduction == config.label_reduction:
        return dataset
    return offset_pairs(dataset, config.offset, config.label_reduction)


def analyze(model: LatentActionModel, dataset: TransitionDataset,
            binning: BinningConfig = BinningConfig()) -> AlignmentReport:
    if model.d_obs != dataset.d_obs:
        raise ShapeError(f"model expects d_obs={model.d_obs}, dataset has d_obs={dataset.d_obs}")
    pairs = dataset.observation_pairs()
    return alignment_report(model.extract_latents(pairs.obs_t, pairs.obs_next), dataset.actions, binning)


def fit_heads(model: LatentActionModel, dataset: TransitionDataset, config: HeadConfig = HeadConfig(),
              kinds: Iterable[str] = HEAD_KINDS, ms: Optional[Sequence[int]] = None) -> Tuple[pd.DataFrame, Dict]:
    """
    Fit and score every head kind for every M under nested splits drawn from
    ``config.seed``. Returns one row per (head, M) and the fitted heads keyed
    the same way.
    """
    if model.d_obs != dataset.d_obs:
        raise ShapeError(f"model expects d_obs={model.d_obs}, dataset has d_obs={dataset.d_obs}")
    kinds = list(kinds)
    ms = sorted(set(ms or [config.m]))
    pairs = dataset.observation_pairs()
    latents = model.extract_latents(pairs.obs_t, pairs.obs_next)
    actions = dataset.actions
    base = FewShotSplit.draw(len(dataset), ms[-1], config.seed, config.eval_fraction)

    codebook = assignments = None
    if "index" in kinds:
        codebook = build_codebook(latents, config.n_codes, config.seed, config.kmeans_max_iter)
        assignments = codebook.assign(latents)

    rows, heads = [], {}
    for m in ms:
        split = base.nested(m)
        for kind in kinds:
            row = {"head": kind, "m": m, "n_eval": int(split.held_out.size), "train_mse": np.nan,
                   "index_accuracy": np.nan, "fallback_codes": 0}
            if kind == "direct":
                fit = fit_direct(latents, actions, split, config)
                head, evaluation, row["train_mse"] = fit.head, fit.evaluation, fit.train_mse
            elif kind == "scratch":
                fit = fit_direct(pairs.stacked(), actions, split, config, kind="scratch")
                head, evaluation, row["train_mse"] = fit.head, fit.evaluation, fit.train_mse
            elif kind == "mean":
                head = fit_mean(actions, split)
                evaluation = evaluate_head(head, latents, actions, split.held_out)
            else:
                head = fit_index_head(latents, assignments, codebook, actions[split.labeled], split, config)
                fit = evaluate_index_head(head, latents, assignments, actions, split)
                evaluation = fit.evaluation
                row["index_accuracy"] = fit.index_accuracy
                row["fallback_codes"] = int(head.fallback.sum())
            row["mse"] = evaluation.mse
            row.update({f"mse_a{j}": v for j, v in enumerate(evaluation.per_channel_mse)})
            rows.append(row)
            heads[(kind, m)] = head
    columns = ["head", "m", "mse", *[f"mse_a{j}" for j in range(dataset.d_a)], "train_mse", "index_accuracy",
               "fallback_codes", "n_eval"]
    return pd.DataFrame(rows, columns=columns), heads


class Experiment:
    def __init__(self, config: RunConfig, dataset: TransitionDataset, out_dir=None, show_progress: bool = True):
        self.config = config
        self.dataset = prepare_dataset(dataset, config)
        self.out_dir = Path(out_dir) if out_dir is not None else config.run_dir
        self.show_progress = show_progress

        self.result: Optional[TrainResult] = None
        self.report: Optional[AlignmentReport] = None
        self.heads_df = pd.DataFrame()

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / CHECKPOINT_FILE

    def _save(self, result: TrainResult, status: str):
        cfg = self.config
        save_checkpoint(result.model, self.checkpoint_path, config=cfg.to_dict(), final_losses=result.final_losses,
                        seed=cfg.train.seed, status=status,
                        extra={"offset": cfg.offset, "label_reduction": cfg.label_reduction,
                               "epochs_completed": len(result.curve)})
        write_csv(result.curve, self.out_dir / CURVE_FILE)

    def run(self) -> TrainResult:
        cfg = self.config
        self.out_dir.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, self.out_dir / CONFIG_FILE)
        model = init_model(cfg.model_kind, self.dataset.d_obs, cfg.model, cfg.train)
        logger.info("training %s on %s", model, self.dataset)
        try:
            self.result = Trainer(model, cfg.train, self.show_progress).run(self.dataset.observation_pairs())
        except DivergenceError as exc:
            if exc.last_good is not None:
                self._save(exc.last_good, STATUS_DIVERGED)
                logger.error("partial checkpoint written to %s", self.checkpoint_path)
            raise
        self._save(self.result, STATUS_OK)
        return self.result

    def evaluate(self) -> AlignmentReport:
        if self.result is None:
            raise RuntimeError("call run() before evaluate()")
        self.report = analyze(self.result.model, self.dataset, self.config.binning)
        self.report.save(self.out_dir, ALIGNMENT_STEM)
        return self.report

    def fit_heads(self, kinds: Iterable[str] = HEAD_KINDS, ms: Optional[Sequence[int]] = None) -> pd.DataFrame:
        if self.result is None:
            raise RuntimeError("call run() before fit_heads()")
        self.heads_df, _ = fit_heads(self.result.model, self.dataset, self.config.head, kinds, ms)
        write_csv(self.heads_df, self.out_dir / HEADS_FILE)
        return self.heads_df
