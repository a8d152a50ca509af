"""
Latent/action alignment: |Pearson r| and plug-in MI capture ratio for every
(latent dimension i, action channel j) pair, plus the per-channel maxima
reported as the headline numbers.
"""
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from ibac.config import BinningConfig, plain
from ibac.errors import DegenerateCorrelationError, FormatError, ShapeError
from ibac.metrics.info import (bin_indices, entropy_from_indices, mutual_information_from_indices,
                               pearson)
from ibac.tensor_core import as_matrix

CSV_COLUMNS = ["i", "j", "abs_pearson", "mi_nats", "h_nats", "ratio", "degenerate_flag"]
FLOAT_FORMAT = "%.17g"

# degenerate_flag bits
PEARSON_DEGENERATE = 1
ZERO_ENTROPY = 2


class AlignmentMetric(ABC):
    """
    A metric only reads latents and actions and returns one D_z x D_a matrix.
    """
    name = ""

    @abstractmethod
    def compute(self, latents: np.ndarray, actions: np.ndarray):
        pass


class PearsonAlignment(AlignmentMetric):
    name = "pearson"

    def compute(self, latents, actions) -> Tuple[np.ndarray, np.ndarray]:
        """|r| matrix and the mask of cells where r is undefined (recorded as 0)."""
        d_z, d_a = latents.shape[1], actions.shape[1]
        values = np.zeros((d_z, d_a))
        degenerate = np.zeros((d_z, d_a), dtype=bool)
        for i in range(d_z):
            for j in range(d_a):
                try:
                    values[i, j] = abs(pearson(latents[:, i], actions[:, j]))
                except DegenerateCorrelationError:
                    degenerate[i, j] = True
        return values, degenerate


class MutualInformationAlignment(AlignmentMetric):
    name = "mutual_information"

    def __init__(self, binning: BinningConfig = BinningConfig()):
        self.binning = binning

    def compute(self, latents, actions) -> Tuple[np.ndarray, np.ndarray]:
        """MI matrix in nats and the action entropies H(a_j)."""
        n_bins = self.binning.n_bins
        z_bins = [bin_indices(latents[:, i], self.binning) for i in range(latents.shape[1])]
        a_bins = [bin_indices(actions[:, j], self.binning) for j in range(actions.shape[1])]
        mi = np.array([[mutual_information_from_indices(zi, aj, n_bins) for aj in a_bins] for zi in z_bins])
        h = np.array([entropy_from_indices(aj, n_bins) for aj in a_bins])
        return mi.reshape(len(z_bins), len(a_bins)), h


@dataclass
class AlignmentReport:
    pearson_abs: np.ndarray
    pearson_degenerate: np.ndarray
    mi_nats: np.ndarray
    mi_ratio: np.ndarray
    entropy: np.ndarray
    binning: BinningConfig
    n_samples: int

    @property
    def d_z(self) -> int:
        return self.pearson_abs.shape[0]

    @property
    def d_a(self) -> int:
        return self.pearson_abs.shape[1]

    @property
    def degenerate_channels(self) -> np.ndarray:
        """Action channels with H(a_j) = 0; their ratios are excluded from maxima."""
        return self.entropy <= 0

    @property
    def max_pearson_per_channel(self) -> np.ndarray:
        return self.pearson_abs.max(axis=0)

    @property
    def max_ratio_per_channel(self) -> np.ndarray:
        return np.where(self.degenerate_channels, np.nan, self.mi_ratio.max(axis=0))

    @property
    def mean_max_pearson(self) -> float:
        return float(np.mean(self.max_pearson_per_channel))

    @property
    def mean_max_ratio(self) -> float:
        ratios = self.max_ratio_per_channel
        if np.isnan(ratios).all():
            return float("nan")
        return float(np.nanmean(ratios))

    def flags(self) -> np.ndarray:
        return (self.pearson_degenerate * PEARSON_DEGENERATE
                + np.broadcast_to(self.degenerate_channels, self.pearson_abs.shape) * ZERO_ENTROPY).astype(np.int64)

    def to_frame(self) -> pd.DataFrame:
        ii, jj = np.meshgrid(np.arange(self.d_z), np.arange(self.d_a), indexing="ij")
        return pd.DataFrame({
            "i": ii.ravel(),
            "j": jj.ravel(),
            "abs_pearson": self.pearson_abs.ravel(),
            "mi_nats": self.mi_nats.ravel(),
            "h_nats": np.broadcast_to(self.entropy, self.pearson_abs.shape).ravel(),
            "ratio": self.mi_ratio.ravel(),
            "degenerate_flag": self.flags().ravel(),
        }, columns=CSV_COLUMNS)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return path

    def to_dict(self) -> dict:
        def floats(a):
            return [None if np.isnan(v) else float(v) for v in np.asarray(a, dtype=np.float64).ravel()]

        return {
            "n_samples": self.n_samples,
            "d_z": self.d_z,
            "d_a": self.d_a,
            "binning": plain(self.binning),
            "pearson_abs": [[float(v) for v in row] for row in self.pearson_abs],
            "pearson_degenerate": self.pearson_degenerate.astype(int).tolist(),
            "mi_nats": [[float(v) for v in row] for row in self.mi_nats],
            "mi_ratio": [[float(v) for v in row] for row in self.mi_ratio],
            "entropy": floats(self.entropy),
            "degenerate_channels": self.degenerate_channels.astype(int).tolist(),
            "max_pearson_per_channel": floats(self.max_pearson_per_channel),
            "max_ratio_per_channel": floats(self.max_ratio_per_channel),
            "mean_max_pearson": self.mean_max_pearson,
            "mean_max_ratio": None if np.isnan(self.mean_max_ratio) else self.mean_max_ratio,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def save(self, out_dir, stem: str = "alignment") -> Tuple[Path, Path]:
        out_dir = Path(out_dir)
        return self.to_csv(out_dir / f"{stem}.csv"), self.to_json(out_dir / f"{stem}.json")

    @classmethod
    def from_csv(cls, path, binning: BinningConfig = BinningConfig(), n_samples: int = 0) -> "AlignmentReport":
        try:
            df = pd.read_csv(path, float_precision="round_trip")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise FormatError(f"{path}: cannot read alignment CSV ({exc})")
        missing = [c for c in CSV_COLUMNS if c not in df.columns]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        d_z, d_a = int(df["i"].max()) + 1, int(df["j"].max()) + 1
        if len(df) != d_z * d_a:
            raise FormatError(f"{path}: expected {d_z * d_a} rows for a {d_z}x{d_a} report, got {len(df)}")
        df = df.sort_values(["i", "j"])

        def grid(col):
            return df[col].to_numpy(dtype=np.float64).reshape(d_z, d_a)

        flags = df["degenerate_flag"].to_numpy(dtype=np.int64).reshape(d_z, d_a)
        return cls(pearson_abs=grid("abs_pearson"), pearson_degenerate=(flags & PEARSON_DEGENERATE) > 0,
                   mi_nats=grid("mi_nats"), mi_ratio=grid("ratio"), entropy=grid("h_nats")[0],
                   binning=binning, n_samples=n_samples)


def alignment_report(latents, actions, binning: BinningConfig = BinningConfig()) -> AlignmentReport:
    """
    Fill both D_z x D_a matrices. Ratio I(z_i; a_j) / H(a_j) is 0 and flagged
    for channels with zero entropy; those channels are left out of the ratio
    maxima.
    """
    latents = as_matrix(latents, name="latents")
    actions = as_matrix(actions, name="actions")
    if latents.shape[0] != actions.shape[0]:
        raise ShapeError(f"latents have {latents.shape[0]} rows, actions have {actions.shape[0]}")
    if latents.shape[1] < 1 or actions.shape[1] < 1:
        raise ShapeError(f"need D_z, D_a >= 1, got latents {latents.shape}, actions {actions.shape}")
    if latents.shape[0] < 2:
        raise ShapeError("alignment needs at least 2 samples")

    pearson_abs, pearson_degenerate = PearsonAlignment().compute(latents, actions)
    mi, h = MutualInformationAlignment(binning).compute(latents, actions)
    safe_h = np.where(h > 0, h, 1.0)
    ratio = np.where(h > 0, mi / safe_h, 0.0)
    return AlignmentReport(pearson_abs=pearson_abs, pearson_degenerate=pearson_degenerate, mi_nats=mi,
                           mi_ratio=ratio, entropy=h, binning=binning, n_samples=latents.shape[0])
