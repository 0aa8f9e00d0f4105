"""Design-based per-region prevalence estimation under multistage cluster sampling.

The point estimate is the Hájek weighted ratio ``sum(w*y) / sum(w)``. Its
variance comes from ultimate-cluster Taylor linearization: with per-cluster
weighted residual totals ``z_c = sum_{k in c} w_k (y_k - p_hat)`` and total
weight ``W``, the estimate over ``m`` clusters is

    var_p = [m / (m - 1)] * sum_c z_c**2 / W**2

(per stratum, summed, when a stratum column is present). The logit-scale
transform uses the delta method: ``var_logit = var_p / (p*(1-p))**2``.

Regions where the transform or the variance is undefined are flagged, never
silently zeroed: ``all_zero`` / ``all_one`` when p_hat hits the boundary,
``single_cluster`` when only one cluster was observed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .data_model import IndividualRecord, SurveyDataset, _data_lines
from .errors import EmptyDatasetError, SchemaError

# degeneracy flags
NONE = "none"
ALL_ZERO = "all_zero"
ALL_ONE = "all_one"
SINGLE_CLUSTER = "single_cluster"

DIRECT_CSV_COLUMNS = (
    "region_id",
    "n",
    "m_clusters",
    "p_hat",
    "var_p",
    "logit_y",
    "var_logit",
    "degenerate",
)


@dataclass(frozen=True)
class DirectEstimate:
    """Per-region design-based prevalence with logit-scale transform."""

    region_id: str
    p_hat: float
    var_p: float
    logit_y: float
    var_logit: float
    n: int
    m_clusters: int
    degenerate: str = NONE

    @property
    def se_p(self) -> float:
        return math.sqrt(self.var_p) if self.var_p >= 0 else float("nan")

    @property
    def likelihood_usable(self) -> bool:
        return self.degenerate == NONE


def direct_prevalence(records: Sequence[IndividualRecord]) -> float:
    """Hájek ratio estimate of prevalence for one region's records."""
    if not records:
        raise EmptyDatasetError("cannot estimate prevalence from zero records")
    regions = {r.region_id for r in records}
    if len(regions) != 1:
        raise ValueError(f"records span multiple regions: {sorted(regions)}")
    num = sum(r.weight * r.outcome for r in records)
    den = sum(r.weight for r in records)
    return num / den


def direct_variance(records: Sequence[IndividualRecord], p_hat: float) -> float:
    """Ultimate-cluster linearized variance of the Hájek estimate.

    Returns NaN when any stratum holds a single cluster (inestimable);
    callers flag such regions instead of treating the variance as zero.
    """
    if not records:
        raise EmptyDatasetError("cannot estimate variance from zero records")
    total_weight = sum(r.weight for r in records)
    by_stratum: dict[str, dict[str, float]] = {}
    for r in records:
        clusters = by_stratum.setdefault(r.stratum, {})
        clusters[r.cluster_id] = clusters.get(r.cluster_id, 0.0) + r.weight * (
            r.outcome - p_hat
        )
    acc = 0.0
    for clusters in by_stratum.values():
        m = len(clusters)
        if m < 2:
            return float("nan")
        acc += m / (m - 1) * sum(z * z for z in clusters.values())
    return acc / total_weight**2


def logit_transform(p_hat: float, var_p: float) -> tuple[float, float]:
    """Logit of p_hat and its delta-method variance.

    Boundary estimates (p_hat of exactly 0 or 1) have no finite logit; the
    transform is withheld and ``(nan, nan)`` returned so the region can be
    model-predicted downstream.
    """
    if not 0.0 < p_hat < 1.0:
        return float("nan"), float("nan")
    logit_y = math.log(p_hat / (1.0 - p_hat))
    var_logit = var_p / (p_hat * (1.0 - p_hat)) ** 2
    return logit_y, var_logit


def estimate_region(region_id: str, records: Sequence[IndividualRecord]) -> DirectEstimate:
    p_hat = direct_prevalence(records)
    m_clusters = len({r.cluster_id for r in records})
    if p_hat == 0.0:
        flag = ALL_ZERO
    elif p_hat == 1.0:
        flag = ALL_ONE
    elif m_clusters < 2:
        flag = SINGLE_CLUSTER
    else:
        flag = NONE
    var_p = direct_variance(records, p_hat)
    if flag == SINGLE_CLUSTER or math.isnan(var_p):
        var_p = float("nan")
        flag = flag if flag != NONE else SINGLE_CLUSTER
    if flag == NONE:
        logit_y, var_logit = logit_transform(p_hat, var_p)
    else:
        logit_y, var_logit = float("nan"), float("nan")
    return DirectEstimate(
        region_id=region_id,
        p_hat=p_hat,
        var_p=var_p,
        logit_y=logit_y,
        var_logit=var_logit,
        n=len(records),
        m_clusters=m_clusters,
        degenerate=flag,
    )


def estimate_all(dataset: SurveyDataset) -> list[DirectEstimate]:
    """One DirectEstimate per region, sorted by region_id.

    Per-region degeneracies become flags on the estimate; the batch never
    aborts because of them.
    """
    grouped = dataset.records_by_region()
    return [estimate_region(rid, recs) for rid, recs in sorted(grouped.items())]


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------


def write_direct_csv(
    estimates: Sequence[DirectEstimate],
    path: str | Path,
    metadata: Mapping[str, str] | None = None,
) -> None:
    with Path(path).open("w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIRECT_CSV_COLUMNS)
        for e in estimates:
            writer.writerow(
                [
                    e.region_id,
                    str(e.n),
                    str(e.m_clusters),
                    repr(e.p_hat),
                    repr(e.var_p),
                    repr(e.logit_y),
                    repr(e.var_logit),
                    e.degenerate,
                ]
            )


def read_direct_csv(path: str | Path) -> list[DirectEstimate]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"direct-estimates file not found: {path}")
    reader = csv.reader(_data_lines(path))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != DIRECT_CSV_COLUMNS:
        raise SchemaError(f"{path}: unexpected direct-estimates header {header}")
    out = []
    for row in reader:
        rid, n, m, p_hat, var_p, logit_y, var_logit, flag = row
        out.append(
            DirectEstimate(
                region_id=rid,
                p_hat=float(p_hat),
                var_p=float(var_p),
                logit_y=float(logit_y),
                var_logit=float(var_logit),
                n=int(n),
                m_clusters=int(m),
                degenerate=flag,
            )
        )
    return out
