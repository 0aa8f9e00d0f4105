"""Domain types and validated ingestion of survey records and region boundaries.

Records arrive as CSV (one row per surveyed individual), boundaries as a
GeoJSON FeatureCollection. Both loaders validate every invariant up front and
raise a diagnostic instead of ever returning a partial dataset. Loaded
datasets are treated as immutable.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    ConsistencyError,
    EmptyDatasetError,
    GeometryError,
    RecordValidationError,
    SchemaError,
)

log = logging.getLogger(__name__)

# canonical record columns; a schema map may rename any of them
RECORD_COLUMNS = ("region_id", "cluster_id", "weight", "outcome")
OPTIONAL_RECORD_COLUMNS = ("stratum",)

# ring vertex = (longitude, latitude) in degrees
Ring = tuple[tuple[float, float], ...]
Polygon = tuple[Ring, ...]


@dataclass(frozen=True)
class IndividualRecord:
    """One surveyed person: region, cluster, design weight, binary outcome."""

    region_id: str
    cluster_id: str
    weight: float
    outcome: int
    stratum: str = ""

    def validate(self) -> None:
        if not (math.isfinite(self.weight) and self.weight > 0):
            raise RecordValidationError(
                f"weight must be positive and finite, got {self.weight!r}"
            )
        if self.outcome not in (0, 1):
            raise RecordValidationError(f"outcome must be 0 or 1, got {self.outcome!r}")


@dataclass(frozen=True)
class RegionBoundary:
    """A named region with polygon/multipolygon geometry in lon/lat degrees."""

    region_id: str
    geometry: tuple[Polygon, ...]
    country: str = ""

    def validate(self) -> None:
        if not self.geometry or all(len(poly) == 0 for poly in self.geometry):
            raise GeometryError(f"region {self.region_id!r} has no rings")
        for poly in self.geometry:
            for ring in poly:
                if len(ring) < 4:
                    raise GeometryError(
                        f"region {self.region_id!r}: ring has {len(ring)} points, need >= 4"
                    )
                if ring[0] != ring[-1]:
                    raise GeometryError(f"region {self.region_id!r}: ring is not closed")


@dataclass
class SurveyDataset:
    """Validated records plus the boundaries they link to."""

    records: list[IndividualRecord]
    regions: list[RegionBoundary]
    provenance: str = ""

    def region_ids(self) -> list[str]:
        return sorted(b.region_id for b in self.regions)

    def records_by_region(self) -> dict[str, list[IndividualRecord]]:
        grouped: dict[str, list[IndividualRecord]] = {rid: [] for rid in self.region_ids()}
        for rec in self.records:
            grouped[rec.region_id].append(rec)
        return grouped


@dataclass(frozen=True)
class DropReport:
    """Outcome of removing records without a matching boundary."""

    n_input: int
    n_dropped: int

    @property
    def retained_fraction(self) -> float:
        return (self.n_input - self.n_dropped) / self.n_input if self.n_input else 0.0


def validate_dataset(dataset: SurveyDataset) -> None:
    """Check all SurveyDataset invariants; raise on the first violation."""
    known = {b.region_id for b in dataset.regions}
    if len(known) != len(dataset.regions):
        raise ConsistencyError("duplicate region_id in boundary list")
    if len(known) < 2:
        raise EmptyDatasetError(f"need at least 2 regions, have {len(known)}")
    for b in dataset.regions:
        b.validate()
    seen_regions: set[str] = set()
    cluster_region: dict[str, str] = {}
    for i, rec in enumerate(dataset.records, start=1):
        try:
            rec.validate()
        except RecordValidationError as exc:
            raise RecordValidationError(f"record {i}: {exc}") from None
        if rec.region_id not in known:
            raise ConsistencyError(
                f"record {i}: region_id {rec.region_id!r} has no boundary"
            )
        prior = cluster_region.setdefault(rec.cluster_id, rec.region_id)
        if prior != rec.region_id:
            raise ConsistencyError(
                f"cluster {rec.cluster_id!r} mapped to two regions "
                f"({prior!r} and {rec.region_id!r})"
            )
        seen_regions.add(rec.region_id)
    missing = known - seen_regions
    if missing:
        raise EmptyDatasetError(
            f"regions without any record: {', '.join(sorted(missing))}"
        )


# ---------------------------------------------------------------------------
# CSV records
# ---------------------------------------------------------------------------


def _data_lines(path: Path) -> Iterable[str]:
    """Yield file lines with '#' comment lines and blank lines removed."""
    with path.open("r", newline="") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            yield line


def load_records(
    path: str | Path, schema: Mapping[str, str] | None = None
) -> list[IndividualRecord]:
    """Read and validate individual records from a CSV file.

    ``schema`` maps canonical column names (``region_id``, ``cluster_id``,
    ``weight``, ``outcome``, optionally ``stratum``) to the actual header
    names in the file. Extra columns are ignored.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"records file not found: {path}")
    mapping = dict(schema or {})
    reader = csv.reader(_data_lines(path))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"records file {path} is empty") from None
    header = [h.strip() for h in header]

    col_idx: dict[str, int] = {}
    for canonical in RECORD_COLUMNS:
        actual = mapping.get(canonical, canonical)
        if actual not in header:
            raise SchemaError(
                f"missing column {actual!r} (for {canonical!r}) in {path}"
            )
        col_idx[canonical] = header.index(actual)
    for canonical in OPTIONAL_RECORD_COLUMNS:
        actual = mapping.get(canonical, canonical)
        if actual in header:
            col_idx[canonical] = header.index(actual)

    records: list[IndividualRecord] = []
    cluster_region: dict[str, str] = {}
    for row_no, row in enumerate(reader, start=1):
        try:
            region_id = row[col_idx["region_id"]].strip()
            cluster_id = row[col_idx["cluster_id"]].strip()
            weight = float(row[col_idx["weight"]])
            raw_outcome = float(row[col_idx["outcome"]])
        except (IndexError, ValueError) as exc:
            raise RecordValidationError(f"row {row_no}: unparseable row ({exc})") from None
        if raw_outcome not in (0.0, 1.0):
            raise RecordValidationError(
                f"row {row_no}: outcome must be 0 or 1, got {row[col_idx['outcome']]!r}"
            )
        stratum = row[col_idx["stratum"]].strip() if "stratum" in col_idx else ""
        rec = IndividualRecord(region_id, cluster_id, weight, int(raw_outcome), stratum)
        try:
            rec.validate()
        except RecordValidationError as exc:
            raise RecordValidationError(f"row {row_no}: {exc}") from None
        prior = cluster_region.setdefault(cluster_id, region_id)
        if prior != region_id:
            raise ConsistencyError(
                f"cluster {cluster_id!r} mapped to two regions ({prior!r} and {region_id!r})"
            )
        records.append(rec)
    log.info("loaded %d records from %s", len(records), path)
    return records


def write_records_csv(
    records: Sequence[IndividualRecord],
    path: str | Path,
    metadata: Mapping[str, str] | None = None,
) -> None:
    path = Path(path)
    has_stratum = any(r.stratum for r in records)
    with path.open("w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        cols = list(RECORD_COLUMNS) + (["stratum"] if has_stratum else [])
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for r in records:
            row = [r.region_id, r.cluster_id, repr(r.weight), str(r.outcome)]
            if has_stratum:
                row.append(r.stratum)
            writer.writerow(row)


# ---------------------------------------------------------------------------
# GeoJSON boundaries
# ---------------------------------------------------------------------------


def _as_ring(coords: Sequence[Sequence[float]], feature: str) -> Ring:
    try:
        ring = tuple((float(x), float(y)) for x, y, *_ in coords)
    except (TypeError, ValueError) as exc:
        raise GeometryError(f"feature {feature!r}: bad ring coordinates ({exc})") from None
    if len(ring) < 4:
        raise GeometryError(f"feature {feature!r}: ring has {len(ring)} points, need >= 4")
    if ring[0] != ring[-1]:
        raise GeometryError(f"feature {feature!r}: unclosed ring")
    return ring


def load_boundaries(path: str | Path) -> list[RegionBoundary]:
    """Read region boundaries from a GeoJSON FeatureCollection."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"boundaries file not found: {path}")
    with path.open("r") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise SchemaError(f"{path}: expected a FeatureCollection, got {doc.get('type')!r}")

    boundaries: list[RegionBoundary] = []
    seen: set[str] = set()
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        region_id = props.get("region_id")
        if not region_id:
            raise SchemaError(f"{path}: feature without properties.region_id")
        region_id = str(region_id)
        if region_id in seen:
            raise ConsistencyError(f"duplicate region_id {region_id!r} in {path}")
        seen.add(region_id)
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates", [])
        if gtype == "Polygon":
            polys = [coords]
        elif gtype == "MultiPolygon":
            polys = coords
        else:
            raise GeometryError(
                f"feature {region_id!r}: unsupported geometry type {gtype!r}"
            )
        geometry = tuple(
            tuple(_as_ring(ring, region_id) for ring in poly) for poly in polys
        )
        boundary = RegionBoundary(
            region_id=region_id,
            geometry=geometry,
            country=str(props.get("country", "") or ""),
        )
        boundary.validate()
        boundaries.append(boundary)
    log.info("loaded %d boundaries from %s", len(boundaries), path)
    return boundaries


def write_boundaries_geojson(
    boundaries: Sequence[RegionBoundary],
    path: str | Path,
    metadata: Mapping[str, str] | None = None,
) -> None:
    features = []
    for b in boundaries:
        multi = [[list(list(pt) for pt in ring) for ring in poly] for poly in b.geometry]
        features.append(
            {
                "type": "Feature",
                "properties": {"region_id": b.region_id, "country": b.country},
                "geometry": {"type": "MultiPolygon", "coordinates": multi},
            }
        )
    doc: dict = {"type": "FeatureCollection", "features": features}
    if metadata:
        doc["metadata"] = dict(metadata)
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# Linking
# ---------------------------------------------------------------------------


def drop_unlinked(
    records: Sequence[IndividualRecord],
    boundaries: Sequence[RegionBoundary],
    provenance: str = "",
) -> tuple[SurveyDataset, DropReport]:
    """Remove records whose region has no boundary; prune regions left empty.

    Mirrors deleting survey rows with missing geographic linkage: the report
    carries the dropped count and retained fraction.
    """
    known = {b.region_id for b in boundaries}
    kept = [r for r in records if r.region_id in known]
    report = DropReport(n_input=len(records), n_dropped=len(records) - len(kept))
    if not kept:
        raise EmptyDatasetError("all records dropped: no region_id matches any boundary")
    populated = {r.region_id for r in kept}
    regions = [b for b in boundaries if b.region_id in populated]
    dataset = SurveyDataset(records=kept, regions=regions, provenance=provenance)
    return dataset, report


# ---------------------------------------------------------------------------
# Optional pre-processing: assign clusters to regions by point location
# ---------------------------------------------------------------------------

EDGE_TOLERANCE_DEG = 1e-9


def _point_segment_distance(px, py, ax, ay, bx, by) -> float:
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    if denom == 0.0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / denom))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _point_in_ring(px: float, py: float, ring: Ring) -> bool:
    # even-odd ray casting, ray toward +x
    inside = False
    for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
        if (y1 > py) != (y2 > py):
            x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < x_cross:
                inside = not inside
    return inside


def point_in_boundary(
    lon: float, lat: float, boundary: RegionBoundary, edge_tol: float = EDGE_TOLERANCE_DEG
) -> tuple[bool, bool]:
    """Return (inside, on_edge) for a point against one region's geometry."""
    on_edge = False
    inside = False
    for poly in boundary.geometry:
        for ring in poly:
            for (x1, y1), (x2, y2) in zip(ring, ring[1:]):
                if _point_segment_distance(lon, lat, x1, y1, x2, y2) <= edge_tol:
                    on_edge = True
        # even-odd over all rings of the polygon handles holes
        crossings = sum(_point_in_ring(lon, lat, ring) for ring in poly)
        if crossings % 2 == 1:
            inside = True
    return inside, on_edge


@dataclass(frozen=True)
class ClusterAssignment:
    """Result of locating cluster points inside region polygons."""

    region_of: dict[str, str]
    ambiguous: frozenset[str]
    unassigned: frozenset[str]


def assign_cluster_regions(
    cluster_points: Mapping[str, tuple[float, float]],
    boundaries: Sequence[RegionBoundary],
    edge_tol: float = EDGE_TOLERANCE_DEG,
) -> ClusterAssignment:
    """Assign each cluster point to the region polygon containing it.

    Points within ``edge_tol`` degrees of a boundary edge are ambiguous: they
    get the lexicographically smallest candidate region and are flagged.
    Points inside no polygon are reported as unassigned (to be dropped).
    """
    region_of: dict[str, str] = {}
    ambiguous: set[str] = set()
    unassigned: set[str] = set()
    for cid in sorted(cluster_points):
        lon, lat = cluster_points[cid]
        interior: list[str] = []
        edge_hits: list[str] = []
        for b in boundaries:
            inside, on_edge = point_in_boundary(lon, lat, b, edge_tol)
            if on_edge:
                edge_hits.append(b.region_id)
            elif inside:
                interior.append(b.region_id)
        if edge_hits:
            region_of[cid] = min(edge_hits + interior)
            ambiguous.add(cid)
        elif len(interior) == 1:
            region_of[cid] = interior[0]
        elif len(interior) > 1:
            region_of[cid] = min(interior)
            ambiguous.add(cid)
        else:
            unassigned.add(cid)
    return ClusterAssignment(region_of, frozenset(ambiguous), frozenset(unassigned))
