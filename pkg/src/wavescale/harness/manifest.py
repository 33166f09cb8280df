"""Dataset manifests and split selection rules."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

HEADER = ("id", "image_path", "label", "provider", "gsd_cm_per_px", "region_tag", "pair_id")
LABELS = {"pv": 1, "no_pv": 0}
PROVIDERS = ("google", "ign", "other")
SPLIT_NAMES = ("baseline", "gsd_shift", "geo_shift", "provider_shift")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image_path: Path
    label: str
    provider: str
    gsd_cm_per_px: float
    region_tag: str
    pair_id: str | None = None

    @property
    def target(self) -> int:
        return LABELS[self.label]


@dataclass
class DatasetManifest:
    records: list[ManifestRecord] = field(default_factory=list)
    source: Path | None = None

    def __len__(self):
        return len(self.records)

    def by_id(self) -> dict[str, ManifestRecord]:
        return {r.id: r for r in self.records}

    def pairs(self) -> list[tuple[ManifestRecord, ManifestRecord]]:
        """Linked records as (google-side, other-side) tuples ordered by pair id.

        Within a pair the record whose provider sorts first in ``PROVIDERS``
        is treated as the source.
        """
        groups = defaultdict(list)
        for r in self.records:
            if r.pair_id:
                groups[r.pair_id].append(r)
        out = []
        for pid in sorted(groups):
            a, b = sorted(groups[pid], key=lambda r: PROVIDERS.index(r.provider))
            out.append((a, b))
        return out


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest CSV; image paths are relative to its folder."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None:
        raise ManifestError(f"{path}: missing header")
    missing_cols = [c for c in HEADER if c not in reader.fieldnames]
    if missing_cols:
        raise ManifestError(f"{path}: header lacks columns {missing_cols}")

    records, errors, missing_files = [], [], []
    seen = set()
    for rowno, row in enumerate(reader, start=2):
        def bad(fieldname, msg):
            errors.append(f"row {rowno} field {fieldname!r}: {msg}")

        rid = (row["id"] or "").strip()
        if not rid:
            bad("id", "empty")
            continue
        if rid in seen:
            bad("id", f"duplicate id {rid!r}")
            continue
        seen.add(rid)
        label = (row["label"] or "").strip()
        if label not in LABELS:
            bad("label", f"{label!r} not in {sorted(LABELS)}")
        provider = (row["provider"] or "").strip()
        if provider not in PROVIDERS:
            bad("provider", f"{provider!r} not in {list(PROVIDERS)}")
        try:
            gsd = float(row["gsd_cm_per_px"])
            if not gsd > 0:
                raise ValueError
        except (TypeError, ValueError):
            bad("gsd_cm_per_px", f"{row['gsd_cm_per_px']!r} is not a positive number")
            gsd = float("nan")
        image_path = (path.parent / (row["image_path"] or "").strip())
        if not (row["image_path"] or "").strip():
            bad("image_path", "empty")
        elif check_files and not image_path.is_file():
            missing_files.append(f"row {rowno}: {image_path}")
        records.append(ManifestRecord(
            rid, image_path, label, provider, gsd,
            (row["region_tag"] or "").strip(), (row["pair_id"] or "").strip() or None,
        ))

    pair_groups = defaultdict(list)
    for r in records:
        if r.pair_id:
            pair_groups[r.pair_id].append(r)
    for pid, members in sorted(pair_groups.items()):
        if len(members) != 2:
            errors.append(f"pair_id {pid!r} links {len(members)} records, expected 2")
        elif members[0].provider == members[1].provider:
            errors.append(f"pair_id {pid!r} links two {members[0].provider!r} records")

    if missing_files:
        errors.append("missing image files:\n  " + "\n  ".join(missing_files))
    if errors:
        raise ManifestError(f"{path}: " + "; ".join(errors))
    records.sort(key=lambda r: r.id)
    return DatasetManifest(records, path)


def write_manifest(records: list[ManifestRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for r in records:
            rel = Path(r.image_path)
            if rel.is_absolute():
                rel = rel.relative_to(path.parent)
            writer.writerow([r.id, rel.as_posix(), r.label, r.provider, f"{r.gsd_cm_per_px:g}",
                             r.region_tag, r.pair_id or ""])
    return path


@dataclass(frozen=True)
class SplitRule:
    """Record filter for one evaluation split.

    ``paired`` restricts to records with (True) or without (False) a pair id;
    ``resample_to_gsd`` downsamples images before prediction.
    """

    name: str
    providers: tuple[str, ...] | None = None
    regions: tuple[str, ...] | None = None
    exclude_regions: tuple[str, ...] = ()
    paired: bool | None = None
    resample_to_gsd: float | None = None

    @classmethod
    def from_dict(cls, name: str, d: dict) -> "SplitRule":
        unknown = set(d) - {"providers", "regions", "exclude_regions", "paired", "resample_to_gsd"}
        if unknown:
            raise ValueError(f"split {name!r}: unknown keys {sorted(unknown)}")

        def tup(v):
            return None if v is None else tuple([v] if isinstance(v, str) else v)

        return cls(name, tup(d.get("providers")), tup(d.get("regions")),
                   tup(d.get("exclude_regions")) or (), d.get("paired"), d.get("resample_to_gsd"))

    def to_dict(self) -> dict:
        return {
            "providers": None if self.providers is None else list(self.providers),
            "regions": None if self.regions is None else list(self.regions),
            "exclude_regions": list(self.exclude_regions),
            "paired": self.paired,
            "resample_to_gsd": self.resample_to_gsd,
        }

    def matches(self, r: ManifestRecord) -> bool:
        if self.providers is not None and r.provider not in self.providers:
            return False
        if self.regions is not None and r.region_tag not in self.regions:
            return False
        if r.region_tag in self.exclude_regions:
            return False
        if self.paired is not None and bool(r.pair_id) != self.paired:
            return False
        return True

    def select(self, manifest: DatasetManifest) -> list[ManifestRecord]:
        return [r for r in manifest.records if self.matches(r)]


DEFAULT_SPLITS = {
    "baseline": {"providers": ["google"], "regions": ["fr"], "paired": True, "resample_to_gsd": 20.0},
    "gsd_shift": {"providers": ["google"], "regions": ["fr"], "paired": False},
    "geo_shift": {"providers": ["google"], "exclude_regions": ["fr"], "resample_to_gsd": 20.0},
    "provider_shift": {"providers": ["ign"]},
}
