"""Asset catalog: loading, validation, and seeded sampling.

The manifest is a line-delimited JSON file: a header line carrying
``schema_version``, then one asset record per line. Rigid assets carry an
empty ``articulations`` list. A missing ``nominal_size_m`` marks the asset
unsized; sizing happens at scene configuration time.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyPool, ParseError, ValidationError

SCHEMA_VERSION = 1

JOINT_KINDS = ("revolute", "prismatic", "binary_toggle")
SOURCES = ("target_pool", "auxiliary_pool")


@dataclass(frozen=True)
class ArticulationSpec:
    joint_id: str
    kind: str
    states: tuple[str, ...]
    default_state: str

    def __post_init__(self):
        if self.kind not in JOINT_KINDS:
            raise ValidationError(f"unknown joint kind {self.kind!r} for {self.joint_id!r}")
        if not self.states:
            raise ValidationError(f"joint {self.joint_id!r} has no states")
        if self.default_state not in self.states:
            raise ValidationError(
                f"joint {self.joint_id!r} default state {self.default_state!r} "
                f"not in states {list(self.states)}"
            )


@dataclass(frozen=True)
class AssetRecord:
    asset_id: str
    category: str
    name: str
    description: str
    articulations: tuple[ArticulationSpec, ...]
    source: str
    nominal_size_m: float | None = None

    def __post_init__(self):
        if not self.category:
            raise ValidationError(f"asset {self.asset_id!r}: empty category")
        if self.source not in SOURCES:
            raise ValidationError(f"asset {self.asset_id!r}: unknown source {self.source!r}")
        if self.nominal_size_m is not None and self.nominal_size_m <= 0:
            raise ValidationError(f"asset {self.asset_id!r}: nominal_size_m must be positive")
        seen = set()
        for art in self.articulations:
            if art.joint_id in seen:
                raise ValidationError(
                    f"asset {self.asset_id!r}: duplicate joint_id {art.joint_id!r}"
                )
            seen.add(art.joint_id)

    @property
    def unsized(self) -> bool:
        return self.nominal_size_m is None

    def joint(self, joint_id: str) -> ArticulationSpec:
        for art in self.articulations:
            if art.joint_id == joint_id:
                return art
        raise ValidationError(f"asset {self.asset_id!r} has no joint {joint_id!r}")


@dataclass(frozen=True)
class Catalog:
    assets: dict[str, AssetRecord]
    category_index: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        index: dict[str, list[str]] = {}
        for aid, rec in self.assets.items():
            index.setdefault(rec.category, []).append(aid)
        for ids in index.values():
            ids.sort()
        object.__setattr__(self, "category_index", index)

    def __len__(self) -> int:
        return len(self.assets)

    def pool(self, source: str) -> list[AssetRecord]:
        """Assets of one source pool, in stable asset_id order."""
        return sorted(
            (a for a in self.assets.values() if a.source == source),
            key=lambda a: a.asset_id,
        )

    def by_category(self, category: str) -> list[AssetRecord]:
        return [self.assets[i] for i in self.category_index.get(category, [])]


def _parse_articulation(raw: dict, asset_id: str) -> ArticulationSpec:
    try:
        return ArticulationSpec(
            joint_id=raw["joint_id"],
            kind=raw["kind"],
            states=tuple(raw["states"]),
            default_state=raw["default_state"],
        )
    except KeyError as exc:
        raise ParseError(f"asset {asset_id!r}: articulation missing field {exc}") from exc


def _parse_record(raw: dict) -> AssetRecord:
    asset_id = raw.get("asset_id")
    if not asset_id:
        raise ParseError("record missing asset_id")
    try:
        return AssetRecord(
            asset_id=asset_id,
            category=raw["category"],
            name=raw["name"],
            description=raw.get("description", ""),
            articulations=tuple(
                _parse_articulation(a, asset_id) for a in raw.get("articulations", [])
            ),
            source=raw["source"],
            nominal_size_m=raw.get("nominal_size_m"),
        )
    except KeyError as exc:
        raise ParseError(f"asset {asset_id!r}: missing field {exc}") from exc


def load_catalog(path: str | Path) -> Catalog:
    """Load and validate a catalog manifest.

    Raises ParseError on malformed input and ValidationError on invariant
    violations (naming the offending asset_id).
    """
    path = Path(path)
    assets: dict[str, AssetRecord] = {}
    with path.open(encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ParseError(f"{path}: empty manifest")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: bad header line: {exc}") from exc
        if header.get("schema_version") != SCHEMA_VERSION:
            raise ParseError(
                f"{path}: unsupported schema_version {header.get('schema_version')!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: bad record: {exc}") from exc
            rec = _parse_record(raw)
            if rec.asset_id in assets:
                raise ValidationError(f"duplicate asset_id {rec.asset_id!r}")
            assets[rec.asset_id] = rec
    return Catalog(assets=assets)


def sample_target(catalog: Catalog, rng_seed: int) -> AssetRecord:
    """Seeded-uniform draw from the target pool. Pure in (catalog, seed)."""
    pool = catalog.pool("target_pool")
    if not pool:
        raise EmptyPool("catalog has no target_pool assets")
    return random.Random(rng_seed).choice(pool)
