"""Reference lineage catalogs (barcode and constellation files) and set similarity."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import LineageDefinitionSet, LineageMixError

BARCODE_THRESHOLD = 0.5


class UniversePolicy(str, Enum):
    SHARED_VOCABULARY = "SharedVocabulary"
    NONE = "None"


@dataclass(frozen=True)
class ReferenceCatalog:
    source_label: str
    definitions: dict

    def __post_init__(self):
        defs = {str(k): frozenset(v) for k, v in self.definitions.items()}
        empty = [k for k, v in defs.items() if not v]
        if empty:
            raise LineageMixError(f"{self.source_label}: empty definitions for {empty}", lineages=empty)
        object.__setattr__(self, "definitions", defs)

    @property
    def names(self):
        return tuple(self.definitions)

    def as_sets(self):
        return dict(self.definitions)

    def vocabulary(self):
        return frozenset().union(*self.definitions.values()) if self.definitions else frozenset()

    def subset(self, names):
        missing = [n for n in names if n not in self.definitions]
        if missing:
            raise LineageMixError(f"{self.source_label}: unknown lineages {missing}", missing=missing)
        return ReferenceCatalog(self.source_label, {n: self.definitions[n] for n in names})

    def to_definition_set(self, universe=None):
        return LineageDefinitionSet.from_sets(self.definitions, universe=universe)


# -- label normalization -------------------------------------------------------

_AA = re.compile(r"^(?:aa:)?([A-Za-z0-9]+):([A-Z*]\d+[A-Z*]+)$")
_NUC = re.compile(r"^(?:nuc:)?([ACGT])(\d+)([ACGT])$")
_DEL = re.compile(r"^del:(\d+):(\d+)$")

# gene aliases seen in constellation files -> names used by the panel
GENE_ALIASES = {"spike": "S", "s": "S", "n": "N", "m": "M", "e": "E", "orf1ab": "orf1ab",
                "1a": "orf1a", "1b": "orf1b", "8": "orf8", "6": "orf6", "7a": "orf7a", "3a": "orf3a"}


def normalize_label(label: str, mapping: dict | None = None) -> str:
    """Map a mutation label to the panel's scheme.

    An explicit ``mapping`` entry wins.  Otherwise ``nuc:C3037T`` becomes
    ``C3037T``, ``S:D614G``/``spike:D614G`` become ``aa:S:D614G`` and
    deletions stay ``del:<pos>:<len>``.
    """
    label = label.strip()
    if mapping and label in mapping:
        return mapping[label]
    if _DEL.match(label):
        return label
    m = _NUC.match(label)
    if m:
        return "".join(m.groups())
    m = _AA.match(label)
    if m:
        gene = GENE_ALIASES.get(m.group(1).lower(), m.group(1))
        return f"aa:{gene}:{m.group(2)}"
    return label


def read_label_map(path) -> dict:
    """Two-column CSV/TSV ``from,to`` (header optional) of label rewrites."""
    text = Path(path).read_text()
    delim = "\t" if "\t" in text.splitlines()[0] else ","
    out = {}
    for rec in csv.reader(text.splitlines(), delimiter=delim):
        if len(rec) < 2 or rec[0].startswith("#"):
            continue
        if rec[0].strip().lower() in ("from", "source") and not out:
            continue
        out[rec[0].strip()] = rec[1].strip()
    return out


def read_barcodes(path, mapping=None, threshold=BARCODE_THRESHOLD, source_label=None) -> ReferenceCatalog:
    """Wide barcode CSV: first column lineage name, remaining columns mutation
    labels, cells in [0, 1].  A cell >= ``threshold`` counts as membership."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        labels = [normalize_label(h, mapping) for h in header[1:]]
        defs = {}
        for rec in reader:
            if not rec:
                continue
            vals = np.array([float(v) if v.strip() else 0.0 for v in rec[1:]])
            members = {labels[k] for k in np.flatnonzero(vals >= threshold)}
            if members:
                defs[rec[0]] = members
    return ReferenceCatalog(source_label or Path(path).stem, defs)


def read_constellations(path, mapping=None, source_label=None) -> ReferenceCatalog:
    """JSON lineage definitions.

    Accepts ``{"lineage": ["mut", ...]}``, a single constellation object with
    ``label``/``sites`` keys, or a list of such objects.
    """
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and "sites" in data:
        data = [data]
    defs = {}
    if isinstance(data, list):
        for obj in data:
            name = obj.get("label") or obj.get("variant") or obj.get("name")
            if name is None:
                raise LineageMixError(f"{path}: constellation without a label", path=str(path))
            defs[str(name).removesuffix("-like")] = {normalize_label(s, mapping) for s in obj["sites"]}
    elif isinstance(data, dict):
        for name, sites in data.items():
            defs[str(name)] = {normalize_label(s, mapping) for s in sites}
    else:
        raise LineageMixError(f"{path}: unrecognised constellation layout", path=str(path))
    return ReferenceCatalog(source_label or Path(path).stem, defs)


# -- similarity ------------------------------------------------------------------


def jaccard(a, b, universe=None) -> float:
    """|a ∩ b| / |a ∪ b| after optional restriction to ``universe``; 0 for an empty union."""
    a, b = set(a), set(b)
    if universe is not None:
        universe = set(universe)
        a &= universe
        b &= universe
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def jaccard_columns(Za, Zb):
    """Jaccard similarity between every column of two binary matrices (rows aligned)."""
    Za = np.asarray(Za, dtype=float)
    Zb = np.asarray(Zb, dtype=float)
    inter = Za.T @ Zb
    union = Za.sum(axis=0)[:, None] + Zb.sum(axis=0)[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _label(src):
    return getattr(src, "source_label", None) or "definitions"


def similarity_matrix(left, right, universe_policy=UniversePolicy.SHARED_VOCABULARY):
    """Pairwise Jaccard between the lineages of two sources (rows = ``left``)."""
    policy = UniversePolicy(universe_policy)
    A, B = left.as_sets(), right.as_sets()
    if not A or not B:
        raise LineageMixError("similarity_matrix needs nonempty sources")
    universe = None
    if policy is UniversePolicy.SHARED_VOCABULARY:
        universe = left.vocabulary() & right.vocabulary()
        if not universe:
            raise LineageMixError(
                f"no shared mutation vocabulary between {_label(left)!r} and {_label(right)!r}",
                left=_label(left), right=_label(right),
            )
    out = np.empty((len(A), len(B)))
    for i, a in enumerate(A.values()):
        for j, b in enumerate(B.values()):
            out[i, j] = jaccard(a, b, universe)
    return out


def align_to_reference(est: LineageDefinitionSet, ref_lineage, universe=None) -> list[int]:
    """Column order by descending Jaccard with ``ref_lineage``; ties keep original order."""
    ref = set(ref_lineage)
    sims = [jaccard(s, ref, universe) for s in est.as_sets().values()]
    return sorted(range(len(sims)), key=lambda j: -sims[j])


def write_similarity_csv(path, M, row_names, col_names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *col_names])
        for n, row in zip(row_names, M):
            w.writerow([n, *(repr(float(v)) for v in row)])


def read_similarity_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        cols = next(reader)[1:]
        rows, vals = [], []
        for rec in reader:
            rows.append(rec[0])
            vals.append([float(v) for v in rec[1:]])
    return np.array(vals), rows, cols
