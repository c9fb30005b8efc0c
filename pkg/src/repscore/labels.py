"""Rater aggregation and inter-rater reliability.

Each repetition is scored 1/2/3 by three raters.  The final label is the
majority vote; the agreement falls into one of four categories:

- ``unambiguous``: all three scores equal;
- ``majority_minor``: one dissenter, off by one point;
- ``majority_major``: one dissenter, off by two points;
- ``no_majority``: all three scores distinct -- no final label, the repetition
  is excluded downstream.

Krippendorff's alpha is computed from the coincidence matrix with the ordinal
squared-distance metric over cumulative value frequencies; a nominal metric is
also available.
"""

import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

CATEGORIES = ("unambiguous", "majority_minor", "majority_major", "no_majority")
VALID_SCORES = (1, 2, 3)


@dataclass(frozen=True)
class RatingRecord:
    repetition_id: str
    rater_id: str
    score: int


@dataclass(frozen=True)
class AgreementResult:
    final_label: Optional[int]
    category: str


def aggregate(scores):
    """Majority vote over exactly three rater scores.

    Returns an :class:`AgreementResult`; ``final_label`` is None exactly when
    all three scores are distinct.
    """
    scores = list(scores)
    if len(scores) != 3:
        raise ValueError(f"expected exactly 3 rater scores, got {len(scores)}")
    for s in scores:
        if s not in VALID_SCORES:
            raise ValueError(f"score {s!r} outside {VALID_SCORES}")
    counts = Counter(scores)
    if len(counts) == 1:
        return AgreementResult(scores[0], "unambiguous")
    if len(counts) == 3:
        return AgreementResult(None, "no_majority")
    majority, _ = counts.most_common(1)[0]
    dissent = next(s for s in scores if s != majority)
    category = "majority_minor" if abs(dissent - majority) == 1 else "majority_major"
    return AgreementResult(majority, category)


def _units_from_records(records):
    """Group scores by unit (repetition); only units with >= 2 ratings pair up."""
    units = {}
    for rec in records:
        units.setdefault(rec.repetition_id, []).append(rec.score)
    return {uid: vals for uid, vals in units.items() if len(vals) >= 2}


def krippendorff_alpha(records, metric="ordinal"):
    """Krippendorff's alpha over rating records.

    ``alpha = 1 - D_o / D_e`` from the coincidence-matrix formulation.  The
    ordinal metric uses squared differences of cumulative value frequencies;
    the nominal metric counts any disagreement as 1.  Units with a single
    rating are ignored.  If every rating is identical the expected
    disagreement is zero; 1.0 is returned by convention with a warning.
    """
    if metric not in ("ordinal", "nominal"):
        raise ValueError(f"metric must be 'ordinal' or 'nominal', got {metric!r}")
    units = _units_from_records(records)
    if len(units) < 2:
        raise ValueError("need at least 2 units with >= 2 ratings each")

    values = sorted({v for vals in units.values() for v in vals})
    v_index = {v: i for i, v in enumerate(values)}
    k = len(values)

    coincidence = np.zeros((k, k))
    for vals in units.values():
        m_u = len(vals)
        for a in range(m_u):
            for b in range(m_u):
                if a != b:
                    coincidence[v_index[vals[a]], v_index[vals[b]]] += 1.0 / (m_u - 1)
    margins = coincidence.sum(axis=1)
    n = margins.sum()

    if k == 1:
        warnings.warn("all ratings identical; expected disagreement is zero, returning alpha = 1")
        return 1.0

    if metric == "nominal":
        delta2 = 1.0 - np.eye(k)
    else:
        delta2 = np.zeros((k, k))
        for c in range(k):
            for d in range(c + 1, k):
                dist = margins[c:d + 1].sum() - (margins[c] + margins[d]) / 2.0
                delta2[c, d] = delta2[d, c] = dist ** 2

    d_o = (coincidence * delta2).sum() / n
    d_e = (np.outer(margins, margins) * delta2).sum() / (n * (n - 1))
    if d_e == 0:
        warnings.warn("expected disagreement is zero, returning alpha = 1")
        return 1.0
    return float(1.0 - d_o / d_e)


def build_labeled_dataset(dataset, records=None):
    """Attach majority-vote labels to a dataset; returns (dataset, summary).

    Repetitions whose three raters all disagree get no label and are excluded
    from downstream splits (``final_label`` stays None).  Repetitions with a
    rating count other than 3 are excluded with a warning.  The summary holds
    per-category counts, the exclusion list and per-exercise label histograms.
    """
    if records is None:
        records = dataset.ratings
    by_rep = {}
    for rec in records:
        by_rep.setdefault(rec.repetition_id, []).append(rec.score)

    category_counts = Counter()
    excluded = []
    histograms = {}
    for rep in dataset.repetitions:
        scores = by_rep.get(rep.rep_id, [])
        if len(scores) == 0:
            warnings.warn(f"{rep.rep_id}: no ratings on record; excluded")
            excluded.append(rep.rep_id)
            rep.final_label = None
            continue
        if len(scores) != 3:
            warnings.warn(
                f"{rep.rep_id}: expected 3 ratings, got {len(scores)}; excluded"
            )
            excluded.append(rep.rep_id)
            rep.final_label = None
            continue
        result = aggregate(scores)
        category_counts[result.category] += 1
        rep.final_label = result.final_label
        if result.final_label is None:
            excluded.append(rep.rep_id)
        else:
            key = (rep.exercise, rep.side)
            hist = histograms.setdefault(key, Counter())
            hist[result.final_label] += 1

    summary = {
        "categories": {cat: category_counts.get(cat, 0) for cat in CATEGORIES},
        "excluded": excluded,
        "retained": sum(1 for rep in dataset.repetitions if rep.final_label is not None),
        "histograms": {
            f"{ex}-{side}" if side != "none" else ex: dict(sorted(hist.items()))
            for (ex, side), hist in sorted(histograms.items())
        },
    }
    return dataset, summary
