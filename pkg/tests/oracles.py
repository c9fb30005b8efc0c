"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (nested loops,
explicit pair enumeration) and kept separate from the library code paths it
checks.
"""

import math
from collections import Counter

import numpy as np


def finite_difference_gradient(f, x, h=1e-5):
    """Central finite differences of scalar f at every coordinate of x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def finite_difference_at(f, x, indices, h=1e-5):
    """Central differences only at the given flat indices of x."""
    flat = x.reshape(-1)
    out = np.zeros(len(indices))
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[k] = (fp - fm) / (2 * h)
    return out


def relative_error(analytic, numeric, floor=1e-4):
    """Per-coordinate |a - n| / max(|a|, |n|, floor).

    The floor turns the criterion into an absolute tolerance for
    near-zero gradients, where finite differences are pure roundoff.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / scale


def conv2d_same_oracle(x, kernels, bias):
    """Nested-loop "same"-padded cross-correlation.

    x: (H, W, C); kernels: (kh, kw, C, F); returns (H, W, F) pre-activation.
    Even kernels pad the extra row/column at the bottom/right.
    """
    h, w, c = x.shape
    kh, kw, _, f = kernels.shape
    top = (kh - 1) // 2
    left = (kw - 1) // 2
    out = np.zeros((h, w, f))
    for oy in range(h):
        for ox in range(w):
            for fi in range(f):
                acc = 0.0
                for iy in range(kh):
                    for ix in range(kw):
                        yy = oy + iy - top
                        xx = ox + ix - left
                        if 0 <= yy < h and 0 <= xx < w:
                            for ci in range(c):
                                acc += x[yy, xx, ci] * kernels[iy, ix, ci, fi]
                out[oy, ox, fi] = acc + bias[fi]
    return out


def maxpool2d_oracle(x, pool=2):
    """Nested-loop 2x2/stride-2 pooling with odd-edge truncation and the
    leave-1-sized-axes-alone rule."""
    h, w, c = x.shape
    ph = pool if h >= pool else 1
    pw = pool if w >= pool else 1
    h2, w2 = h // ph, w // pw
    out = np.zeros((h2, w2, c))
    for oy in range(h2):
        for ox in range(w2):
            for ci in range(c):
                vals = [
                    x[oy * ph + dy, ox * pw + dx, ci]
                    for dy in range(ph) for dx in range(pw)
                ]
                out[oy, ox, ci] = max(vals)
    return out


def scalar_sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def scalar_lstm_trace(xs, mask, w, r, b, c0=0.0, h0=0.0):
    """Step-by-step scalar (units=1) LSTM with gate order (i, f, g, o).

    ``w`` and ``r`` are length-4 input/recurrent weights, ``b`` length-4
    biases.  Masked steps leave (h, c) unchanged.  Returns the list of h after
    every step.
    """
    h, c = h0, c0
    hs = []
    for x, m in zip(xs, mask):
        if m:
            zi = x * w[0] + h * r[0] + b[0]
            zf = x * w[1] + h * r[1] + b[1]
            zg = x * w[2] + h * r[2] + b[2]
            zo = x * w[3] + h * r[3] + b[3]
            i = scalar_sigmoid(zi)
            f = scalar_sigmoid(zf)
            g = math.tanh(zg)
            o = scalar_sigmoid(zo)
            c = f * c + i * g
            h = o * math.tanh(c)
        hs.append(h)
    return hs


def adam_trace_oracle(grads, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-7, x0=0.0):
    """Scalar Adam trajectory given a gradient callable or list of gradients."""
    x = x0
    m = v = 0.0
    xs = []
    for t, g in enumerate(grads, start=1):
        gt = g(x) if callable(g) else g
        m = beta1 * m + (1 - beta1) * gt
        v = beta2 * v + (1 - beta2) * gt * gt
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
        xs.append(x)
    return xs


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def metrics_oracle(y_true, y_pred, n_classes=3):
    """Loop-based confusion matrix, per-class P/R/F1 and macro F1."""
    cm = [[0] * n_classes for _ in range(n_classes)]
    for t, p in zip(y_true, y_pred):
        cm[t][p] += 1
    f1s = []
    precs, recs = [], []
    for c in range(n_classes):
        tp = cm[c][c]
        pred_c = sum(cm[r][c] for r in range(n_classes))
        true_c = sum(cm[c][r] for r in range(n_classes))
        prec = tp / pred_c if pred_c else 0.0
        rec = tp / true_c if true_c else 0.0
        f1 = 2 * prec * rec / (prec + rec) if (prec + rec) else 0.0
        precs.append(prec)
        recs.append(rec)
        f1s.append(f1)
    return np.array(cm), np.array(precs), np.array(recs), np.array(f1s), sum(f1s) / n_classes


# ---------------------------------------------------------------------------
# Krippendorff's alpha, literal computation steps
# ---------------------------------------------------------------------------

def krippendorff_alpha_hand(units, metric="ordinal"):
    """Literal transcription of the published computation procedure.

    ``units`` maps unit id -> list of scores.  Steps: build the coincidence
    matrix by enumerating ordered pairs within each unit, take the value
    margins, tabulate the squared ordinal (or nominal) distances, then
    alpha = 1 - D_o / D_e.
    """
    units = {u: vals for u, vals in units.items() if len(vals) >= 2}
    values = sorted({v for vals in units.values() for v in vals})
    if len(values) < 2:
        return 1.0
    index = {v: i for i, v in enumerate(values)}
    k = len(values)

    # step 1: coincidence matrix
    o = [[0.0] * k for _ in range(k)]
    for vals in units.values():
        m_u = len(vals)
        for a in range(m_u):
            for b_ in range(m_u):
                if a != b_:
                    o[index[vals[a]]][index[vals[b_]]] += 1.0 / (m_u - 1)

    # step 2: margins
    n_c = [sum(o[c]) for c in range(k)]
    n_total = sum(n_c)

    # step 3: distance table
    delta2 = [[0.0] * k for _ in range(k)]
    for c in range(k):
        for d in range(k):
            if c == d:
                continue
            lo, hi = min(c, d), max(c, d)
            if metric == "ordinal":
                span = sum(n_c[g] for g in range(lo, hi + 1))
                delta2[c][d] = (span - (n_c[lo] + n_c[hi]) / 2.0) ** 2
            else:
                delta2[c][d] = 1.0

    # step 4: observed and expected disagreement
    d_o = sum(o[c][d] * delta2[c][d] for c in range(k) for d in range(k)) / n_total
    d_e = sum(n_c[c] * n_c[d] * delta2[c][d] for c in range(k) for d in range(k)) \
        / (n_total * (n_total - 1))
    if d_e == 0:
        return 1.0
    return 1.0 - d_o / d_e


# ---------------------------------------------------------------------------
# rater-agreement enumeration
# ---------------------------------------------------------------------------

def rater_distribution(true_label, adjacent, two_step):
    """Independent re-statement of the simulated rater's confusion model."""
    if true_label == 1:
        return {1: 1.0 - adjacent - two_step, 2: adjacent, 3: two_step}
    if true_label == 3:
        return {3: 1.0 - adjacent - two_step, 2: adjacent, 1: two_step}
    return {1: adjacent / 2.0, 2: 1.0 - adjacent, 3: adjacent / 2.0}


def categorize_triple(scores):
    """Agreement category for three scores (hand-coded rule)."""
    counts = Counter(scores)
    if len(counts) == 1:
        return "unambiguous"
    if len(counts) == 3:
        return "no_majority"
    majority, _ = counts.most_common(1)[0]
    dissent = next(s for s in scores if s != majority)
    return "majority_minor" if abs(dissent - majority) == 1 else "majority_major"


def expected_category_shares(label_counts, adjacent, two_step):
    """Exact category probabilities by enumerating all 27 rater outcomes.

    ``label_counts`` maps true label -> number of repetitions.  Returns the
    expected share of each category over the whole set.
    """
    total = sum(label_counts.values())
    shares = Counter()
    for y, count in label_counts.items():
        dist = rater_distribution(y, adjacent, two_step)
        for a in (1, 2, 3):
            for b in (1, 2, 3):
                for c in (1, 2, 3):
                    p = dist[a] * dist[b] * dist[c]
                    if p:
                        shares[categorize_triple((a, b, c))] += p * count / total
    return dict(shares)


def nearest_centroid_accuracy(features, labels, rng):
    """Depth-0 baseline: fit per-class centroids on half the data, score the rest."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    order = rng.permutation(len(labels))
    half = len(labels) // 2
    fit_idx, eval_idx = order[:half], order[half:]
    classes = np.unique(labels)
    centroids = {c: features[fit_idx][labels[fit_idx] == c].mean(axis=0) for c in classes}
    correct = 0
    for i in eval_idx:
        dists = {c: np.linalg.norm(features[i] - mu) for c, mu in centroids.items()}
        pred = min(dists, key=dists.get)
        correct += int(pred == labels[i])
    return correct / len(eval_idx)
