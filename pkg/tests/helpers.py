"""Shared builders and independent oracles for the test suite."""
import numpy as np

from zsfer.encoders import EncoderConfig, init_state
from zsfer.trainer import Batch

# |a - n| / max(|a| + |n|, FLOOR): gradients that are exactly zero analytically come
# back from central differences as ~1e-12 round-off, so the floor keeps them from
# counting as relative errors of order one.
GRAD_FLOOR = 1e-6


def small_config(**kw):
    base = dict(feature_dim=5, vocab_size=12, dim=8, heads=2, layers=2, max_frames=4)
    base.update(kw)
    return EncoderConfig(**base)


def random_state(cfg, seed, spread=0.3):
    """A parameter point away from the structured initialisation (nonzero cls/pos/biases)."""
    rng = np.random.default_rng([seed, 99])
    st = init_state(cfg, seed=seed)
    return st.replace(**{k: v + rng.normal(0, spread, v.shape) for k, v in st.params.items()})


def random_batch(cfg, b, t, seed):
    rng = np.random.default_rng([seed, 5])
    tokens = [rng.integers(0, cfg.vocab_size, size=rng.integers(1, 6)) for _ in range(b)]
    return Batch(rng.normal(size=(b, t, cfg.feature_dim)), tokens)


def numeric_grad(f, state, name, h=1e-4):
    """Central differences of scalar ``f(state)`` with respect to every entry of one tensor."""
    v = state.params[name]
    out = np.zeros(v.shape)
    for j in range(v.size):
        plus = v.copy().ravel()
        minus = v.copy().ravel()
        plus[j] += h
        minus[j] -= h
        fp = f(state.replace(**{name: plus.reshape(v.shape)}))
        fm = f(state.replace(**{name: minus.reshape(v.shape)}))
        out.ravel()[j] = (fp - fm) / (2 * h)
    return out


def max_rel_err(analytic, numeric, floor=GRAD_FLOOR):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float((np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)).max())


# ---------------------------------------------------------------- metric oracles
# Plain-Python loops, written without reference to the library implementation.

def ref_argmax(row):
    best = 0
    for j in range(1, len(row)):
        if row[j] > row[best]:
            best = j
    return best


def ref_classification(y_true, y_prob, n):
    preds = [ref_argmax(r) for r in y_prob]
    total = len(y_true)
    correct = sum(1 for t, p in zip(y_true, preds) if t == p)
    recalls, f1s = [], []
    for c in range(n):
        tp = sum(1 for t, p in zip(y_true, preds) if t == c and p == c)
        fn = sum(1 for t, p in zip(y_true, preds) if t == c and p != c)
        fp = sum(1 for t, p in zip(y_true, preds) if t != c and p == c)
        if tp + fn:
            recalls.append(tp / (tp + fn))
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    aucs = []
    for c in range(n):
        pos = [r[c] for t, r in zip(y_true, y_prob) if t == c]
        neg = [r[c] for t, r in zip(y_true, y_prob) if t != c]
        if not pos or not neg:
            continue
        wins = 0.0
        for p in pos:  # Mann-Whitney pair count: ties count one half
            for q in neg:
                wins += 1.0 if p > q else 0.5 if p == q else 0.0
        aucs.append(wins / (len(pos) * len(neg)))
    return {
        "war": correct / total,
        "uar": sum(recalls) / len(recalls),
        "f1": sum(f1s) / n,
        "auc": sum(aucs) / len(aucs) if aucs else float("nan"),
    }


def ref_regression(y_true, y_pred):
    """Textbook MAE/RMSE/PCC at 50-digit precision."""
    import mpmath as mp

    mp.mp.dps = 50
    n, k = len(y_true), len(y_true[0])
    out = {"mae": [], "rmse": [], "pcc": []}
    for j in range(k):
        t = [mp.mpf(float(r[j])) for r in y_true]
        p = [mp.mpf(float(r[j])) for r in y_pred]
        out["mae"].append(float(mp.fsum(abs(a - b) for a, b in zip(p, t)) / n))
        out["rmse"].append(float(mp.sqrt(mp.fsum((a - b) ** 2 for a, b in zip(p, t)) / n)))
        mt, mpd = mp.fsum(t) / n, mp.fsum(p) / n
        cov = mp.fsum((a - mt) * (b - mpd) for a, b in zip(t, p))
        vt = mp.fsum((a - mt) ** 2 for a in t)
        vp = mp.fsum((b - mpd) ** 2 for b in p)
        out["pcc"].append(float(cov / mp.sqrt(vt * vp)))
    return out


def random_classification_instance(rng):
    n = int(rng.integers(1, 12))
    b = int(rng.integers(1, 201))
    y = rng.integers(0, n, size=b)
    if rng.random() < 0.3:  # coarse scores produce ties in argmax and in AUC ranks
        logits = rng.integers(0, 3, size=(b, n)).astype(float)
    else:
        logits = rng.normal(size=(b, n)) * 3
    p = np.exp(logits - logits.max(1, keepdims=True))
    return y, p / p.sum(1, keepdims=True), n


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
