"""Independent reference computations used by the tests."""

import numpy as np


def central_diff(f, values: dict, step=1e-4) -> dict:
    """Central finite differences of scalar ``f(values)`` w.r.t. every array."""
    out = {}
    for name, v in values.items():
        v = np.array(v, dtype=np.float64)
        grad = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            plus = {**values, name: v.copy()}
            minus = {**values, name: v.copy()}
            plus[name][i] += step
            minus[name][i] -= step
            grad[i] = (f(plus) - f(minus)) / (2 * step)
        out[name] = grad
    return out


def rel_err(a, b, floor=1e-8) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def max_rel_err(ad: dict, fd: dict) -> float:
    """Relative error of the full concatenated gradient vector."""
    keys = sorted(fd)
    return rel_err(np.concatenate([np.ravel(ad[k]) for k in keys]),
                   np.concatenate([np.ravel(fd[k]) for k in keys]))


def confusion_per_class(pred, labels, classes) -> dict:
    """Per-class accuracy read off an explicit confusion matrix."""
    all_ids = sorted(set(np.asarray(pred).tolist()) | set(np.asarray(labels).tolist()) | set(classes))
    pos = {c: i for i, c in enumerate(all_ids)}
    cm = np.zeros((len(all_ids), len(all_ids)), dtype=np.int64)
    for p, t in zip(pred, labels):
        cm[pos[int(t)], pos[int(p)]] += 1
    return {int(c): cm[pos[c], pos[c]] / cm[pos[c]].sum() for c in classes}


def naive_mlp(x, layers, slope, final="none"):
    """Row-by-row loop forward pass over (weight, bias) pairs."""
    out = []
    for row in np.asarray(x, dtype=np.float64):
        h = row
        for li, (w, b) in enumerate(layers):
            nxt = np.zeros(w.shape[0])
            for j in range(w.shape[0]):
                acc = b[j]
                for k in range(w.shape[1]):
                    acc += w[j, k] * h[k]
                last = li == len(layers) - 1
                if not last or final == "leaky-relu":
                    acc = acc if acc > 0 else slope * acc
                elif final == "sigmoid":
                    acc = 1.0 / (1.0 + np.exp(-acc))
                nxt[j] = acc
            h = nxt
        out.append(h)
    return np.array(out)
