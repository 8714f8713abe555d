"""Independent reference implementations used as test oracles.

Written with explicit loops over Python floats so they share no code path
with the vectorized library functions they check.
"""
import math


def mcc_literal(logits, temperature):
    n_b = len(logits)
    n_c = len(logits[0])
    probs = []
    for row in logits:
        ex = [math.exp(a / temperature) for a in row]
        s = sum(ex)
        probs.append([e / s for e in ex])
    return mcc_literal_probs(probs)


def mcc_literal_probs(probs):
    n_b = len(probs)
    n_c = len(probs[0])
    ent = []
    for row in probs:
        h = 0.0
        for p in row:
            if p > 0:
                h -= p * math.log(p)
        ent.append(h)
    denom = sum(1.0 + math.exp(-h) for h in ent)
    phi = [n_b * (1.0 + math.exp(-h)) / denom for h in ent]
    omega = [[0.0] * n_c for _ in range(n_c)]
    for j in range(n_c):
        for jp in range(n_c):
            omega[j][jp] = sum(probs[i][j] * phi[i] * probs[i][jp] for i in range(n_b))
    norm = [[omega[j][jp] / sum(omega[j]) for jp in range(n_c)] for j in range(n_c)]
    loss = sum(norm[j][jp] for j in range(n_c) for jp in range(n_c) if jp != j) / n_c
    return loss, {"entropies": ent, "weights": phi, "correlation": omega, "normalized": norm}


def cross_entropy_literal(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(a - m) for a in row))
        total += lse - row[y]
    return total / len(labels)


def bce_logit(z, y):
    # -[y log s(z) + (1 - y) log(1 - s(z))]
    s = 1.0 / (1.0 + math.exp(-z))
    return -(y * math.log(s) + (1 - y) * math.log(1 - s))


def metrics_literal(counts):
    """Accuracy, precision, recall, F1 and macro F1 from a confusion matrix (rows = truth)."""
    k = len(counts)
    total = sum(sum(r) for r in counts)
    tp = [counts[i][i] for i in range(k)]
    fp = [sum(counts[r][i] for r in range(k)) - tp[i] for i in range(k)]
    fn = [sum(counts[i]) - tp[i] for i in range(k)]
    prec = [tp[i] / (tp[i] + fp[i]) if tp[i] + fp[i] else 0.0 for i in range(k)]
    rec = [tp[i] / (tp[i] + fn[i]) if tp[i] + fn[i] else 0.0 for i in range(k)]
    f1 = [2 * prec[i] * rec[i] / (prec[i] + rec[i]) if prec[i] + rec[i] else 0.0 for i in range(k)]
    return {
        "accuracy": sum(tp) / total,
        "precision": prec,
        "recall": rec,
        "f1": f1,
        "macro_f1": sum(f1) / k,
    }


def loop_two_point(u, p, max_lag):
    out = []
    n = len(u)
    for lag in range(-max_lag, max_lag + 1):
        acc = 0.0
        count = 0
        for t in range(n):
            if 0 <= t + lag < n:
                acc += u[t] * p[t + lag]
                count += 1
        out.append(acc / count)
    return out


def sum_cc(a, b):
    num = sum(float(x) * float(y) for x, y in zip(a, b))
    ea = sum(float(x) * float(x) for x in a)
    eb = sum(float(y) * float(y) for y in b)
    return num / (ea * eb) ** 0.5
