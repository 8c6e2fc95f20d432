"""Independent reference implementations used by the tests.

Each oracle is written in the most literal form available (explicit loops,
scalar math) and shares no code with the package.
"""

from __future__ import annotations

import math
import re

# -- metrics ----------------------------------------------------------------


def jaccard_oracle(truth_sets, pred_sets, n_drugs):
    scores = []
    for y, yhat in zip(truth_sets, pred_sets):
        inter = sum(1 for k in range(n_drugs) if k in y and k in yhat)
        union = sum(1 for k in range(n_drugs) if k in y or k in yhat)
        scores.append(1.0 if union == 0 else inter / union)
    return sum(scores) / len(scores)


def f1_oracle(truth_sets, pred_sets, n_drugs):
    scores = []
    for y, yhat in zip(truth_sets, pred_sets):
        inter = sum(1 for k in range(n_drugs) if k in y and k in yhat)
        prec = inter / len(y) if len(y) else 0.0
        rec = inter / len(yhat) if len(yhat) else 0.0
        scores.append(0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
    return sum(scores) / len(scores)


def prauc_oracle(truth_sets, prob_rows):
    scores = []
    for y, probs in zip(truth_sets, prob_rows):
        n = len(probs)
        if not y:
            scores.append(0.0)
            continue

        def rank(i):
            return 1 + sum(1 for j in range(n) if probs[j] > probs[i] or (probs[j] == probs[i] and j < i))

        total = 0.0
        for i in y:
            r = rank(i)
            hits = sum(1 for j in y if rank(j) <= r)
            total += hits / r
        scores.append(total / len(y))
    return sum(scores) / len(scores)


def ddi_rate_oracle(pred_sets, a_ddi, n_drugs):
    pairs = 0
    drugs = 0
    for s in pred_sets:
        drugs += len(s)
        for i in range(n_drugs):
            for j in range(i + 1, n_drugs):
                if i in s and j in s and a_ddi[i][j] > 0:
                    pairs += 1
    return 0.0 if drugs == 0 else pairs / drugs


def avg_drugs_oracle(pred_sets):
    return sum(len(s) for s in pred_sets) / len(pred_sets)


# -- snapshot normalisation -------------------------------------------------


def masked_softmax_row(p_row, mask_row, i):
    """Row ``i`` of the normalised adjacency with explicit scalar loops."""
    n = len(p_row)
    allowed = [j for j in range(n) if mask_row[j] == 0]
    out = [0.0] * n
    if allowed:
        m = max(p_row[j] for j in allowed)
        z = sum(math.exp(p_row[j] - m) for j in allowed)
        for j in allowed:
            out[j] = math.exp(p_row[j] - m) / z
    out[i] = 1.0
    return out


# -- recurrent cells --------------------------------------------------------


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def lstm_cell_oracle(x, h, c, w_ih, w_hh, b_ih, b_hh):
    """Scalar LSTM step on python lists with gate order (input, forget, cell, output)."""
    d = len(h)
    gates = []
    for r in range(4 * d):
        s = b_ih[r] + b_hh[r]
        s += sum(w_ih[r][k] * x[k] for k in range(len(x)))
        s += sum(w_hh[r][k] * h[k] for k in range(d))
        gates.append(s)
    h_new, c_new = [], []
    for k in range(d):
        i = _sigmoid(gates[k])
        f = _sigmoid(gates[d + k])
        g = math.tanh(gates[2 * d + k])
        o = _sigmoid(gates[3 * d + k])
        c_k = f * c[k] + i * g
        c_new.append(c_k)
        h_new.append(o * math.tanh(c_k))
    return h_new, c_new


def gru_cell_oracle(x, h, w_ih, w_hh, b_ih, b_hh):
    """Scalar GRU step with gate order (reset, update, new)."""
    d = len(h)

    def lin(w, b, v, r):
        return b[r] + sum(w[r][k] * v[k] for k in range(len(v)))

    out = []
    for k in range(d):
        r = _sigmoid(lin(w_ih, b_ih, x, k) + lin(w_hh, b_hh, h, k))
        z = _sigmoid(lin(w_ih, b_ih, x, d + k) + lin(w_hh, b_hh, h, d + k))
        n = math.tanh(lin(w_ih, b_ih, x, 2 * d + k) + r * lin(w_hh, b_hh, h, 2 * d + k))
        out.append((1 - z) * n + z * h[k])
    return out


# -- graph attention --------------------------------------------------------


def gat_oracle(adjacency, h, weight, attn, activation, log_bias=True, slope=0.2):
    """Loop-based multi-head attention; heads share ``weight`` and are averaged."""
    n = len(h)
    dim_in = len(h[0])
    dim = len(weight[0])
    z = [[sum(h[i][k] * weight[k][c] for k in range(dim_in)) for c in range(dim)] for i in range(n)]
    heads = len(attn)
    alphas = []
    out = [[0.0] * dim for _ in range(n)]
    for a in attn:
        alpha = [[0.0] * n for _ in range(n)]
        for i in range(n):
            logits = {}
            for j in range(n):
                if adjacency[i][j] <= 0:
                    continue
                e = sum(a[c] * z[i][c] for c in range(dim)) + sum(a[dim + c] * z[j][c] for c in range(dim))
                e = e if e > 0 else slope * e
                if log_bias:
                    e += math.log(adjacency[i][j])
                logits[j] = e
            m = max(logits.values())
            s = sum(math.exp(v - m) for v in logits.values())
            for j, v in logits.items():
                alpha[i][j] = math.exp(v - m) / s
            for c in range(dim):
                out[i][c] += sum(alpha[i][j] * z[j][c] for j in range(n)) / heads
        alphas.append(alpha)
    return [[activation(v) for v in row] for row in out], alphas


# -- SMILES token counting --------------------------------------------------

_TOKEN = re.compile(r"\[[^\]]+\]|Cl|Br|%\d\d|[BCNOPSFI]|[bcnops]|\d|[=#:/\\\-().]")


def smiles_counts(smiles):
    """(atoms, bonds) from token counts: tree edges per component plus ring closures."""
    tokens = _TOKEN.findall(smiles)
    assert "".join(tokens) == smiles, "oracle tokenizer must consume the whole string"
    atoms = sum(1 for t in tokens if t.startswith("[") or t[0].isalpha())
    ring_labels = sum(1 for t in tokens if t.isdigit() or t.startswith("%"))
    components = smiles.count(".") + 1
    return atoms, atoms - components + ring_labels // 2
