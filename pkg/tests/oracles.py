"""Independent, loop-based recomputations used as test oracles.

Nothing here shares code with the package's vectorized implementations:
the point is that both sides implement the same written-down rules.
"""

import math


def naive_windowed_encoding(embedding, window, ids):
    length = len(ids)
    d_enc = len(embedding[0])
    h1 = []
    for i in range(length):
        lo = max(0, i - window)
        hi = min(length, i + window + 1)
        row = []
        for c in range(d_enc):
            total = 0.0
            for j in range(lo, hi):
                total += float(embedding[ids[j]][c])
            row.append(total / (hi - lo))
        h1.append(row)
    return h1


def _mat_vec_t(w, x):
    """w' x for a (n_in, n_out) table and length-n_in vector, via loops."""
    n_in = len(w)
    n_out = len(w[0])
    return [sum(float(w[i][k]) * x[i] for i in range(n_in)) for k in range(n_out)]


def naive_fusion_forward(params, h1, pos, neg, order):
    """Step-by-step recomputation of the gated fusion stack."""
    p = params
    length = len(h1)
    d = len(p["b1"])

    h2, f1, h3, g, o = [], [], [], [], []
    for i in range(length):
        u1 = _mat_vec_t(p["W1"], h1[i])
        h2_i = [max(u1[k] + float(p["b1"][k]), 0.0) for k in range(d)]

        f_pos = [float(v) for v in p["e_pos"][pos[i]]]
        f_neg = [float(v) for v in p["e_neg"][neg[i]]]
        f_ord = [float(v) for v in p["e_order"][order[i]]]
        uf_pos = _mat_vec_t(p["W_pos"], f_pos)
        uf_neg = _mat_vec_t(p["W_neg"], f_neg)
        uf_ord = _mat_vec_t(p["W_order"], f_ord)
        f1_i = [max(uf_pos[k] + uf_neg[k] + uf_ord[k] + float(p["b_f"][k]), 0.0)
                for k in range(d)]

        z = f1_i + h2_i
        u3 = _mat_vec_t(p["W_fm"], z)
        h3_i = [math.tanh(u3[k] + float(p["b_fm"][k])) for k in range(d)]
        ug = _mat_vec_t(p["W_g"], z)
        g_i = [1.0 / (1.0 + math.exp(-(ug[k] + float(p["c_g"][k])))) for k in range(d)]
        o_i = [g_i[k] * h3_i[k] + (1.0 - g_i[k]) * h2_i[k] for k in range(d)]

        h2.append(h2_i)
        f1.append(f1_i)
        h3.append(h3_i)
        g.append(g_i)
        o.append(o_i)

    c_max = [max(o[i][k] for i in range(length)) for k in range(d)]
    c_mean = [sum(o[i][k] for i in range(length)) / length for k in range(d)]
    c = c_max + c_mean
    scores = _mat_vec_t(p["W_y"], c)
    scores = [scores[k] + float(p["b_y"][k]) for k in range(len(p["b_y"]))]
    peak = max(scores)
    exps = [math.exp(s - peak) for s in scores]
    total = sum(exps)
    return [e / total for e in exps]


def naive_forward(embedding, window, head_params, ids, pos, neg, order):
    h1 = naive_windowed_encoding(embedding, window, ids)
    return naive_fusion_forward(head_params, h1, pos, neg, order)


def naive_focal_loss(probs, label_index, gamma):
    p = max(float(probs[label_index]), 1e-12)
    return -((1.0 - p) ** gamma) * math.log(p)


def brute_force_mentions(entries, text):
    """All-substring scan plus the longest-match containment filter."""
    hits = []
    for entry in entries:
        start = 0
        while True:
            idx = text.find(entry, start)
            if idx < 0:
                break
            hits.append((idx, idx + len(entry), entry))
            start = idx + 1
    ranked = sorted(hits, key=lambda h: (-(h[1] - h[0]), h[0], h[2]))
    accepted = []
    for start, end, entry in ranked:
        if not any(a <= start and end <= b for a, b, _ in accepted):
            accepted.append((start, end, entry))
    return sorted(accepted)


def naive_info_nce(u_hats, v_hats, anchors, tau):
    """Mean anchored InfoNCE over explicit unit vectors, via loops."""
    losses = []
    for i in anchors:
        logits = []
        for v in v_hats:
            sim = sum(a * b for a, b in zip(u_hats[i], v))
            logits.append(sim / tau)
        peak = max(logits)
        total = sum(math.exp(x - peak) for x in logits)
        losses.append(-(logits[i] - peak - math.log(total)))
    return sum(losses) / len(losses)


def finite_difference_worst_error(model, sample, label_index, h=1e-5):
    """Largest scaled |analytic - central difference| over every parameter.

    The scale floors at 1e-6 so near-zero gradients are judged on an
    absolute basis instead of blowing up the ratio.
    """
    from dxaudit.context_model import focal_loss

    _, head_grads, enc_grads = model.loss_and_grads(sample, label_index)
    analytic = dict(head_grads)
    analytic["__embedding__"] = enc_grads["embedding"]
    tables = {name: arr for name, arr in model.head.p.items()}
    tables["__embedding__"] = model.encoder.embedding

    worst = 0.0
    for name, table in tables.items():
        grad = analytic[name].reshape(-1)
        flat = table.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + h
            up = focal_loss(model.forward(sample), label_index,
                            model.config.focal_gamma)
            flat[k] = saved - h
            down = focal_loss(model.forward(sample), label_index,
                              model.config.focal_gamma)
            flat[k] = saved
            numeric = (up - down) / (2 * h)
            err = abs(numeric - grad[k]) / max(abs(numeric), abs(grad[k]), 1e-6)
            worst = max(worst, err)
    return worst


def naive_score(predictions, gold):
    pred = set(predictions)
    truth = set(gold)
    if not pred and not truth:
        return 1.0, 1.0, 1.0
    tp = sum(1 for item in pred if item in truth)
    precision = tp / len(pred) if pred else 0.0
    recall = tp / len(truth) if truth else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)
