"""Independent brute-force oracles used to cross-check the fast paths.

Everything here is deliberately naive: plain recursion over whole
derivations, no binarization, no charts, no unit-rule closure, no cache.
Slow but obviously correct on tiny grammars. Rules are passed as plain
(lhs, rhs, prob) triples so these functions share no code with the
package under test.
"""

import math


def _index(rules):
    by_lhs = {}
    for lhs, rhs, prob in rules:
        by_lhs.setdefault(lhs, []).append((tuple(rhs), float(prob)))
    return by_lhs


def oracle_string_probs(rules, start, max_len, prob_floor=0.0):
    """Map each terminal string of length <= max_len to its total
    probability, summed over every derivation (leftmost expansion).

    prob_floor > 0 truncates derivation branches whose probability falls
    below the floor; needed to terminate on unit-cyclic grammars, at the
    cost of underestimating masses by at most the truncated tail.
    """
    by_lhs = _index(rules)
    out = {}

    def expand(form, prob):
        for idx, sym in enumerate(form):
            if sym in by_lhs:
                for rhs, p in by_lhs[sym]:
                    branch = prob * p
                    if branch <= prob_floor:
                        continue
                    nxt = form[:idx] + rhs + form[idx + 1 :]
                    # no epsilon rules, so every symbol yields >= 1 token
                    if len(nxt) <= max_len:
                        expand(nxt, branch)
                return
        out[form] = out.get(form, 0.0) + prob

    expand((start,), 1.0)
    return out


def oracle_derivation_count(rules, start, tokens):
    """Number of derivations of tokens, counting duplicate rules
    separately. Only safe on grammars without unit-rule cycles."""
    target = tuple(tokens)
    by_lhs = _index(rules)

    def expand(form):
        for idx, sym in enumerate(form):
            if sym in by_lhs:
                break
        else:
            return 1 if form == target else 0
        if len(form) > len(target) or form[:idx] != target[:idx]:
            return 0
        return sum(
            expand(form[:idx] + rhs + form[idx + 1 :]) for rhs, _ in by_lhs[sym]
        )

    return expand((start,))


def oracle_entropy(rules, start, max_len):
    """Exact entropy in nats of a finite language, via oracle_string_probs.
    Asserts the enumeration captured essentially all probability mass."""
    probs = oracle_string_probs(rules, start, max_len)
    mass = sum(probs.values())
    assert abs(mass - 1.0) < 1e-9, f"oracle enumeration lost mass: {mass}"
    return -sum(p * math.log(p) for p in probs.values())


def worst_finite_difference_error(
    loss_fn, tensors, grads, n_coords, rng, h=1e-6, floor=1e-8
):
    """Worst relative error of analytic grads against central differences
    over n_coords randomly chosen parameter coordinates. loss_fn() must
    recompute the scalar loss from the tensors' current .data."""
    names = sorted(tensors)
    worst = 0.0
    for _ in range(n_coords):
        name = names[int(rng.integers(len(names)))]
        t = tensors[name]
        idx = tuple(int(rng.integers(d)) for d in t.data.shape)
        keep = t.data[idx]
        t.data[idx] = keep + h
        up = loss_fn()
        t.data[idx] = keep - h
        down = loss_fn()
        t.data[idx] = keep
        numeric = (up - down) / (2.0 * h)
        analytic = grads[name][idx]
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), floor)
        worst = max(worst, rel)
    return worst
