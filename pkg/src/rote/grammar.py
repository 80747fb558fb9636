"""Probabilistic context-free grammars.

Parsing and validation of grammar files, leftmost-derivation sampling,
exact string log-probabilities via the inside algorithm (derivation-sum
semantics, so ambiguous grammars are handled correctly), brute-force
language enumeration, exact and Monte Carlo entropy, and dataset draws
with optional exclusion of a designated string.

All log quantities are natural log (nats). All sampling is deterministic
given (grammar, seed). Inside probabilities are computed in probability
space with float64, which is ample for desk-scale string lengths.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter, defaultdict, deque
from dataclasses import dataclass
from functools import lru_cache
from importlib.resources import files as _resource_files

import numpy as np

from .errors import ConfigError, RunError

__all__ = [
    "ProductionRule",
    "ProbabilisticGrammar",
    "SampledString",
    "StringDataset",
    "grammar_from_rules",
    "parse_grammar",
    "load_grammar",
    "grammar_text",
    "asset_names",
    "sample_string",
    "string_logprob",
    "derivation_count",
    "enumerate_language",
    "entropy_exact",
    "entropy_monte_carlo",
    "sample_dataset",
    "dataset_from_strings",
]

PROB_SUM_TOL = 1e-9
DEFAULT_MAX_REWRITES = 512
DEFAULT_STATE_BUDGET = 1_000_000


@dataclass(frozen=True)
class ProductionRule:
    """One rewrite rule: lhs -> rhs with conditional probability prob."""

    lhs: str
    rhs: tuple[str, ...]
    prob: float


@dataclass(frozen=True)
class ProbabilisticGrammar:
    """A validated PCFG. Construct via grammar_from_rules or parse_grammar."""

    start: str
    rules: tuple[ProductionRule, ...]
    nonterminals: frozenset[str]
    terminals: frozenset[str]


@dataclass(frozen=True)
class SampledString:
    """A terminal string plus the log-probability of the derivation that
    produced it (sum of log rule probabilities, not the string's total
    probability under an ambiguous grammar)."""

    tokens: tuple[str, ...]
    derivation_logprob: float


# ---------------------------------------------------------------------------
# construction and validation


def grammar_from_rules(rules, start: str | None = None) -> ProbabilisticGrammar:
    """Validate rules and build a grammar. start defaults to the first lhs.

    Rejects: empty rule set, epsilon rules, probabilities outside (0, 1],
    per-nonterminal probability sums off by more than 1e-9, and symbols
    that are unreachable from start or cannot derive any terminal string.
    """
    rules = tuple(
        ProductionRule(str(r.lhs), tuple(str(s) for s in r.rhs), float(r.prob))
        for r in rules
    )
    if not rules:
        raise ConfigError("grammar has no rules")
    if start is None:
        start = rules[0].lhs
    nonterminals = frozenset(r.lhs for r in rules)
    if start not in nonterminals:
        raise ConfigError(f"start symbol {start!r} has no rules")
    terminals = frozenset(s for r in rules for s in r.rhs if s not in nonterminals)

    for r in rules:
        if len(r.rhs) == 0:
            raise ConfigError(f"epsilon rule not allowed: {r.lhs} -> []")
        if not (0.0 < r.prob <= 1.0):
            raise ConfigError(
                f"rule probability must be in (0, 1]: {r.lhs} -> {' '.join(r.rhs)} "
                f"[{r.prob!r}]"
            )

    sums: dict[str, float] = {}
    for r in rules:
        sums[r.lhs] = sums.get(r.lhs, 0.0) + r.prob
    for lhs in sorted(sums):
        if abs(sums[lhs] - 1.0) > PROB_SUM_TOL:
            raise ConfigError(
                f"rule probabilities for {lhs} sum to {sums[lhs]!r}, expected 1"
            )

    by_lhs: dict[str, list[ProductionRule]] = defaultdict(list)
    for r in rules:
        by_lhs[r.lhs].append(r)
    reachable = {start}
    frontier = [start]
    while frontier:
        for r in by_lhs[frontier.pop()]:
            for s in r.rhs:
                if s in nonterminals and s not in reachable:
                    reachable.add(s)
                    frontier.append(s)
    unreachable = sorted(nonterminals - reachable)
    if unreachable:
        raise ConfigError(f"unreachable nonterminals: {', '.join(unreachable)}")

    min_len = _min_terminal_lengths(rules, nonterminals)
    dead = sorted(n for n in nonterminals if n not in min_len)
    if dead:
        raise ConfigError(
            f"non-productive nonterminals (derive no terminal string): {', '.join(dead)}"
        )

    return ProbabilisticGrammar(
        start=start, rules=rules, nonterminals=nonterminals, terminals=terminals
    )


def _min_terminal_lengths(rules, nonterminals) -> dict[str, int]:
    """Shortest derivable terminal-string length per nonterminal (fixpoint).
    Nonterminals absent from the result derive no terminal string."""
    min_len: dict[str, int] = {}
    changed = True
    while changed:
        changed = False
        for r in rules:
            total = 0
            for s in r.rhs:
                if s in nonterminals:
                    if s not in min_len:
                        break
                    total += min_len[s]
                else:
                    total += 1
            else:
                if total < min_len.get(r.lhs, math.inf):
                    min_len[r.lhs] = total
                    changed = True
    return min_len


_ARROW = "->"


def parse_grammar(text: str) -> ProbabilisticGrammar:
    """Parse grammar text: one `LHS -> SYM SYM ... [prob]` per line,
    `#` starts a comment, first rule's lhs is the start symbol."""
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if _ARROW not in line:
            raise ConfigError(
                f"line {lineno}, column 1: expected 'LHS -> SYM ... [prob]', "
                f"got {line.strip()!r}"
            )
        lhs_part, rhs_part = line.split(_ARROW, 1)
        lhs_syms = lhs_part.split()
        if len(lhs_syms) != 1:
            raise ConfigError(
                f"line {lineno}, column 1: left-hand side must be one symbol, "
                f"got {lhs_part.strip()!r}"
            )
        m = re.search(r"\[([^\[\]]*)\]\s*$", rhs_part)
        if m is None:
            raise ConfigError(
                f"line {lineno}, column {len(raw) + 1}: missing trailing '[prob]'"
            )
        prob_col = line.index(_ARROW) + len(_ARROW) + m.start() + 2
        try:
            prob = float(m.group(1))
        except ValueError:
            raise ConfigError(
                f"line {lineno}, column {prob_col}: "
                f"bad probability {m.group(1).strip()!r}"
            ) from None
        rhs = tuple(rhs_part[: m.start()].split())
        if not rhs:
            raise ConfigError(
                f"line {lineno}: epsilon rule (empty right-hand side) not allowed"
            )
        rules.append(ProductionRule(lhs_syms[0], rhs, prob))
    if not rules:
        raise ConfigError("grammar text contains no rules")
    return grammar_from_rules(rules, start=rules[0].lhs)


def asset_names() -> list[str]:
    """Names of grammar files shipped with the package (without extension)."""
    root = _resource_files("rote.assets")
    return sorted(p.name[: -len(".pcfg")] for p in root.iterdir() if p.name.endswith(".pcfg"))


def grammar_text(spec: str) -> str:
    """Raw text of a grammar file or shipped asset name."""
    import os

    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            return fh.read()
    asset = _resource_files("rote.assets").joinpath(f"{spec}.pcfg")
    if asset.is_file():
        return asset.read_text(encoding="utf-8")
    raise ConfigError(f"no such grammar file or asset: {spec!r}")


def load_grammar(spec: str) -> ProbabilisticGrammar:
    """Load a grammar from a filesystem path or a shipped asset name
    (e.g. "g1", "desk_lo")."""
    return parse_grammar(grammar_text(spec))


# ---------------------------------------------------------------------------
# compiled form: sampler indexes plus inside-algorithm tables


class _Tables:
    """Binarized rule tables with unit-rule chains closed. Values are
    probabilities or derivation counts depending on the semiring."""

    __slots__ = ("term_apply", "by_pair", "start_id", "n_syms")

    def __init__(self, term_apply, by_pair, start_id, n_syms):
        self.term_apply = term_apply  # terminal -> (ids list, weights list)
        self.by_pair = by_pair  # (id, id) -> (ids list, weights list)
        self.start_id = start_id
        self.n_syms = n_syms


class _Compiled:
    __slots__ = ("options", "cum", "min_len_sym", "prob_tables", "logprob_cache")

    def __init__(self, options, cum, min_len_sym, prob_tables):
        self.options = options  # lhs -> list of (rhs, prob)
        self.cum = cum  # lhs -> cumulative probability array
        self.min_len_sym = min_len_sym  # symbol -> shortest terminal length
        self.prob_tables = prob_tables
        self.logprob_cache: dict[tuple[str, ...], float] = {}


def _bool_closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure of a boolean adjacency matrix."""
    n = adj.shape[0]
    reach = (np.eye(n, dtype=np.int64) + adj.astype(np.int64)).clip(0, 1)
    for _ in range(max(1, math.ceil(math.log2(max(n, 2)))) + 1):
        reach = (reach @ reach).clip(0, 1)
    return reach > 0


def _build_tables(g: ProbabilisticGrammar, semiring: str) -> _Tables:
    """Binarize the grammar and close unit-rule chains.

    Long right-hand sides become right-branching chains of fresh suffix
    symbols (shared across rules by suffix content); terminals inside
    length>=2 sides get fresh preterminal wrappers. Unit-rule closure is
    U = (I - M)^-1 in the probability semiring (masked by exact boolean
    reachability to kill solver noise) and a nilpotent Neumann sum in the
    count semiring, which requires an acyclic unit graph.
    """
    sym_id: dict[object, int] = {}

    def intern(key) -> int:
        if key not in sym_id:
            sym_id[key] = len(sym_id)
        return sym_id[key]

    nt_id = {nt: intern(nt) for nt in sorted(g.nonterminals)}

    unit_entries: list[tuple[int, int, float]] = []
    term_entries: list[tuple[int, str, float]] = []
    bin_entries: list[tuple[int, int, int, float]] = []

    pre_id: dict[str, int] = {}

    def wrap(sym: str) -> int:
        if sym in nt_id:
            return nt_id[sym]
        pid = pre_id.get(sym)
        if pid is None:
            pid = intern(("PT", sym))
            pre_id[sym] = pid
            term_entries.append((pid, sym, 1.0))
        return pid

    suffix_id: dict[tuple[int, ...], int] = {}

    def suffix(ids: tuple[int, ...]) -> int:
        sid = suffix_id.get(ids)
        if sid is not None:
            return sid
        if len(ids) == 2:
            sid = intern(("SUF",) + ids)
            bin_entries.append((sid, ids[0], ids[1], 1.0))
        else:
            rest = suffix(ids[1:])
            sid = intern(("SUF",) + ids)
            bin_entries.append((sid, ids[0], rest, 1.0))
        suffix_id[ids] = sid
        return sid

    for r in g.rules:
        w = r.prob if semiring == "prob" else 1.0
        if len(r.rhs) == 1:
            s = r.rhs[0]
            if s in nt_id:
                unit_entries.append((nt_id[r.lhs], nt_id[s], w))
            else:
                term_entries.append((nt_id[r.lhs], s, w))
        else:
            ids = tuple(wrap(s) for s in r.rhs)
            right = ids[1] if len(ids) == 2 else suffix(ids[1:])
            bin_entries.append((nt_id[r.lhs], ids[0], right, w))

    n = len(sym_id)
    M = np.zeros((n, n))
    for a, b, w in unit_entries:
        M[a, b] += w

    if semiring == "prob":
        try:
            U = np.linalg.solve(np.eye(n) - M, np.eye(n))
        except np.linalg.LinAlgError:
            raise RunError("unit-rule closure is singular; unit cycles carry mass 1")
        U[~_bool_closure(M > 0)] = 0.0
        U[U < 0] = 0.0
        if not np.all(np.isfinite(U)):
            raise RunError("unit-rule closure diverged")
    else:
        direct = M > 0
        n_steps = max(1, math.ceil(math.log2(max(n, 2)))) + 1
        paths = direct.astype(np.int64)
        for _ in range(n_steps):
            paths = (paths + paths @ paths).clip(0, 1)
        if np.any(np.diag(paths) > 0):
            raise RunError("derivation counting requires an acyclic unit-rule graph")
        U = np.eye(n)
        for _ in range(n):
            nxt = np.eye(n) + M @ U
            if np.array_equal(nxt, U):
                break
            U = nxt

    raw_term: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(n))
    for a, tok, w in term_entries:
        raw_term[tok][a] += w
    term_apply = {}
    for tok in sorted(raw_term):
        closed = U @ raw_term[tok]
        ids = np.nonzero(closed > 0)[0]
        term_apply[tok] = (ids.tolist(), closed[ids].tolist())

    raw_pair: dict[tuple[int, int], np.ndarray] = defaultdict(lambda: np.zeros(n))
    for a, b, c, w in bin_entries:
        raw_pair[(b, c)][a] += w
    by_pair = {}
    for key in sorted(raw_pair):
        closed = U @ raw_pair[key]
        ids = np.nonzero(closed > 0)[0]
        by_pair[key] = (ids.tolist(), closed[ids].tolist())

    return _Tables(term_apply, by_pair, nt_id[g.start], n)


@lru_cache(maxsize=64)
def _compile(g: ProbabilisticGrammar) -> _Compiled:
    options: dict[str, list[tuple[tuple[str, ...], float]]] = defaultdict(list)
    for r in g.rules:
        options[r.lhs].append((r.rhs, r.prob))
    cum = {lhs: np.cumsum([p for _, p in opts]) for lhs, opts in options.items()}
    min_len = _min_terminal_lengths(g.rules, g.nonterminals)
    min_len_sym = {t: 1 for t in g.terminals}
    min_len_sym.update(min_len)
    return _Compiled(dict(options), cum, min_len_sym, _build_tables(g, "prob"))


@lru_cache(maxsize=64)
def _count_tables(g: ProbabilisticGrammar) -> _Tables:
    return _build_tables(g, "count")


# ---------------------------------------------------------------------------
# sampling


def sample_string(
    g: ProbabilisticGrammar, rng_seed, max_rewrites: int = DEFAULT_MAX_REWRITES
) -> SampledString:
    """Draw one string by leftmost rewriting from the start symbol.

    rng_seed may be anything np.random.default_rng accepts, or an existing
    Generator (consumed statefully, as sample_dataset does internally).
    """
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )
    comp = _compile(g)
    pending = deque([g.start])
    tokens: list[str] = []
    logprob = 0.0
    rewrites = 0
    while pending:
        sym = pending.popleft()
        opts = comp.options.get(sym)
        if opts is None:
            tokens.append(sym)
            continue
        rewrites += 1
        if rewrites > max_rewrites:
            raise RunError(
                f"derivation exceeded {max_rewrites} rewriting steps; "
                "grammar may not terminate"
            )
        cum = comp.cum[sym]
        k = int(np.searchsorted(cum, rng.random(), side="right"))
        if k >= len(opts):  # guard the cum[-1] < 1 rounding edge
            k = len(opts) - 1
        rhs, p = opts[k]
        logprob += math.log(p)
        pending.extendleft(reversed(rhs))
    return SampledString(tokens=tuple(tokens), derivation_logprob=logprob)


# ---------------------------------------------------------------------------
# inside algorithm (agenda over filled cells only)


def _chart_total(tables: _Tables, tokens: tuple[str, ...]) -> float:
    """Total weight of all derivations of tokens: probability mass in the
    prob semiring, number of derivations in the count semiring.

    Spans are finalized in increasing length. Completing a span pairs it
    with already-registered adjacent spans only, so work scales with the
    number of realized adjacent pairs rather than all O(T^3) cells. A pair
    of lengths (a, b) contributes to length a+b > max(a, b), so every
    contribution to a round arrives before that round is finalized.
    """
    T = len(tokens)
    by_start: dict[int, list[tuple[int, dict]]] = defaultdict(list)
    by_end: dict[int, list[tuple[int, dict]]] = defaultdict(list)
    pending: dict[int, dict[int, dict[int, float]]] = defaultdict(dict)

    for i, tok in enumerate(tokens):
        ids, weights = tables.term_apply[tok]
        cell = pending[1].setdefault(i, {})
        for a, w in zip(ids, weights):
            cell[a] = cell.get(a, 0.0) + w

    by_pair = tables.by_pair
    final: dict[int, float] | None = None
    for span in range(1, T + 1):
        round_cells = pending.pop(span, None)
        if not round_cells:
            continue
        for i in sorted(round_cells):
            cell = round_cells[i]
            if not cell:
                continue
            j = i + span
            for h, left in by_end.get(i, ()):  # left spans (h, i)
                target = pending[j - h].setdefault(h, {})
                _combine(left, cell, by_pair, target)
            for k, right in by_start.get(j, ()):  # right spans (j, k)
                target = pending[k - i].setdefault(i, {})
                _combine(cell, right, by_pair, target)
            by_start[i].append((j, cell))
            by_end[j].append((i, cell))
            if span == T and i == 0:
                final = cell
    if final is None:
        return 0.0
    return final.get(tables.start_id, 0.0)


def _combine(left: dict, right: dict, by_pair: dict, target: dict) -> None:
    for b, wb in left.items():
        for c, wc in right.items():
            entry = by_pair.get((b, c))
            if entry is None:
                continue
            w = wb * wc
            for a, wa in zip(entry[0], entry[1]):
                target[a] = target.get(a, 0.0) + w * wa


def string_logprob(g: ProbabilisticGrammar, tokens) -> float:
    """Log of the total probability of tokens (sum over all derivations).
    Returns -inf when the string is not in the language."""
    tokens = tuple(tokens)
    if not tokens:
        raise ConfigError("cannot score an empty token sequence")
    comp = _compile(g)
    cached = comp.logprob_cache.get(tokens)
    if cached is not None:
        return cached
    for t in tokens:
        if t not in g.terminals:
            raise ConfigError(f"token {t!r} is outside the grammar alphabet")
    total = _chart_total(comp.prob_tables, tokens)
    result = math.log(total) if total > 0.0 else float("-inf")
    comp.logprob_cache[tokens] = result
    return result


def derivation_count(g: ProbabilisticGrammar, tokens) -> int:
    """Number of distinct derivations of tokens (duplicate rules count
    separately). Requires an acyclic unit-rule graph."""
    tokens = tuple(tokens)
    if not tokens:
        raise ConfigError("cannot count derivations of an empty token sequence")
    for t in tokens:
        if t not in g.terminals:
            raise ConfigError(f"token {t!r} is outside the grammar alphabet")
    return int(round(_chart_total(_count_tables(g), tokens)))


# ---------------------------------------------------------------------------
# enumeration and entropy


def enumerate_language(
    g: ProbabilisticGrammar, max_len: int, state_budget: int = DEFAULT_STATE_BUDGET
) -> list[tuple[tuple[str, ...], float]]:
    """All strings of length <= max_len with their exact probabilities,
    found by depth-first expansion of sentential forms with shortest-
    completion pruning. Probabilities of a string's derivations are summed.
    Sorted by (length, tokens). Intended as a brute-force oracle; raises
    once the number of expanded states passes state_budget."""
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    comp = _compile(g)
    min_len_sym = comp.min_len_sym
    out: dict[tuple[str, ...], float] = {}
    stack: list[tuple[tuple[str, ...], tuple[str, ...], float]] = [
        ((), (g.start,), 1.0)
    ]
    states = 0
    while stack:
        prefix, rest, prob = stack.pop()
        states += 1
        if states > state_budget:
            raise RunError(
                f"language enumeration exceeded {state_budget} states at "
                f"max_len={max_len}"
            )
        if not rest:
            out[prefix] = out.get(prefix, 0.0) + prob
            continue
        head, tail = rest[0], rest[1:]
        opts = comp.options.get(head)
        if opts is None:  # terminal
            prefix = prefix + (head,)
            if len(prefix) + sum(min_len_sym[s] for s in tail) <= max_len:
                stack.append((prefix, tail, prob))
            continue
        for rhs, p in opts:
            nxt = rhs + tail
            if len(prefix) + sum(min_len_sym[s] for s in nxt) <= max_len:
                stack.append((prefix, nxt, prob * p))
    return sorted(out.items(), key=lambda kv: (len(kv[0]), kv[0]))


def entropy_exact(
    g: ProbabilisticGrammar, max_len: int, mass_tol: float = 1e-9
) -> float:
    """Exact Shannon entropy (nats) over the enumerated language. Requires
    the enumeration to capture probability mass >= 1 - mass_tol."""
    entries = enumerate_language(g, max_len)
    mass = sum(p for _, p in entries)
    if mass < 1.0 - mass_tol:
        raise RunError(
            f"enumeration up to length {max_len} captures mass {mass!r}; "
            "the language needs a larger max_len or a Monte Carlo estimate"
        )
    return -sum(p * math.log(p) for _, p in entries)


def entropy_monte_carlo(
    g: ProbabilisticGrammar, n_samples: int, seed
) -> tuple[float, float]:
    """Monte Carlo entropy estimate: minus the mean inside log-probability
    of n_samples i.i.d. strings, with its standard error. Uses inside
    probabilities, not derivation log-probs, so ambiguity is handled."""
    if n_samples < 2:
        raise ConfigError("entropy_monte_carlo needs n_samples >= 2")
    rng = np.random.default_rng(seed)
    vals = np.empty(n_samples)
    for i in range(n_samples):
        s = sample_string(g, rng)
        vals[i] = string_logprob(g, s.tokens)
    estimate = -float(np.mean(vals))
    std_error = float(np.std(vals, ddof=1) / math.sqrt(n_samples))
    return estimate, std_error


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class StringDataset:
    """A multiset of sampled strings. strings preserves draw order;
    freq maps each distinct string to its occurrence count."""

    strings: tuple[tuple[str, ...], ...]
    freq: dict
    seed: int

    @property
    def size(self) -> int:
        return len(self.strings)

    def by_frequency(self) -> list[tuple[tuple[str, ...], int]]:
        """Distinct strings with counts, most frequent first; ties broken
        by (length, tokens) for determinism."""
        return sorted(self.freq.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))

    def without(self, tokens) -> "StringDataset":
        """Multiset difference: every occurrence of tokens removed."""
        tokens = tuple(tokens)
        kept = tuple(s for s in self.strings if s != tokens)
        return dataset_from_strings(kept, self.seed)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "strings": [list(s) for s in self.strings]}
        )

    @staticmethod
    def from_json(text: str) -> "StringDataset":
        try:
            obj = json.loads(text)
            strings = tuple(tuple(s) for s in obj["strings"])
            seed = int(obj["seed"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed dataset JSON: {exc}") from None
        return dataset_from_strings(strings, seed)


def dataset_from_strings(strings, seed: int) -> StringDataset:
    strings = tuple(tuple(s) for s in strings)
    return StringDataset(strings=strings, freq=dict(Counter(strings)), seed=seed)


def sample_dataset(
    g: ProbabilisticGrammar,
    n: int,
    seed,
    exclude=None,
    rejection_budget: int | None = None,
) -> StringDataset:
    """Draw n i.i.d. strings; any draw equal to exclude is rejected and
    redrawn. The total number of draws (kept plus rejected) is capped at
    rejection_budget, default 100*n."""
    if n < 1:
        raise ConfigError("sample_dataset needs n >= 1")
    budget = 100 * n if rejection_budget is None else rejection_budget
    excl = tuple(exclude) if exclude is not None else None
    rng = np.random.default_rng(seed)
    samples: list[tuple[str, ...]] = []
    draws = 0
    while len(samples) < n:
        draws += 1
        if draws > budget:
            raise RunError(
                f"rejection budget {budget} exhausted after {len(samples)} "
                f"accepted draws; the excluded string carries too much mass"
            )
        s = sample_string(g, rng)
        if excl is not None and s.tokens == excl:
            continue
        samples.append(s.tokens)
    return StringDataset(
        strings=tuple(samples), freq=dict(Counter(samples)), seed=seed
    )
