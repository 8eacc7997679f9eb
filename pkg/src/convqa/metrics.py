"""Evaluation measurements: accuracy and thresholded Wu-Palmer scores.

Accuracy is exact case-folded string match.  WUPS@t softens that with
Wu-Palmer word similarity over a user-supplied taxonomy tree: each answer is
split into a word set, every word is matched to its best counterpart on the
other side, the per-word scores are multiplied, and the lower of the two
directions counts.  A word-pair similarity below the threshold t is scaled
by 0.1, so WUPS@0.0 is the lenient operating point and WUPS@0.9 the strict
one.
"""

from __future__ import annotations

import warnings

from .errors import OutOfTaxonomyError, TaxonomyError

DOWNWEIGHT = 0.1
ROOT_PARENT = "ROOT"


class TaxonomyTree:
    """Single-rooted word taxonomy with depths counted from 1 at the root."""

    def __init__(self, parent_of: dict[str, str], root: str):
        if root in parent_of:
            raise TaxonomyError(f"root {root!r} must not have a parent entry")
        self.root = root
        self.parent_of = dict(parent_of)
        self.depth_of = {root: 1}
        for word in self.parent_of:
            self._resolve_depth(word)

    def _resolve_depth(self, word: str) -> int:
        chain = []
        cursor = word
        while cursor not in self.depth_of:
            chain.append(cursor)
            if cursor not in self.parent_of:
                raise TaxonomyError(f"node {cursor!r} is not connected to the root")
            cursor = self.parent_of[cursor]
            if cursor in chain:
                raise TaxonomyError(f"cycle detected at node {cursor!r}")
        depth = self.depth_of[cursor]
        for node in reversed(chain):
            depth += 1
            self.depth_of[node] = depth
        return self.depth_of[word]

    @classmethod
    def from_lines(cls, lines, source: str = "<lines>") -> "TaxonomyTree":
        parent_of: dict[str, str] = {}
        root = None
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise TaxonomyError(
                    f"{source}:{lineno}: expected 'child<TAB>parent', got {line!r}"
                )
            child, parent = parts
            if child in parent_of or child == root:
                raise TaxonomyError(f"{source}:{lineno}: node {child!r} defined twice")
            if parent == ROOT_PARENT:
                if root is not None:
                    raise TaxonomyError(
                        f"{source}:{lineno}: second root {child!r}; {root!r} is already the root"
                    )
                root = child
            else:
                parent_of[child] = parent
        if root is None:
            raise TaxonomyError(f"{source}: no node with parent {ROOT_PARENT!r}")
        return cls(parent_of, root)

    def __contains__(self, word: str) -> bool:
        return word in self.depth_of

    def __len__(self) -> int:
        return len(self.depth_of)

    def depth(self, word: str) -> int:
        try:
            return self.depth_of[word]
        except KeyError:
            raise OutOfTaxonomyError(f"word {word!r} is not in the taxonomy") from None

    def lowest_common_ancestor(self, a: str, b: str) -> str:
        """Deepest node that is an ancestor-or-self of both words."""
        ancestors = set()
        cursor = a
        while True:
            ancestors.add(cursor)
            if cursor == self.root:
                break
            cursor = self.parent_of[cursor]
        cursor = b
        while cursor not in ancestors:
            cursor = self.parent_of[cursor]
        return cursor


def load_taxonomy(path) -> TaxonomyTree:
    with open(path, "r", encoding="utf-8") as fh:
        return TaxonomyTree.from_lines(fh, source=str(path))


def wup_similarity(a: str, b: str, tree: TaxonomyTree) -> float:
    """2 * depth(lca) / (depth(a) + depth(b)); 1.0 exactly when a == b."""
    depth_a = tree.depth(a)
    depth_b = tree.depth(b)
    lca = tree.lowest_common_ancestor(a, b)
    return 2.0 * tree.depth(lca) / (depth_a + depth_b)


def _pair_score(a: str, b: str, tree: TaxonomyTree, strict: bool) -> float:
    if a not in tree or b not in tree:
        if strict:
            missing = a if a not in tree else b
            raise OutOfTaxonomyError(f"word {missing!r} is not in the taxonomy")
        return 1.0 if a == b else 0.0
    return wup_similarity(a, b, tree)


def _thresholded(score: float, threshold: float) -> float:
    return score if score >= threshold else DOWNWEIGHT * score


def _answer_words(answer: str) -> list[str]:
    return sorted(set(answer.casefold().split()))


def _sample_score(pred: str, truth: str, tree: TaxonomyTree, threshold: float, strict: bool) -> float:
    pred_words = _answer_words(pred)
    truth_words = _answer_words(truth)
    if not pred_words and not truth_words:
        return 1.0
    if not pred_words or not truth_words:
        return 0.0

    def direction(from_words, to_words) -> float:
        product = 1.0
        for a in from_words:
            best = max(
                _thresholded(_pair_score(a, b, tree, strict), threshold)
                for b in to_words
            )
            product *= best
        return product

    return min(direction(pred_words, truth_words), direction(truth_words, pred_words))


def wups_at_t(
    predictions: list[str],
    truths: list[str],
    tree: TaxonomyTree,
    threshold: float,
    strict: bool = False,
) -> float:
    """Mean thresholded Wu-Palmer answer score over paired samples.

    Out-of-taxonomy words fall back to exact-match scoring unless ``strict``
    is set, in which case they raise.
    """
    if len(predictions) != len(truths):
        raise ValueError(
            f"wups_at_t: {len(predictions)} predictions vs {len(truths)} truths"
        )
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"wups_at_t: threshold must be in [0, 1], got {threshold}")
    if not predictions:
        warnings.warn("wups_at_t over zero samples is vacuously 1.0", stacklevel=2)
        return 1.0
    total = 0.0
    for pred, truth in zip(predictions, truths):
        total += _sample_score(pred, truth, tree, threshold, strict)
    return total / len(predictions)


def accuracy(predictions: list[str], truths: list[str]) -> float:
    """Fraction of exact case-folded string matches."""
    if len(predictions) != len(truths):
        raise ValueError(
            f"accuracy: {len(predictions)} predictions vs {len(truths)} truths"
        )
    if not predictions:
        raise ValueError("accuracy over zero samples is undefined")
    hits = sum(1 for p, t in zip(predictions, truths) if p.casefold() == t.casefold())
    return hits / len(predictions)


def score_report(
    predictions: list[str], truths: list[str], tree: TaxonomyTree | None = None
) -> dict:
    """The JSON-ready report: accuracy, optional WUPS at 0.0 and 0.9, and n."""
    report = {
        "accuracy": accuracy(predictions, truths),
        "n": len(predictions),
    }
    if tree is not None:
        report["wups_0.0"] = wups_at_t(predictions, truths, tree, 0.0)
        report["wups_0.9"] = wups_at_t(predictions, truths, tree, 0.9)
    return report
