"""Deterministic tweet normalization.

The normalizer works on a list of segments, each either free text or an
emitted placeholder.  Rules only ever rewrite free-text segments, so a
placeholder produced by an early rule cannot be damaged by a later one.
"""
from __future__ import annotations

import html
import itertools
import math
import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

DEFAULT_PLACEHOLDERS = {
    "mention": "<user>",
    "number": "<number>",
    "hashtag": "<hashtag>",
    "url": "<url>",
    "emoticon": "<emoticon>",
}

# Fixed rule order; tags appear in NormalizedText.applied_rules in this order.
RULE_ORDER = (
    "html-unescape",
    "url",
    "mention",
    "emoticon",
    "hashtag-segmented",
    "hashtag-unsegmented",
    "number",
    "elongation",
    "punctuation",
    "whitespace",
    "lowercase",
)

EMOTICONS = (
    ":)", ":-)", ":))", ":-))", ":]", ":-]", ":}", ":o)", ":c)", ":^)",
    "=)", "=]", ":D", ":-D", "=D", "XD", "xD", "X-D", ";)", ";-)", ";]",
    ";D", ":(", ":-(", ":((", ":[", ":-[", ":{", "=(", ":'(", ":'-(",
    ":')", ":'-)", ":P", ":-P", ":p", ":-p", "=P", ";P", ";p", ":O",
    ":-O", ":o", ":-o", ":*", ":-*", ";*", ":/", ":-/", ":\\", ":|",
    ":-|", ":$", ">:(", ">:-(", ">:)", "<3", "</3", "^^", "^_^", "^.^",
    "-_-", "o_O", "O_o", "o.O", "T_T", ";_;", "D:", "(:", "):",
)

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"(?<![\w@])@\w+")
_HASHTAG_RE = re.compile(r"#(\w+)")
_NUMBER_RE = re.compile(r"[0-9]+(?:[.,:][0-9]+)*")
_CAMEL_RE = re.compile(r"[A-Z]+(?![a-z])|[A-Z]?[a-z]+|[0-9]+")
_NON_ALPHA_RE = re.compile(r"[^A-Za-z\s]")
_APOSTROPHES = "'’‘`ʼ"


def _emoticon_pattern() -> re.Pattern:
    alts = []
    for emo in sorted(EMOTICONS, key=len, reverse=True):
        pat = re.escape(emo)
        if re.match(r"\w", emo[0]):
            pat = r"(?<!\w)" + pat
        if re.match(r"\w", emo[-1]):
            pat = pat + r"(?!\w)"
        alts.append(pat)
    return re.compile("|".join(alts))


_EMOTICON_RE = _emoticon_pattern()


def load_lexicon(path: str | Path) -> dict[str, int]:
    """Read a ``word<TAB>count`` file into a word→frequency table."""
    lexicon: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            word, _, count = line.partition("\t")
            lexicon[word.lower()] = lexicon.get(word.lower(), 0) + int(count or 1)
    return lexicon


@lru_cache(maxsize=1)
def _default_lexicon_items() -> tuple[tuple[str, int], ...]:
    ref = resources.files("hateclf") / "data" / "lexicon.tsv"
    with resources.as_file(ref) as path:
        return tuple(load_lexicon(path).items())


def default_lexicon() -> dict[str, int]:
    return dict(_default_lexicon_items())


@dataclass(frozen=True)
class NormalizerConfig:
    placeholder_map: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_PLACEHOLDERS))
    elongation_run_threshold: int = 3
    segmentation_lexicon: Mapping[str, int] = field(default_factory=default_lexicon)
    lowercase: bool = True

    def __post_init__(self):
        if self.elongation_run_threshold < 2:
            raise ValueError("elongation_run_threshold must be >= 2")
        missing = set(DEFAULT_PLACEHOLDERS) - set(self.placeholder_map)
        if missing:
            raise ValueError(f"placeholder_map lacks {sorted(missing)}")
        for kind, ph in self.placeholder_map.items():
            if not ph or any(c.isspace() for c in ph):
                raise ValueError(f"placeholder for {kind!r} must be nonempty without whitespace")

    @classmethod
    def from_dict(cls, d: Optional[Mapping]) -> "NormalizerConfig":
        d = dict(d or {})
        kwargs = {}
        if "placeholder_map" in d:
            kwargs["placeholder_map"] = {**DEFAULT_PLACEHOLDERS, **d["placeholder_map"]}
        if "elongation_run_threshold" in d:
            kwargs["elongation_run_threshold"] = int(d["elongation_run_threshold"])
        if d.get("lexicon"):
            kwargs["segmentation_lexicon"] = load_lexicon(d["lexicon"])
        if "lowercase" in d:
            kwargs["lowercase"] = bool(d["lowercase"])
        return cls(**kwargs)


@dataclass(frozen=True)
class NormalizedText:
    text: str
    applied_rules: tuple[str, ...] = ()

    def __str__(self) -> str:
        return self.text


def collapse_elongation(word: str, threshold: int = 3) -> str:
    """Replace every run of one repeated character of length >= threshold by a
    single occurrence.  Runs are compared case-insensitively."""
    out = []
    for _, group in itertools.groupby(word, key=str.lower):
        run = list(group)
        out.append(run[0] if len(run) >= threshold else "".join(run))
    return "".join(out)


class _Segmenter:
    """Max-product-of-relative-frequency word segmentation over a lexicon."""

    def __init__(self, lexicon: Mapping[str, int]):
        total = sum(lexicon.values()) or 1
        self.logp = {w: math.log(c / total) for w, c in lexicon.items() if c > 0}
        self.max_len = max((len(w) for w in self.logp), default=0)

    def segment(self, text: str) -> Optional[list[str]]:
        n = len(text)
        best: list[Optional[tuple[float, int]]] = [None] * (n + 1)
        best[0] = (0.0, 0)
        for end in range(1, n + 1):
            for start in range(max(0, end - self.max_len), end):
                if best[start] is None:
                    continue
                lp = self.logp.get(text[start:end])
                if lp is None:
                    continue
                score = best[start][0] + lp
                # strict > keeps the earliest split point on ties
                if best[end] is None or score > best[end][0]:
                    best[end] = (score, start)
        if best[n] is None:
            return None
        words, end = [], n
        while end > 0:
            start = best[end][1]
            words.append(text[start:end])
            end = start
        return words[::-1]


@lru_cache(maxsize=8)
def _segmenter_for(items: tuple[tuple[str, int], ...]) -> _Segmenter:
    return _Segmenter(dict(items))


def _segmenter(lexicon: Mapping[str, int]) -> _Segmenter:
    return _segmenter_for(tuple(sorted(lexicon.items())))


def _segment_body(body: str, lexicon: Mapping[str, int]) -> Optional[list[str]]:
    fragments = _CAMEL_RE.findall(body)
    if not fragments or "".join(fragments) != body.replace("_", ""):
        return None
    seg = _segmenter(lexicon)
    words: list[str] = []
    for frag in fragments:
        part = seg.segment(frag.lower())
        if part is None:
            return None
        words.extend(part)
    return words


def segment_hashtag(tag: str, lexicon: Mapping[str, int]) -> str:
    """Split a hashtag into words: camel-case boundaries first, then a
    dictionary segmentation of each fragment.  Falls back to the lowercased
    bare body when no segmentation covers it."""
    body = tag[1:] if tag.startswith("#") else tag
    words = _segment_body(body, lexicon)
    return " ".join(words) if words is not None else body.lower()


# A segment is (is_placeholder, text).
Segment = tuple[bool, str]


def _rewrite(segments: list[Segment], pattern: re.Pattern, repl) -> tuple[list[Segment], bool]:
    out: list[Segment] = []
    fired = False
    for is_ph, text in segments:
        if is_ph:
            out.append((is_ph, text))
            continue
        pos = 0
        for m in pattern.finditer(text):
            fired = True
            if m.start() > pos:
                out.append((False, text[pos:m.start()]))
            out.extend(repl(m))
            pos = m.end()
        if pos < len(text):
            out.append((False, text[pos:]))
    return out, fired


def _map_text(segments: list[Segment], fn) -> tuple[list[Segment], bool]:
    out, fired = [], False
    for is_ph, text in segments:
        if is_ph:
            out.append((is_ph, text))
            continue
        new = fn(text)
        fired |= new != text
        out.append((False, new))
    return out, fired


def _strip_unknown(text: str, threshold: int) -> str:
    text = unicodedata.normalize("NFKD", text)
    text = "".join(c for c in text if not unicodedata.combining(c))
    text = text.translate({ord(a): None for a in _APOSTROPHES})
    text = _NON_ALPHA_RE.sub(" ", text)
    # removal can join characters into fresh runs
    return re.sub(r"\S+", lambda m: collapse_elongation(m.group(), threshold), text)


def normalize(raw: str, cfg: Optional[NormalizerConfig] = None) -> NormalizedText:
    cfg = cfg or NormalizerConfig()
    ph = cfg.placeholder_map
    applied: list[str] = []

    text = html.unescape(raw)
    if text != raw:
        applied.append("html-unescape")

    # placeholders already present (e.g. re-normalizing output) stay atomic
    known = sorted(set(ph.values()), key=len, reverse=True)
    known_re = re.compile(r"(?<!\S)(?:" + "|".join(map(re.escape, known)) + r")(?!\S)")
    segments, _ = _rewrite([(False, text)], known_re, lambda m: [(True, m.group())])

    def placeholder(kind):
        return lambda m: [(True, ph[kind])]

    for tag, pattern, kind in (
        ("url", _URL_RE, "url"),
        ("mention", _MENTION_RE, "mention"),
        ("emoticon", _EMOTICON_RE, "emoticon"),
    ):
        segments, fired = _rewrite(segments, pattern, placeholder(kind))
        if fired:
            applied.append(tag)

    outcomes = set()

    def hashtag(m):
        words = _segment_body(m.group(1), cfg.segmentation_lexicon)
        if words is None:
            outcomes.add("hashtag-unsegmented")
            return [(True, ph["hashtag"])]
        outcomes.add("hashtag-segmented")
        return [(False, " " + " ".join(words) + " ")]

    segments, _ = _rewrite(segments, _HASHTAG_RE, hashtag)
    applied.extend(t for t in ("hashtag-segmented", "hashtag-unsegmented") if t in outcomes)

    segments, fired = _rewrite(segments, _NUMBER_RE, placeholder("number"))
    if fired:
        applied.append("number")

    threshold = cfg.elongation_run_threshold
    segments, fired = _map_text(
        segments, lambda t: re.sub(r"\S+", lambda m: collapse_elongation(m.group(), threshold), t)
    )
    if fired:
        applied.append("elongation")

    segments, fired = _map_text(segments, lambda t: _strip_unknown(t, threshold))
    if fired:
        applied.append("punctuation")

    tokens: list[Segment] = []
    for is_ph, t in segments:
        if is_ph:
            tokens.append((True, t))
        else:
            tokens.extend((False, w) for w in t.split())
    joined_naive = "".join(t for _, t in segments)
    if tokens and joined_naive != " ".join(t for _, t in tokens) or (not tokens and joined_naive):
        applied.append("whitespace")

    if cfg.lowercase and any(not is_ph and w != w.lower() for is_ph, w in tokens):
        tokens = [(is_ph, w if is_ph else w.lower()) for is_ph, w in tokens]
        applied.append("lowercase")

    return NormalizedText(" ".join(w for _, w in tokens), tuple(applied))
