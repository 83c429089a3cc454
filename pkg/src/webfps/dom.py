"""HTML/CSS parsing and raw web-feature extraction.

The tree builder sits on top of :class:`html.parser.HTMLParser` and applies a
small set of recovery rules (implicit ``html``/``body``, auto-closing of
``p``/``li``/table cells, void elements).  Style rules are gathered from
``<style>`` blocks and, when a resolver directory is given, from linked local
stylesheets.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

OTHER = "_other"

VOID_TAGS = frozenset(
    "area base br col embed hr img input link meta param source track wbr keygen".split()
)
# Content that may appear before <body> without forcing an implicit body.
HEAD_TAGS = frozenset("head title meta link style script base noscript template".split())
# Start tags that implicitly close an open <p>.
CLOSES_P = frozenset(
    """address article aside blockquote details div dl fieldset figcaption figure
    footer form h1 h2 h3 h4 h5 h6 header hgroup hr main menu nav ol p pre section
    table ul""".split()
)
# tag -> open tags it closes, and the tags that bound the search
_IMPLIED_END = {
    "li": ({"li"}, {"ul", "ol", "menu"}),
    "dt": ({"dt", "dd"}, {"dl"}),
    "dd": ({"dt", "dd"}, {"dl"}),
    "option": ({"option"}, {"select", "datalist", "optgroup"}),
    "optgroup": ({"optgroup", "option"}, {"select"}),
    "tr": ({"tr", "td", "th"}, {"table", "tbody", "thead", "tfoot"}),
    "td": ({"td", "th"}, {"tr", "table"}),
    "th": ({"td", "th"}, {"tr", "table"}),
    "thead": ({"tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "tbody": ({"thead", "tbody", "tfoot", "tr", "td", "th"}, {"table"}),
    "tfoot": ({"thead", "tbody", "tr", "td", "th"}, {"table"}),
}

SELECTOR_PATTERNS = ("type", "class", "id", "descendant", "child", "pseudo", "attribute", "universal")


@dataclass(eq=False)
class Element:
    tag: str
    attrs: list[tuple[str, Optional[str]]] = field(default_factory=list)
    children: list["Element | str"] = field(default_factory=list)

    def elements(self) -> Iterator["Element"]:
        """Depth-first iteration over this element and its element descendants."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(c for c in reversed(node.children) if isinstance(c, Element))


@dataclass(eq=False)
class HtmlDocument:
    """Parsed page: a list of top-level elements plus gathered CSS text."""

    roots: list[Element] = field(default_factory=list)
    css: list[str] = field(default_factory=list)
    byte_size: float = 0.0  # kilobytes, HTML plus resolved stylesheets

    def elements(self) -> Iterator[Element]:
        for root in self.roots:
            yield from root.elements()

    @property
    def node_count(self) -> int:
        return sum(1 for _ in self.elements())

    @property
    def depth(self) -> int:
        best = 0
        stack = [(r, 1) for r in self.roots]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            stack.extend((c, d + 1) for c in node.children if isinstance(c, Element))
        return best


class _TreeBuilder(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.top = Element("#document")
        self.stack: list[Element] = [self.top]
        self.style_blocks: list[str] = []
        self.stylesheet_links: list[str] = []

    @property
    def current(self) -> Element:
        return self.stack[-1]

    def _close_until(self, names: set[str], boundary: set[str]) -> None:
        for i in range(len(self.stack) - 1, 0, -1):
            tag = self.stack[i].tag
            if tag in names:
                del self.stack[i:]
                return
            if tag in boundary:
                return

    def handle_starttag(self, tag, attrs):
        if tag in CLOSES_P:
            self._close_until({"p"}, {"button", "table", "td", "th", "li", "div", "section", "article"})
        if tag in _IMPLIED_END:
            names, boundary = _IMPLIED_END[tag]
            self._close_until(names, boundary)
        el = Element(tag, list(attrs))
        self.current.children.append(el)
        if tag == "link":
            rel = (dict(attrs).get("rel") or "").lower().split()
            href = dict(attrs).get("href")
            if "stylesheet" in rel and href:
                self.stylesheet_links.append(href)
        if tag not in VOID_TAGS:
            self.stack.append(el)

    def handle_startendtag(self, tag, attrs):
        self.handle_starttag(tag, attrs)
        if tag not in VOID_TAGS and self.current.tag == tag:
            self.stack.pop()

    def handle_endtag(self, tag):
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                del self.stack[i:]
                return
        # stray end tag: ignored

    def handle_data(self, data):
        if self.current.tag == "style":
            self.style_blocks.append(data)
        if data:
            self.current.children.append(data)


def _wrap_implicit(nodes: list[Element | str]) -> list[Element]:
    """Insert implicit ``html``/``body`` wrappers around top-level content."""
    elements = [n for n in nodes if isinstance(n, Element)]
    has_text = any(isinstance(n, str) and n.strip() for n in nodes)
    if not elements and not has_text:
        return []
    if len(elements) == 1 and elements[0].tag == "html" and not has_text:
        html = elements[0]
    else:
        html = Element("html", children=list(nodes))
    if any(isinstance(c, Element) and c.tag == "body" for c in html.children):
        return [html]
    head_part: list[Element | str] = []
    body_part: list[Element | str] = []
    for child in html.children:
        if not body_part and (
            (isinstance(child, Element) and child.tag in HEAD_TAGS)
            or (isinstance(child, str) and not child.strip())
        ):
            head_part.append(child)
        else:
            body_part.append(child)
    if any(isinstance(c, Element) or c.strip() for c in body_part):
        html.children = head_part + [Element("body", children=body_part)]
    return [html]


def parse_document(
    html_text: str, resolver: Optional[Path] = None, byte_size: Optional[float] = None
) -> HtmlDocument:
    """Build a best-effort DOM tree from (possibly malformed) HTML text.

    ``resolver`` is a local directory used to load ``<link rel=stylesheet>``
    targets; remote URLs are never fetched.  ``byte_size`` overrides the HTML
    size in kilobytes (defaults to the UTF-8 length of ``html_text``).
    """
    builder = _TreeBuilder()
    builder.feed(html_text)
    builder.close()
    css = list(builder.style_blocks)
    size_bytes = len(html_text.encode("utf-8")) if byte_size is None else byte_size * 1024.0
    if resolver is not None:
        root = Path(resolver).resolve()
        for href in builder.stylesheet_links:
            if "://" in href or href.startswith("//"):
                continue
            target = (root / href.split("?")[0]).resolve()
            if root in target.parents and target.is_file():
                raw = target.read_bytes()
                css.append(raw.decode("utf-8", errors="replace"))
                size_bytes += len(raw)
    return HtmlDocument(_wrap_implicit(builder.top.children), css, size_bytes / 1024.0)


def parse_file(path: str | Path, resolve_stylesheets: bool = True) -> HtmlDocument:
    """Parse an ``.html`` file; raises ``UnicodeDecodeError`` on non-UTF-8 input."""
    path = Path(path)
    raw = path.read_bytes()
    text = raw.decode("utf-8")
    doc = parse_document(text, resolver=path.parent if resolve_stylesheets else None,
                         byte_size=len(raw) / 1024.0)
    return doc


def serialize(doc: HtmlDocument) -> str:
    """Render the tree back to HTML (used for round-trip checks)."""
    out: list[str] = []

    def emit(node: Element | str) -> None:
        if isinstance(node, str):
            out.append(node.replace("&", "&amp;").replace("<", "&lt;"))
            return
        attrs = "".join(
            f' {k}' if v is None else f' {k}="{v.replace("&", "&amp;").replace(chr(34), "&quot;")}"'
            for k, v in node.attrs
        )
        out.append(f"<{node.tag}{attrs}>")
        if node.tag in VOID_TAGS:
            return
        if node.tag in ("style", "script"):
            out.extend(c for c in node.children if isinstance(c, str))
        else:
            for c in node.children:
                emit(c)
        out.append(f"</{node.tag}>")

    for root in doc.roots:
        emit(root)
    return "".join(out)


# --------------------------------------------------------------------------- CSS

_COMMENT_RE = re.compile(r"/\*.*?\*/", re.S)


@dataclass
class CssRule:
    selectors: list[str]
    properties: list[str]


def parse_css(text: str) -> list[CssRule]:
    """Flatten a stylesheet into style rules; ``@media``/``@supports`` are descended into."""
    text = _COMMENT_RE.sub("", text)
    rules: list[CssRule] = []
    _parse_block(text, 0, rules)
    return rules


def _parse_block(text: str, pos: int, rules: list[CssRule]) -> int:
    n = len(text)
    while pos < n:
        brace = text.find("{", pos)
        close = text.find("}", pos)
        if close != -1 and (brace == -1 or close < brace):
            return close + 1  # end of enclosing block
        if brace == -1:
            return n
        # statement at-rules (@import ...;) may precede the prelude
        prelude = text[pos:brace].rsplit(";", 1)[-1].strip()
        if prelude.startswith("@"):
            name = prelude[1:].split(None, 1)[0].lower() if len(prelude) > 1 else ""
            if name in ("media", "supports", "document", "layer", "container"):
                pos = _parse_block(text, brace + 1, rules)
                continue
            pos = _skip_block(text, brace + 1)
            continue
        end = _skip_block(text, brace + 1)
        body = text[brace + 1 : end - 1]
        props = []
        for decl in body.split(";"):
            if ":" in decl:
                name = decl.split(":", 1)[0].strip().lower()
                if name:
                    props.append(name)
        selectors = [s.strip() for s in prelude.split(",") if s.strip()]
        if selectors:
            rules.append(CssRule(selectors, props))
        pos = end
    return n


def _skip_block(text: str, pos: int) -> int:
    depth = 1
    n = len(text)
    while pos < n and depth:
        ch = text[pos]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        pos += 1
    return pos


_TYPE_RE = re.compile(r"(?:^|[\s>+~(])([a-zA-Z][\w-]*)")


def selector_patterns(selector: str) -> set[str]:
    """Pattern categories present in one complex selector (each counted once)."""
    found: set[str] = set()
    if "[" in selector:
        found.add("attribute")
    s = re.sub(r"\[[^\]]*\]", "[]", selector)
    s = re.sub(r"\([^)]*\)", "()", s)
    if "." in s:
        found.add("class")
    if "#" in s:
        found.add("id")
    if ":" in s:
        found.add("pseudo")
    if "*" in s:
        found.add("universal")
    if ">" in s:
        found.add("child")
    if "+" in s or "~" in s:
        found.add(OTHER)
    compact = re.sub(r"\s*([>+~])\s*", r"\1", s.strip())
    if re.search(r"\S\s+\S", compact):
        found.add("descendant")
    if _TYPE_RE.search(compact):
        found.add("type")
    return found


# ---------------------------------------------------------------------- manifest


@dataclass(frozen=True)
class FeatureManifest:
    tags: tuple[str, ...]
    attributes: tuple[str, ...]
    css_properties: tuple[str, ...]
    selector_patterns: tuple[str, ...]
    version: str

    def __post_init__(self):
        for name in ("tags", "attributes", "css_properties", "selector_patterns"):
            vocab = getattr(self, name)
            if len(set(vocab)) != len(vocab):
                raise ValueError(f"manifest.{name}: duplicate entries")
            if OTHER not in vocab:
                object.__setattr__(self, name, tuple(vocab) + (OTHER,))

    @property
    def feature_names(self) -> list[str]:
        return (
            ["dom.nodes", "dom.depth", "css.rules"]
            + [f"tag.{t}" for t in self.tags]
            + [f"attr.{a}" for a in self.attributes]
            + [f"prop.{p}" for p in self.css_properties]
            + [f"sel.{s}" for s in self.selector_patterns]
            + ["page.size_kb"]
        )

    @property
    def dimension(self) -> int:
        return (3 + len(self.tags) + len(self.attributes) + len(self.css_properties)
                + len(self.selector_patterns) + 1)

    def index(self, feature: str) -> int:
        return self.feature_names.index(feature)

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureManifest":
        return cls(
            tuple(data["tags"]),
            tuple(data["attributes"]),
            tuple(data["css_properties"]),
            tuple(data["selector_patterns"]),
            str(data["version"]),
        )

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "tags": list(self.tags),
            "attributes": list(self.attributes),
            "css_properties": list(self.css_properties),
            "selector_patterns": list(self.selector_patterns),
        }


def load_manifest(path: str | Path | None = None) -> FeatureManifest:
    """Load a manifest JSON file, or the packaged default when ``path`` is None."""
    if path is None:
        text = resources.files("webfps.data").joinpath("manifest.json").read_text()
    else:
        text = Path(path).read_text()
    return FeatureManifest.from_dict(json.loads(text))


@dataclass(frozen=True)
class RawFeatureVector:
    values: np.ndarray
    manifest_version: str

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("raw feature values must be non-negative")


def extract_features(doc: HtmlDocument, manifest: FeatureManifest) -> RawFeatureVector:
    """Count the raw web features of ``doc`` in manifest order."""
    tag_idx = {t: i for i, t in enumerate(manifest.tags)}
    attr_idx = {a: i for i, a in enumerate(manifest.attributes)}
    prop_idx = {p: i for i, p in enumerate(manifest.css_properties)}
    sel_idx = {s: i for i, s in enumerate(manifest.selector_patterns)}
    tags = np.zeros(len(manifest.tags))
    attrs = np.zeros(len(manifest.attributes))
    props = np.zeros(len(manifest.css_properties))
    sels = np.zeros(len(manifest.selector_patterns))

    n_nodes = 0
    for el in doc.elements():
        n_nodes += 1
        tags[tag_idx.get(el.tag, tag_idx[OTHER])] += 1
        for name, _ in el.attrs:
            attrs[attr_idx.get(name, attr_idx[OTHER])] += 1

    n_rules = 0
    for sheet in doc.css:
        for rule in parse_css(sheet):
            n_rules += 1
            for p in rule.properties:
                props[prop_idx.get(p, prop_idx[OTHER])] += 1
            for sel in rule.selectors:
                for pat in selector_patterns(sel):
                    sels[sel_idx.get(pat, sel_idx[OTHER])] += 1

    values = np.concatenate(
        [[n_nodes, doc.depth, n_rules], tags, attrs, props, sels, [doc.byte_size]]
    ).astype(float)
    return RawFeatureVector(values, manifest.version)


def dom_change_ratio(old: HtmlDocument | int, new: HtmlDocument | int) -> float:
    """Relative change in element count, using ``old`` as the base."""
    n_old = old if isinstance(old, int) else old.node_count
    n_new = new if isinstance(new, int) else new.node_count
    return abs(n_new - n_old) / max(1, n_old)


def write_feature_csv(
    path: str | Path,
    rows: Iterable[tuple[str, RawFeatureVector]],
    manifest: FeatureManifest,
) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["page_id", "manifest_version", *manifest.feature_names])
        for page_id, vec in rows:
            w.writerow([page_id, vec.manifest_version, *(repr(float(v)) for v in vec.values)])


def read_feature_csv(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    """Return (page ids, feature names, matrix) from a feature CSV."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        ids, rows = [], []
        for row in r:
            ids.append(row[0])
            rows.append([float(v) for v in row[2:]])
    return ids, header[2:], np.array(rows, dtype=float).reshape(len(rows), len(header) - 2)


def feature_matrix(vectors: Sequence[RawFeatureVector]) -> np.ndarray:
    return np.vstack([v.values for v in vectors])
