"""Synthetic offline web corpus and per-page records.

Pages are generated from a handful of site archetypes (news, shop, search,
social, video, blog, portal).  Each page gets an HTML file plus a sibling
stylesheet; page size is padded with an HTML comment so that size and DOM
node count are correlated but not locked together.  One page, ``cnn``, is a
fixed heavy news page used as the calibration anchor of the platform oracles.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dom import FeatureManifest, HtmlDocument, RawFeatureVector, extract_features, parse_file

CORPUS_ENV = "WEBFPS_CORPUS"
ANCHOR_PAGE = "cnn"

# (block template, weight) per archetype; a template is a nested tuple
# (tag, attrs, children) expanded into markup.
_BLOCKS = {
    "news": [
        (("article", {"class": "story"}, [("h2", {"class": "headline"}, [("a", {"href": "#"}, [])]),
                                          ("img", {"src": "i.jpg", "alt": "", "width": "300"}, []),
                                          ("p", {}, []), ("time", {"datetime": "2019"}, [])]), 4),
        (("ul", {"class": "links"}, [("li", {}, [("a", {"href": "#"}, [])])] * 4), 2),
        (("aside", {"class": "ad", "data-src": "x"}, [("iframe", {"src": "ad.html", "width": "300"}, [])]), 1),
    ],
    "shop": [
        (("div", {"class": "card", "id": "c"}, [("img", {"src": "p.jpg", "alt": "", "loading": "lazy"}, []),
                                                ("span", {"class": "price"}, []),
                                                ("button", {"type": "button", "onclick": "b()"}, [])]), 5),
        (("form", {"action": "/s", "method": "get"}, [("input", {"type": "text", "name": "q", "placeholder": "s"}, []),
                                                      ("select", {"name": "c"}, [("option", {"value": "1"}, [])] * 3)]), 1),
    ],
    "search": [
        (("div", {"class": "result"}, [("h3", {}, [("a", {"href": "#"}, [])]), ("cite", {}, []), ("span", {}, [])]), 5),
        (("input", {"type": "text", "name": "q", "autocomplete": "off"}, []), 1),
    ],
    "social": [
        (("div", {"class": "post", "role": "article"}, [("img", {"class": "avatar", "src": "a.png", "alt": ""}, []),
                                                        ("div", {"class": "body"}, [("span", {}, []), ("p", {}, [])]),
                                                        ("button", {"aria-label": "like"}, [("svg", {}, [])])]), 5),
        (("nav", {"role": "navigation"}, [("a", {"href": "#"}, [])] * 5), 1),
    ],
    "video": [
        (("div", {"class": "tile"}, [("a", {"href": "#"}, [("img", {"src": "t.jpg", "alt": "", "width": "320", "height": "180"}, [])]),
                                     ("h3", {}, []), ("span", {"class": "meta"}, [])]), 5),
        (("video", {"src": "v.mp4", "controls": None, "poster": "t.jpg"}, [("source", {"src": "v.webm", "type": "video/webm"}, [])]), 1),
    ],
    "blog": [
        (("section", {}, [("h2", {}, []), ("p", {}, []), ("p", {}, []), ("blockquote", {}, [("p", {}, [])])]), 4),
        (("pre", {}, [("code", {"class": "lang"}, [])]), 1),
        (("table", {}, [("tr", {}, [("td", {}, [])] * 3)] * 3), 1),
    ],
    "portal": [
        (("div", {"class": "box"}, [("h4", {}, []), ("ul", {}, [("li", {}, [("a", {"href": "#", "title": "t"}, [])])] * 6)]), 3),
        (("div", {"class": "promo"}, [("img", {"src": "b.gif", "alt": ""}, []), ("a", {"href": "#", "target": "_blank"}, [])]), 2),
        (("script", {"src": "w.js", "async": None}, []), 1),
    ],
}

_PROPS = {
    "base": ["color", "margin", "padding", "font-size", "display", "width", "line-height", "font-family"],
    "news": ["font-weight", "text-decoration", "border-bottom", "float", "max-width", "font-style"],
    "shop": ["border", "border-radius", "box-shadow", "background-color", "flex", "justify-content", "cursor"],
    "search": ["text-overflow", "white-space", "overflow", "font-size", "color"],
    "social": ["border-radius", "flex-direction", "align-items", "gap", "object-fit", "transition"],
    "video": ["position", "top", "left", "transform", "opacity", "z-index", "height"],
    "blog": ["letter-spacing", "text-align", "border-left", "font-style", "background"],
    "portal": ["float", "list-style", "overflow", "height", "background-image", "vertical-align"],
}
_SELECTORS = [
    "{t}", ".{c}", "#{c}", "{t} .{c}", "{t} > {t2}", "{t}:hover", "a[href]", "*", ".{c} {t}", "{t} + {t2}",
]
ARCHETYPES = tuple(_BLOCKS)


@dataclass(frozen=True)
class PageRecord:
    """A corpus page reduced to what the simulation needs."""

    id: str
    features: RawFeatureVector
    node_count: int


def _render(block, rng: np.random.Generator) -> tuple[str, int]:
    tag, attrs, children = block
    parts = []
    for k, v in attrs.items():
        parts.append(f" {k}" if v is None else f' {k}="{v}"')
    html = f"<{tag}{''.join(parts)}>"
    count = 1
    if tag in ("img", "input", "source"):
        return html, count
    if not children and tag not in ("script", "iframe", "svg"):
        html += "lorem ipsum"[: int(rng.integers(3, 11))]
    for child in children:
        h, c = _render(child, rng)
        html += h
        count += c
    return html + f"</{tag}>", count


def _page_html(page_id: str, archetype: str, n_nodes: int, size_kb: float,
               rng: np.random.Generator) -> tuple[str, str]:
    blocks, weights = zip(*_BLOCKS[archetype])
    p = np.array(weights, float) * rng.dirichlet(np.ones(len(weights)) * 4)
    p /= p.sum()
    body: list[str] = []
    count = 5  # html, head, title, link, body
    while count < n_nodes:
        h, c = _render(blocks[int(rng.choice(len(blocks), p=p))], rng)
        if count + c > n_nodes and count > 5:
            break
        body.append(h)
        count += c

    n_rules = max(1, int(round(np.sqrt(max(count, 1)) * rng.uniform(1.0, 4.0))))
    pool = _PROPS["base"] + _PROPS[archetype]
    tags = ["div", "a", "p", "span", "img", "li", "h2", "section", "button", "ul"]
    rules = []
    for i in range(n_rules):
        sel = _SELECTORS[int(rng.integers(len(_SELECTORS)))].format(
            t=tags[int(rng.integers(len(tags)))], t2=tags[int(rng.integers(len(tags)))], c=f"k{i % 37}")
        props = rng.choice(pool, size=int(rng.integers(1, 6)), replace=False)
        rules.append(sel + "{" + ";".join(f"{q}:0" for q in props) + "}")
    split = len(rules) // 3
    inline_css, linked_css = "\n".join(rules[:split]), "\n".join(rules[split:])
    head = (f"<head><title>{page_id}</title><link rel=\"stylesheet\" href=\"{page_id}.css\">"
            + (f"<style>{inline_css}</style>" if inline_css else "") + "</head>")
    if inline_css:
        count += 1
    html = f"<!DOCTYPE html><html lang=\"en\">{head}<body>{''.join(body)}</body></html>\n"
    pad = int(size_kb * 1024) - len(html) - len(linked_css)
    if pad > 16:
        html = html.replace("<body>", "<body><!--" + "x" * (pad - 7) + "-->", 1)
    return html, linked_css


def generate_corpus(out_dir: str | Path, n_pages: int = 100, seed: int = 2019) -> list[Path]:
    """Write ``n_pages`` synthetic pages (``cnn`` included) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n_pages - 1):
        archetype = ARCHETYPES[i % len(ARCHETYPES)]
        n_nodes = int(np.exp(rng.uniform(np.log(4), np.log(8500))))
        size_kb = max(8.0, n_nodes * rng.uniform(0.08, 0.2) + np.exp(rng.uniform(np.log(10), np.log(800))))
        specs.append((f"p{i:03d}", archetype, n_nodes, size_kb))
    specs.append((ANCHOR_PAGE, "news", 8000, 1800.0))
    paths = []
    for page_id, archetype, n_nodes, size_kb in specs:
        html, css = _page_html(page_id, archetype, n_nodes, size_kb, rng)
        (out / f"{page_id}.css").write_text(css)
        path = out / f"{page_id}.html"
        path.write_text(html)
        paths.append(path)
    return paths


def corpus_dir(path: Optional[str | Path] = None) -> Path:
    """Resolve the corpus root; the environment variable wins over ``path``."""
    env = os.environ.get(CORPUS_ENV)
    if env:
        return Path(env)
    if path is None:
        raise ValueError(f"no corpus directory given and ${CORPUS_ENV} is unset")
    return Path(path)


def load_page(path: str | Path, manifest: FeatureManifest) -> tuple[PageRecord, HtmlDocument]:
    doc = parse_file(path)
    return PageRecord(Path(path).stem, extract_features(doc, manifest), doc.node_count), doc


def load_corpus(directory: str | Path, manifest: FeatureManifest) -> list[PageRecord]:
    """Parse every ``*.html`` page in ``directory`` (sorted by file name)."""
    paths = sorted(Path(directory).glob("*.html"))
    if not paths:
        raise FileNotFoundError(f"no .html pages in {directory}")
    return [load_page(p, manifest)[0] for p in paths]


def select_pages(pages: Sequence[PageRecord], ids: Sequence[str]) -> list[PageRecord]:
    by_id = {p.id: p for p in pages}
    return [by_id[i] for i in ids]
