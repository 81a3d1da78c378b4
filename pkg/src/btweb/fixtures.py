"""Deterministic built-in content: the stock start page and test sites.

A fresh profile publishes the start page so a brand-new node has
something to serve.  Every byte here is fixed, so the start page's
infohash is identical on every install, and its on-disk torrent file
follows the store convention of being named by its own 40-hex infohash.
"""

from __future__ import annotations

import random

from .bundle import load_aliases, publish, save_aliases, torrent_trees
from .store.profile import ProfileStore
from .torrent import TorrentMeta, concat_files

STARTPAGE_NAME = "startpage"

_STARTPAGE_HTML = b"""<!doctype html>
<html>
<head><meta charset="utf-8"><title>Your node is running</title>
<link rel="stylesheet" href="style.css"></head>
<body>
<h1>This page came from a swarm</h1>
<p>No web server sent you this file. It was fetched piece by piece from
peers, verified against its hash, and reassembled locally. Publish a
directory and share the magnet link to host a site the same way.</p>
<ul>
<li>Serve a folder: <code>publish ./site</code></li>
<li>Open a site: <code>bittorrent://&lt;infohash&gt;/</code></li>
</ul>
</body>
</html>
"""

_STARTPAGE_CSS = b"""body { font-family: sans-serif; margin: 3em auto; max-width: 40em; }
h1 { color: #224; }
code { background: #eee; padding: 0 0.3em; }
"""


def startpage_tree() -> dict[str, bytes]:
    return {"index.html": _STARTPAGE_HTML, "style.css": _STARTPAGE_CSS}


def install_startpage(store: ProfileStore) -> TorrentMeta:
    """Publish the start page into a profile as its own publisher and
    register it in the alias table under "startpage"."""
    tree = startpage_tree()
    metas, manifest = publish(tree, name=STARTPAGE_NAME)
    meta = metas[0]
    content = concat_files(meta.info, torrent_trees(tree, manifest)[meta.infohash])
    store.store_content(meta, content, publisher=True)
    aliases = load_aliases(store._read(store.aliases_path))
    aliases[STARTPAGE_NAME] = meta.infohash
    store.aliases_path.write_bytes(save_aliases(aliases))
    return meta


def fixture_site(
    files: int = 12, total_bytes: int = 1024 * 1024, seed: int = 7
) -> dict[str, bytes]:
    """A reproducible site tree: index page, styles, a script, and enough
    binary assets to reach the requested file count and size."""
    rng = random.Random(seed)
    tree: dict[str, bytes] = {
        "index.html": b"<html><head><link rel=stylesheet href=css/site.css></head>"
        b"<body><h1>fixture</h1><script src=js/app.js></script></body></html>",
        "css/site.css": b"body { margin: 0; background: #fafafa }",
        "js/app.js": b"console.log('fixture site');",
    }
    remaining = files - len(tree)
    budget = max(0, total_bytes - sum(len(v) for v in tree.values()))
    for i in range(remaining):
        tree[f"assets/blob{i:02d}.bin"] = rng.randbytes(budget // remaining)
    return tree
