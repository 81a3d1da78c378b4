"""Website bundles: build torrents from a file tree and back again.

A site ships either as one torrent or, in split mode, as a base torrent
plus one member torrent per large file, linked by a manifest.  The
manifest travels inside the base torrent at the reserved path ".bundle",
so the embedded copy lists only the non-base members (a torrent cannot
contain its own infohash); the in-memory manifest returned by publish
additionally carries the base as members[0] with an empty prefix.

bittorrent:// URLs name sites by 40-hex infohash or by a registered alias.
"""

from __future__ import annotations

import urllib.parse
from dataclasses import dataclass
from pathlib import Path

from . import bencode
from .torrent import (
    DEFAULT_PIECE_LENGTH,
    TorrentMeta,
    build_torrent,
    carve_files,
    infohash_hex,
)

MANIFEST_PATH = b".bundle"
DEFAULT_ENTRY = "index.html"

# Identity of the stock start page that ships with a fresh profile's alias
# registry under the name "welcome".
WELCOME_INFOHASH = bytes.fromhex("8E65684D700ECC41A09A60EE58991845EA56F734")
WELCOME_ALIAS = "welcome"


class BundleError(ValueError):
    pass


class EmptyTree(BundleError):
    pass


class MissingEntry(BundleError):
    pass


class UnknownAlias(BundleError):
    pass


class BadAuthority(BundleError):
    pass


class PathEscape(BundleError):
    pass


class MemberIncomplete(BundleError):
    def __init__(self, missing: list[str]):
        super().__init__(f"member torrents incomplete: {', '.join(missing)}")
        self.missing = missing


class MountCollision(BundleError):
    pass


def _norm_tree(tree) -> dict[str, bytes]:
    out: dict[str, bytes] = {}
    for path, data in tree.items():
        if isinstance(path, bytes):
            path = path.decode("utf-8")
        path = path.strip("/")
        if not path:
            raise PathEscape("empty path in tree")
        parts = path.split("/")
        if ".." in parts or "." in parts:
            raise PathEscape(f"path {path!r} contains dot components")
        out[path] = bytes(data)
    return out


@dataclass(frozen=True)
class WebsiteBundle:
    tree: dict[str, bytes]
    entry: str = DEFAULT_ENTRY

    def __post_init__(self):
        normalized = _norm_tree(self.tree)
        object.__setattr__(self, "tree", normalized)
        if not normalized:
            raise EmptyTree("site has no files")
        if self.entry not in normalized:
            raise MissingEntry(f"entry path {self.entry!r} not in tree")


@dataclass(frozen=True)
class Member:
    infohash: bytes
    prefix: str  # mount path; "" is the base tree


@dataclass(frozen=True)
class BundleManifest:
    name: str
    version: int
    members: tuple[Member, ...]

    def __post_init__(self):
        if not self.members:
            raise BundleError("manifest needs at least one member")
        prefixes = [m.prefix for m in self.members]
        if len(set(prefixes)) != len(prefixes):
            raise MountCollision("duplicate mount prefixes")

    @property
    def base(self) -> Member:
        return self.members[0]


def _manifest_bytes(name: str, version: int, members) -> bytes:
    return bencode.encode(
        {
            b"name": name,
            b"version": version,
            b"members": [
                {b"infohash": m.infohash, b"prefix": m.prefix.encode()} for m in members
            ],
        }
    )


def encode_manifest(manifest: BundleManifest) -> bytes:
    """The embedded .bundle form: every member except the base itself."""
    return _manifest_bytes(manifest.name, manifest.version, manifest.members[1:])


def decode_manifest(data: bytes, base_infohash: bytes | None = None) -> BundleManifest:
    """Parse a .bundle; when base_infohash is given it is prepended as the
    base member, reconstructing the full in-memory form."""
    value, _ = bencode.decode_lenient(data)
    if not isinstance(value, dict):
        raise BundleError("manifest is not a dictionary")
    name = value.get(b"name", b"")
    version = value.get(b"version", 1)
    members: list[Member] = []
    if base_infohash is not None:
        members.append(Member(base_infohash, ""))
    for item in value.get(b"members", []):
        if not isinstance(item, dict):
            continue
        infohash = item.get(b"infohash")
        prefix = item.get(b"prefix", b"")
        if isinstance(infohash, bytes) and len(infohash) == 20 and isinstance(prefix, bytes):
            members.append(Member(infohash, prefix.decode("utf-8", "replace")))
    return BundleManifest(
        name=name.decode("utf-8", "replace") if isinstance(name, bytes) else "site",
        version=version if isinstance(version, int) else 1,
        members=tuple(members),
    )


def publish(
    tree,
    split_threshold: int | None = None,
    *,
    name: str = "site",
    entry: str = DEFAULT_ENTRY,
    trackers=(),
    piece_length: int = DEFAULT_PIECE_LENGTH,
    version: int = 1,
) -> tuple[list[TorrentMeta], BundleManifest]:
    """Build the torrents for a site. Single mode (threshold None) packs
    everything into one torrent; split mode gives each file larger than
    the threshold its own torrent so edits elsewhere leave it untouched.
    Output is deterministic for identical input."""
    bundle = tree if isinstance(tree, WebsiteBundle) else WebsiteBundle(dict(tree), entry)
    files = bundle.tree
    if MANIFEST_PATH.decode() in files:
        raise BundleError(f"{MANIFEST_PATH.decode()!r} is reserved for the manifest")

    members: list[Member] = []
    metas: list[TorrentMeta] = []
    base_files: dict[str, bytes] = {}
    split: list[tuple[str, bytes]] = []
    for path in sorted(files):
        if split_threshold is not None and len(files[path]) > split_threshold:
            split.append((path, files[path]))
        else:
            base_files[path] = files[path]

    member_metas = []
    for path, data in split:
        basename = path.rsplit("/", 1)[-1]
        meta = build_torrent({basename: data}, piece_length, trackers)
        member_metas.append((path, meta))

    base_tree = dict(base_files)
    base_tree[MANIFEST_PATH.decode()] = _manifest_bytes(
        name, version, [Member(m.infohash, p) for p, m in member_metas]
    )
    base_meta = build_torrent(base_tree, piece_length, trackers, name=name)

    metas.append(base_meta)
    members.append(Member(base_meta.infohash, ""))
    for path, meta in member_metas:
        metas.append(meta)
        members.append(Member(meta.infohash, path))
    return metas, BundleManifest(name=name, version=version, members=tuple(members))


def torrent_trees(tree, manifest: BundleManifest) -> dict[bytes, dict[bytes, bytes]]:
    """Map each member infohash to the file tree its torrent carries,
    reconstructed from the source tree and the publish manifest.  The
    base tree includes the embedded .bundle copy."""
    files = _norm_tree(dict(tree) if not isinstance(tree, WebsiteBundle) else tree.tree)
    out: dict[bytes, dict[bytes, bytes]] = {}
    split_paths = set()
    for member in manifest.members[1:]:
        basename = member.prefix.rsplit("/", 1)[-1]
        out[member.infohash] = {basename.encode(): files[member.prefix]}
        split_paths.add(member.prefix)
    base = {
        path.encode(): data for path, data in files.items() if path not in split_paths
    }
    base[MANIFEST_PATH] = encode_manifest(manifest)
    out[manifest.base.infohash] = base
    return out


def assemble(
    manifest: BundleManifest, trees: dict[bytes, dict[bytes, bytes]]
) -> dict[str, bytes]:
    """Mount completed member trees at their prefixes; the result is the
    published site tree (the reserved .bundle file is not part of it)."""
    missing = [infohash_hex(m.infohash) for m in manifest.members if m.infohash not in trees]
    if missing:
        raise MemberIncomplete(missing)
    out: dict[str, bytes] = {}

    def mount(path: str, data: bytes):
        if path in out:
            raise MountCollision(f"two members provide {path!r}")
        out[path] = data

    for member in manifest.members:
        tree = trees[member.infohash]
        if member.prefix and len(tree) == 1:
            mount(member.prefix, next(iter(tree.values())))
            continue
        for raw_path, data in tree.items():
            path = raw_path.decode("utf-8", "replace") if isinstance(raw_path, bytes) else raw_path
            if path == MANIFEST_PATH.decode():
                continue
            mount(f"{member.prefix}/{path}" if member.prefix else path, data)
    return out


def member_tree(meta: TorrentMeta, content: bytes) -> dict[bytes, bytes]:
    """Carve a completed torrent's byte stream into its file tree."""
    return carve_files(meta.info, content)


# -- bittorrent:// URLs -----------------------------------------------


def _normalize_path(raw: str) -> str:
    path = urllib.parse.unquote(raw)
    parts = [p for p in path.split("/") if p]
    if ".." in parts:
        raise PathEscape(f"path {raw!r} climbs out of the site")
    if not parts:
        return DEFAULT_ENTRY
    if path.endswith("/"):
        parts.append(DEFAULT_ENTRY)
    return "/".join(parts)


def resolve_url(url: str, aliases: dict[str, bytes] | None = None) -> tuple[bytes, str]:
    """bittorrent:// URL -> (infohash, site-relative path)."""
    parsed = urllib.parse.urlsplit(url)
    if parsed.scheme.lower() != "bittorrent":
        raise BadAuthority(f"not a bittorrent URL: {url!r}")
    authority = parsed.netloc or parsed.path.lstrip("/").split("/", 1)[0]
    if not authority:
        raise BadAuthority("URL has no authority")
    if parsed.netloc:
        path = parsed.path
    else:
        rest = parsed.path.lstrip("/").split("/", 1)
        path = rest[1] if len(rest) > 1 else ""
    try:
        infohash = bytes.fromhex(authority) if len(authority) == 40 else None
    except ValueError:
        infohash = None
    if infohash is None:
        if not authority.replace("-", "").replace("_", "").replace(".", "").isalnum():
            raise BadAuthority(f"authority {authority!r} is neither hex nor a usable alias")
        table = aliases if aliases is not None else {WELCOME_ALIAS: WELCOME_INFOHASH}
        if authority not in table:
            raise UnknownAlias(authority)
        infohash = table[authority]
    return infohash, _normalize_path(path)


def read_site_tree(root) -> dict[str, bytes]:
    """Load a site directory as a publishable tree, paths in posix form
    relative to the root."""
    root = Path(root)
    if not root.is_dir():
        raise BundleError(f"not a directory: {root}")
    tree = {}
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        tree[path.relative_to(root).as_posix()] = path.read_bytes()
    if not tree:
        raise EmptyTree(f"no files under {root}")
    return tree


# -- alias registry ----------------------------------------------------


def default_aliases() -> dict[str, bytes]:
    return {WELCOME_ALIAS: WELCOME_INFOHASH}


def load_aliases(data: bytes | None) -> dict[str, bytes]:
    if data is None:
        return default_aliases()
    value, _ = bencode.decode_lenient(data)
    if not isinstance(value, dict):
        raise BundleError("alias file is not a dictionary")
    out: dict[str, bytes] = {}
    for key, val in value.items():
        if isinstance(key, bytes) and isinstance(val, bytes) and len(val) == 20:
            out[key.decode("utf-8", "replace")] = val
    return out


def save_aliases(aliases: dict[str, bytes]) -> bytes:
    return bencode.encode({k.encode(): v for k, v in aliases.items()})
