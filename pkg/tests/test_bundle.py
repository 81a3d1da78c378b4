"""Website bundles, split publishing, bittorrent:// URLs, and fixtures."""

import random

import pytest

from btweb.bundle import (
    MANIFEST_PATH,
    WELCOME_ALIAS,
    WELCOME_INFOHASH,
    BadAuthority,
    BundleError,
    BundleManifest,
    EmptyTree,
    Member,
    MemberIncomplete,
    MissingEntry,
    MountCollision,
    PathEscape,
    UnknownAlias,
    WebsiteBundle,
    assemble,
    decode_manifest,
    default_aliases,
    encode_manifest,
    load_aliases,
    member_tree,
    publish,
    resolve_url,
    save_aliases,
    torrent_trees,
)
from btweb.fixtures import fixture_site, install_startpage, startpage_tree
from btweb.store import ProfileStore
from btweb.torrent import carve_files, concat_files

SITE = {
    "index.html": b"<html>hello</html>",
    "css/site.css": b"body{}",
    "video/clip.mp4": bytes(range(256)) * 4096,  # 1 MiB
}


def transfer(metas, trees):
    """Round every torrent through its byte stream, as a swarm would."""
    out = {}
    for meta in metas:
        content = concat_files(meta.info, trees[meta.infohash])
        out[meta.infohash] = member_tree(meta, content)
    return out


# -- publishing -----------------------------------------------------------


def test_single_mode_builds_one_torrent():
    metas, manifest = publish(SITE)
    assert len(metas) == 1
    assert manifest.members == (Member(metas[0].infohash, ""),)
    assert manifest.base.infohash == metas[0].infohash


def test_base_torrent_carries_manifest_file():
    metas, manifest = publish(SITE)
    tree = torrent_trees(SITE, manifest)[metas[0].infohash]
    assert MANIFEST_PATH in tree
    decoded = decode_manifest(tree[MANIFEST_PATH], base_infohash=metas[0].infohash)
    assert decoded.members == manifest.members


def test_split_mode_gives_large_files_their_own_torrent():
    metas, manifest = publish(SITE, split_threshold=256 * 1024, name="demo")
    assert len(metas) == 2
    base, video = metas
    assert manifest.members[1] == Member(video.infohash, "video/clip.mp4")
    # the member torrent is a plain single-file torrent named by basename
    assert video.info.name == b"clip.mp4"
    assert video.info.files is None
    assert video.info.total_length == len(SITE["video/clip.mp4"])
    # the base tree holds everything else plus the manifest
    base_tree = torrent_trees(SITE, manifest)[base.infohash]
    assert set(base_tree) == {b"index.html", b"css/site.css", MANIFEST_PATH}


def test_threshold_is_strictly_greater():
    tree = {"index.html": b"x", "big.bin": b"\x00" * 1000}
    metas, _ = publish(tree, split_threshold=1000)
    assert len(metas) == 1
    metas, _ = publish(tree, split_threshold=999)
    assert len(metas) == 2


def test_editing_small_file_leaves_member_torrent_alone():
    before, m_before = publish(SITE, split_threshold=256 * 1024)
    edited = dict(SITE, **{"index.html": b"<html>v2</html>"})
    after, m_after = publish(edited, split_threshold=256 * 1024)
    assert before[0].infohash != after[0].infohash
    assert before[1].infohash == after[1].infohash
    assert m_before.members[1] == m_after.members[1]


def test_publish_is_deterministic():
    a_metas, a_manifest = publish(SITE, split_threshold=256 * 1024)
    b_metas, b_manifest = publish(SITE, split_threshold=256 * 1024)
    assert [m.to_bytes() for m in a_metas] == [m.to_bytes() for m in b_metas]
    assert a_manifest == b_manifest


def test_reserved_manifest_path_rejected():
    with pytest.raises(BundleError):
        publish({"index.html": b"x", ".bundle": b"impostor"})


def test_publish_requires_entry_file():
    with pytest.raises(MissingEntry):
        publish({"about.html": b"x"})
    with pytest.raises(EmptyTree):
        publish({})
    # a different entry point is fine when present
    metas, _ = publish({"about.html": b"x"}, entry="about.html")
    assert len(metas) == 1


def test_tree_paths_are_normalized_and_guarded():
    bundle = WebsiteBundle({"/index.html": b"x", "a//b": b"y"})
    assert set(bundle.tree) == {"index.html", "a//b".strip("/")}
    with pytest.raises(PathEscape):
        WebsiteBundle({"index.html": b"x", "../evil": b"y"})


# -- assembly -------------------------------------------------------------


def test_publish_then_assemble_restores_site():
    metas, manifest = publish(SITE, split_threshold=256 * 1024)
    received = transfer(metas, torrent_trees(SITE, manifest))
    assert assemble(manifest, received) == SITE


def test_assemble_random_trees_property():
    rng = random.Random(0xB0DE)
    for trial in range(10):
        tree = {
            f"dir{rng.randrange(3)}/f{i}.bin": rng.randbytes(rng.randrange(1, 60000))
            for i in range(rng.randrange(1, 8))
        }
        tree["index.html"] = rng.randbytes(rng.randrange(1, 2000))
        threshold = rng.choice([None, 16384, 32768])
        metas, manifest = publish(tree, split_threshold=threshold)
        received = transfer(metas, torrent_trees(tree, manifest))
        assert assemble(manifest, received) == WebsiteBundle(tree).tree


def test_assemble_reports_missing_members():
    metas, manifest = publish(SITE, split_threshold=256 * 1024)
    trees = torrent_trees(SITE, manifest)
    base_only = {metas[0].infohash: trees[metas[0].infohash]}
    with pytest.raises(MemberIncomplete) as err:
        assemble(manifest, base_only)
    assert err.value.missing == [metas[1].hex]


def test_assemble_rejects_mount_collision():
    metas, manifest = publish({"index.html": b"x", "a.bin": b"y"})
    bad_manifest = BundleManifest(
        name=manifest.name,
        version=1,
        members=(manifest.base, Member(b"\x01" * 20, "a.bin")),
    )
    trees = {
        manifest.base.infohash: {b"index.html": b"x", b"a.bin": b"y"},
        b"\x01" * 20: {b"a.bin": b"z"},
    }
    with pytest.raises(MountCollision):
        assemble(bad_manifest, trees)


def test_manifest_roundtrip():
    manifest = BundleManifest(
        name="demo",
        version=3,
        members=(Member(b"\x0a" * 20, ""), Member(b"\x0b" * 20, "video/clip.mp4")),
    )
    decoded = decode_manifest(encode_manifest(manifest), base_infohash=b"\x0a" * 20)
    assert decoded == manifest


def test_manifest_requires_unique_prefixes():
    with pytest.raises(MountCollision):
        BundleManifest(
            name="x",
            version=1,
            members=(Member(b"\x0a" * 20, ""), Member(b"\x0b" * 20, "")),
        )


# -- bittorrent:// URLs ------------------------------------------------------


def test_welcome_alias_resolves_to_pinned_infohash():
    assert resolve_url("bittorrent://welcome") == (WELCOME_INFOHASH, "index.html")
    assert WELCOME_INFOHASH.hex().upper() == "8E65684D700ECC41A09A60EE58991845EA56F734"


def test_url_with_hex_authority_and_path():
    hex_hash = "8e65684d700ecc41a09a60ee58991845ea56f734"
    infohash, path = resolve_url(f"bittorrent://{hex_hash}/css/site.css")
    assert infohash == WELCOME_INFOHASH
    assert path == "css/site.css"


def test_url_defaults_and_directory_paths():
    assert resolve_url("bittorrent://welcome/")[1] == "index.html"
    assert resolve_url("bittorrent://welcome/docs/")[1] == "docs/index.html"
    assert resolve_url("bittorrent:welcome/page.html")[1] == "page.html"


def test_url_path_escape_rejected():
    with pytest.raises(PathEscape):
        resolve_url("bittorrent://welcome/../../etc/passwd")
    with pytest.raises(PathEscape):
        resolve_url("bittorrent://welcome/%2e%2e/secret")


def test_url_error_cases():
    with pytest.raises(UnknownAlias):
        resolve_url("bittorrent://nosuchsite")
    with pytest.raises(BadAuthority):
        resolve_url("bittorrent://not a name!")
    with pytest.raises(BadAuthority):
        resolve_url("https://example.com/")
    with pytest.raises(BadAuthority):
        resolve_url("bittorrent://")


def test_alias_registry_roundtrip():
    table = default_aliases()
    assert table == {WELCOME_ALIAS: WELCOME_INFOHASH}
    table["mysite"] = b"\x7f" * 20
    assert load_aliases(save_aliases(table)) == table
    assert load_aliases(None) == default_aliases()


def test_resolve_uses_caller_aliases():
    table = {"mysite": b"\x7f" * 20}
    assert resolve_url("bittorrent://mysite/x.png", table) == (b"\x7f" * 20, "x.png")
    with pytest.raises(UnknownAlias):
        resolve_url("bittorrent://welcome", table)


# -- built-in fixtures --------------------------------------------------------


def test_startpage_is_deterministic():
    a, _ = publish(startpage_tree(), name="startpage")
    b, _ = publish(startpage_tree(), name="startpage")
    assert a[0].infohash == b[0].infohash
    assert a[0].to_bytes() == b[0].to_bytes()


def test_install_startpage_provisions_profile(tmp_path):
    store = ProfileStore.create(tmp_path / "p", rng=random.Random(5))
    meta = install_startpage(store)
    assert store.list_torrents() == [meta.hex]
    assert store.resume(meta.infohash).publisher
    content = store.read_content(meta.infohash)
    files = carve_files(meta.info, content)
    assert files[b"index.html"] == startpage_tree()["index.html"]
    aliases = load_aliases(store.aliases_path.read_bytes())
    assert aliases["startpage"] == meta.infohash
    assert aliases[WELCOME_ALIAS] == WELCOME_INFOHASH


def test_fixture_site_shape():
    tree = fixture_site(files=12, total_bytes=1024 * 1024)
    assert len(tree) == 12
    assert "index.html" in tree
    total = sum(len(v) for v in tree.values())
    assert 0.95 * 1024 * 1024 <= total <= 1024 * 1024
    assert fixture_site(seed=7) == tree
    assert fixture_site(seed=8) != tree
