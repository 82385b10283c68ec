from __future__ import annotations

import pytest

from auditrag.config import DEFAULTS, RunConfig
from auditrag.errors import ConfigError


def test_defaults():
    cfg = RunConfig.load()
    assert cfg.retrieval().k_seeds == 4 and cfg.retrieval().k_frontier == 5
    assert cfg.hidden() == (64, 64)
    assert cfg.train().lr == 1e-3
    assert cfg.audit().k == 25 and cfg.context().k == 25


def test_precedence_flags_over_file_over_defaults(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[retrieval]\nhops = 2\nk_frontier = inf\nk_seeds = 6\n[audit]\ninclude_neighbors = yes\n", encoding="utf-8")
    cfg = RunConfig.load(p, {"retrieval": {"k_seeds": 9, "hops": None}})
    r = cfg.retrieval()
    assert (r.hops, r.k_frontier, r.k_seeds) == (2, None, 9)
    assert cfg.audit().include_neighbors is True
    assert cfg.get("retrieval", "merge_pool") == DEFAULTS["retrieval"]["merge_pool"]


@pytest.mark.parametrize("text", ["[nope]\na = 1\n", "[retrieval]\nbogus = 1\n", "[retrieval]\nhops = many\n",
                                  "[audit]\ninclude_neighbors = perhaps\n"])
def test_bad_files_rejected(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


def test_missing_file_and_bad_ranges(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "absent.ini")
    with pytest.raises(ConfigError):
        RunConfig.load(None, {"retrieval": {"prize_pool": 0}}).retrieval()
    with pytest.raises(ConfigError):
        RunConfig.load(None, {"model": {"hidden": "4,x"}}).hidden()


def test_echo_excludes_paths():
    cfg = RunConfig.load(None, {"paths": {"out": "/somewhere"}})
    assert "paths" not in cfg.echo() and cfg.echo()["train"]["seed"] == 0
