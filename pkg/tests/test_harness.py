from dataclasses import replace

import numpy as np
import pytest

from cdsa.cdsa import Explicit, run
from cdsa.harness import (
    ConfigError,
    ExperimentConfig,
    ProblemSpec,
    TopologySpec,
    config_from_dict,
    emit,
    load_config,
    monte_carlo,
    parse_axis,
    sweep,
    svg_lineplot,
)
from cdsa.network import build_topology, metropolis_weights
from cdsa.problems import RidgeProblem


def _cfg(**kw):
    base = ExperimentConfig(topology=TopologySpec("path", 4), k_max=150, paths=4, seed=2)
    return replace(base, **kw)


# -- monte_carlo --------------------------------------------------------------------

def test_single_path_equals_single_run():
    cfg = _cfg(paths=1)
    mc = monte_carlo(cfg)
    solo = run(RidgeProblem(4), metropolis_weights(build_topology("path", 4)), Explicit(),
               150, seed=2, schedule=cfg.schedule())
    assert mc.to_csv() == solo.to_csv()


def test_repeat_is_byte_identical(tmp_path):
    a = emit(monte_carlo(_cfg()), "csv", tmp_path / "a.csv")
    b = emit(monte_carlo(_cfg()), "csv", tmp_path / "b.csv")
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].read_bytes() == b[1].read_bytes()


def test_path_order_does_not_matter():
    ref = monte_carlo(_cfg()).to_csv()
    assert monte_carlo(_cfg(), path_order=[3, 1, 0, 2]).to_csv() == ref
    with pytest.raises(ValueError):
        monte_carlo(_cfg(), path_order=[0, 1, 2])


def test_parallel_jobs_match_serial():
    ref = monte_carlo(_cfg()).to_csv()
    assert monte_carlo(_cfg(jobs=2)).to_csv() == ref


def test_meta_records_config():
    t = monte_carlo(_cfg())
    assert t.meta["paths"] == 4 and t.meta["seed"] == 2
    assert t.meta["config"]["topology"]["kind"] == "path"
    assert t.meta["topology"] == "path4"


# -- sweep ------------------------------------------------------------------------

def test_sweep_singleton_matches_monte_carlo():
    cfg = _cfg()
    pts = sweep(cfg, ["path:4"])
    assert len(pts) == 1 and pts[0].error is None
    assert pts[0].trace.to_csv() == monte_carlo(cfg).to_csv()


def test_sweep_records_spectral_gaps():
    pts = sweep(_cfg(k_max=20, paths=1), ["path:5", "path:25", "complete:10"])
    rho = [p.trace.meta["rho_w"] for p in pts]
    assert rho[0] < rho[1]
    assert rho[2] == 0.0


def test_sweep_keeps_going_after_failure():
    cfg = _cfg(k_max=10, paths=1, policy=replace(_cfg().policy, a=1e200, b=1.0))
    pts = sweep(cfg, ["path:3"])
    assert pts[0].trace is None and "DivergenceError" in pts[0].error


def test_parse_axis():
    axis = parse_axis("path:5, mesh:5x5")
    assert [a.label for a in axis] == ["path5", "mesh5x5"]
    with pytest.raises(ConfigError):
        parse_axis("path:1")
    with pytest.raises(ConfigError):
        parse_axis(" , ")


# -- emit ---------------------------------------------------------------------------

def test_emit_csv_rows(tmp_path):
    t = monte_carlo(_cfg(k_max=30, paths=1))
    csv_path, json_path = emit(t, "csv", tmp_path / "r.csv")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "k,U1,V1,U2,V2,mse_x,mse_theta"
    assert len(lines) == 31
    assert '"paths": 1' in json_path.read_text()


def test_emit_several_traces_into_directory(tmp_path):
    t = monte_carlo(_cfg(k_max=5, paths=1))
    out = emit([t, t], "csv", tmp_path / "d", labels=["a", "b"])
    assert sorted(p.name for p in out) == ["a.csv", "a.json", "b.csv", "b.json"]


def test_emit_empty_or_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit([], "csv", tmp_path / "x.csv")
    t = monte_carlo(_cfg(k_max=5, paths=1))
    with pytest.raises(ValueError):
        emit(t, "png", tmp_path / "x.png")


def test_svg_has_one_polyline_per_series(tmp_path):
    t = monte_carlo(_cfg(k_max=50, paths=1))
    (path,) = emit([t, t], "svg", tmp_path / "p.svg", labels=["one", "two"])
    text = path.read_text()
    assert text.count("<polyline") == 2
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")


def test_svg_drops_non_positive_values():
    text = svg_lineplot([("z", [1, 2, 3], [0.0, 1.0, 0.1])])
    pts = text.split('points="')[1].split('"')[0].split()
    assert len(pts) == 2


def test_unwritable_output_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    t = monte_carlo(_cfg(k_max=5, paths=1))
    with pytest.raises(OSError, match="file"):
        emit(t, "csv", blocker / "sub" / "r.csv")


# -- config files ---------------------------------------------------------------------

def _write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


GOOD = """
[problem]
kind = logistic
m = 20

[topology]
kind = mesh
rows = 2
cols = 3

[run]
k_max = 40
paths = 3
seed = 5

[output]
name = small

[sweep]
axis = path:6, complete:6
"""


def test_load_config(tmp_path):
    cfg, axis = load_config(_write(tmp_path, GOOD))
    assert cfg.problem == ProblemSpec("logistic", 20, 0, 0.0)
    assert cfg.topology.n == 6 and cfg.topology.label == "mesh2x3"
    assert (cfg.k_max, cfg.paths, cfg.seed) == (40, 3, 5)
    assert [a.label for a in axis] == ["path6", "complete6"]


@pytest.mark.parametrize("text, key", [
    ("[topology]\nkind = path\nn = 4\ncolour = red\n", "topology.colour"),
    ("[topology]\nkind = path\n", "topology.n"),
    ("[topology]\nkind = path\nn = 4\n[run]\npaths = 0\n", "run.paths"),
    ("[topology]\nkind = path\nn = 4\n[run]\nk_max = many\n", "run.k_max"),
    ("[topology]\nkind = path\nn = 4\n[problem]\nkind = lasso\n", "problem.kind"),
    ("[topology]\nkind = path\nn = 4\n[policy]\nkind = harmonic\nbeta = 2\n", "policy.beta"),
    ("[topology]\nkind = path\nn = 4\n[problem]\nkind = logistic\nm = 7\n", "problem.m"),
    ("[topology]\nkind = custom\nn = 4\nedges = 0-1, 2-3\n", "topology"),
    ("[plot]\nx = 1\n", "[plot]"),
])
def test_config_errors_name_the_key(tmp_path, text, key):
    with pytest.raises(ConfigError, match=key.replace("[", r"\[").replace("]", r"\]")):
        load_config(_write(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini")


def test_default_out_dir_from_environment(monkeypatch):
    monkeypatch.setenv("CDSA_OUT", "/tmp/somewhere")
    cfg = config_from_dict({"topology": {"kind": "path", "n": 3}})
    assert cfg.out == "/tmp/somewhere"


def test_custom_edges_from_config():
    cfg = config_from_dict({"topology": {"kind": "custom", "n": 3, "edges": ((0, 1), (1, 2))}})
    assert cfg.topology.build().edges == ((0, 1), (1, 2))
    assert np.isclose(metropolis_weights(cfg.topology.build()).rho_w, 2 / 3)
