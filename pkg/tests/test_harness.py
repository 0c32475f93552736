import json
import re
import struct

import numpy as np
import pytest

from ctxbridge.checkpoint import HEADER_SIZE, CheckpointError, load_checkpoint, save_checkpoint
from ctxbridge.cli import main
from ctxbridge.config import ConfigError, config_hash, parse_config
from ctxbridge.context import CorruptionSpec, RiskProfile
from ctxbridge.curve import CurveModel
from ctxbridge.data import Dataset
from ctxbridge.models import ModelSpec, Network, build_model, mlp_spec
from ctxbridge.planar import PlanarModel
from ctxbridge.plotting import SERIES_GID_PREFIX, emit_plots
from ctxbridge.runner import OUTPUT_ROOT_ENV
from ctxbridge.sweep import SweepResult, eval_sweep, read_csv

SPEC = mlp_spec([3, 4, 2])


def minimal_config(tmp_path, **over):
    cfg = {
        "experiment": "pretrain",
        "seed": 0,
        "output_dir": str(tmp_path / "run"),
        "model": {"mlp": [2, 8, 3]},
        "data": {"classes": 3, "samples_per_class": 20, "test_samples_per_class": 20, "spread": 0.3},
        "pretrain": {"epochs": 5, "batch_size": 16, "lr": 0.05},
        "bmc": {"epochs": 2, "batch_size": 16, "lr": 0.05},
        "eval": {"grid_points": 3},
    }
    cfg.update(over)
    return cfg


# -- config ---------------------------------------------------------------


def test_config_parses_and_fills_defaults(tmp_path):
    cfg = parse_config(minimal_config(tmp_path))
    assert cfg.bmc.momentum == 0.9 and cfg.context.beta == 5.0
    assert cfg.eval.t_grid().tolist() == [0.0, 0.5, 1.0]
    assert len(config_hash(cfg)) == 16


def test_unknown_field_is_rejected_with_its_path(tmp_path):
    raw = minimal_config(tmp_path)
    raw["pretrain"]["learning_rate"] = 0.1
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert "pretrain.learning_rate" in info.value.fields


def test_seed_is_required(tmp_path):
    raw = minimal_config(tmp_path)
    del raw["seed"]
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert info.value.fields == ["seed"]


def test_eval_sweep_needs_checkpoint(tmp_path):
    with pytest.raises(ConfigError, match="checkpoint"):
        parse_config(minimal_config(tmp_path, experiment="eval-sweep"))


def test_noncomposing_model_is_a_config_error(tmp_path):
    raw = minimal_config(tmp_path, model={"layers": [{"type": "linear", "in": 5, "out": 2}], "input_shape": [2]})
    with pytest.raises(ConfigError, match="layer 0"):
        parse_config(raw)


# -- checkpoints ----------------------------------------------------------


def _models():
    _, a = build_model(SPEC, 0)
    _, b = build_model(SPEC, 1)
    _, c = build_model(SPEC, 2)
    return {
        "params": a,
        "curve": CurveModel(a, b, c, endpoints_frozen=True),
        "planar": PlanarModel(a, b, c, s=0.37),
    }


@pytest.mark.parametrize("kind", ["params", "curve", "planar"])
def test_checkpoint_round_trip(kind, tmp_path):
    obj = _models()[kind]
    path = save_checkpoint(tmp_path / "m.ckpt", obj, SPEC)
    ck = load_checkpoint(path, kind=kind)
    assert ck.kind == kind and ck.spec == SPEC
    assert path.read_bytes() == save_checkpoint(tmp_path / "again.ckpt", ck.model, ck.spec).read_bytes()
    if kind == "curve":
        assert ck.model.endpoints_frozen
    if kind == "planar":
        assert ck.model.s == 0.37


def test_checkpoint_size_formula(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", _models()["curve"], SPEC)
    raw = path.read_bytes()
    mlen = struct.unpack_from("<I", raw, 28)[0]
    assert HEADER_SIZE == 32
    assert len(raw) == 32 + mlen + 8 * len(_models()["params"]) * 3


def test_checkpoint_bad_magic(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", _models()["params"], SPEC)
    path.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncation_names_offset(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", _models()["params"], SPEC)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(CheckpointError, match=f"offset {len(raw) - 5}"):
        load_checkpoint(path)


def test_checkpoint_kind_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", _models()["params"], SPEC)
    with pytest.raises(CheckpointError, match="expected curve"):
        load_checkpoint(path, kind="curve")


# -- sweeps ---------------------------------------------------------------


@pytest.fixture
def perfect():
    spec = ModelSpec([{"type": "linear", "in": 3, "out": 3, "bias": False}], (3,))
    net = Network(spec)
    eye = net.init_params(0).with_values(np.eye(3).ravel())
    y = np.array([0, 1, 2] * 4)
    return net, CurveModel(eye, eye, eye), Dataset(np.eye(3)[y], y, 3)


def test_perfect_model_sweeps_to_one(perfect):
    net, curve, ds = perfect
    res = eval_sweep(curve, net, ds, RiskProfile(5.0, 3), grid=[0.0, 0.5, 1.0])
    assert all(acc == 1.0 for _, _, acc, _ in res.rows)
    assert {k for _, k, _, _ in res.rows} == {"overall", "class_0", "class_1", "class_2"}
    assert res.metadata["favored_class"] == {"0.0": 0, "0.5": 1, "1.0": 2}


def test_sweep_endpoints_use_endpoint_models(rng):
    net, a = build_model(SPEC, 0)
    _, b = build_model(SPEC, 1)
    ds = Dataset(rng.normal(size=(40, 3)), rng.integers(0, 2, size=40), 2)
    res = eval_sweep(CurveModel(a, b, b), net, ds, None, grid=[0.0, 1.0])
    for t, end in ((0.0, a), (1.0, b)):
        assert res.accuracy(t) == float((net.predict(end, ds.x) == ds.y).mean())


def test_sweep_kind_mismatch(perfect):
    net, curve, ds = perfect
    pair = (CorruptionSpec("gaussian-noise"), CorruptionSpec("contrast"))
    with pytest.raises(ValueError, match="single context"):
        eval_sweep(curve, net, ds, pair)
    planar = PlanarModel.from_base(curve.theta0)
    with pytest.raises(ValueError, match="pair"):
        eval_sweep(planar, net, ds, RiskProfile(2.0, 3))


def test_csv_round_trip(tmp_path):
    res = SweepResult([(0.0, "overall", 0.25, 4), (1.0, "overall", 0.1 + 0.2, 4)], {"seed": 1})
    path = res.write_csv(tmp_path / "s.csv")
    _, rows = read_csv(path)
    assert rows[1]["accuracy"] == 0.1 + 0.2
    assert json.loads(path.with_suffix(".meta.json").read_text()) == {"seed": 1}


def test_csv_rejects_bad_accuracy(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,key,accuracy,n\n0.0,overall,1.5,3\n")
    with pytest.raises(ValueError, match="outside"):
        read_csv(p)


# -- plots ----------------------------------------------------------------


def _series_path(svg: str, key: str) -> str:
    m = re.search(rf'<g id="{SERIES_GID_PREFIX}{key}">\s*<path d="([^"]*)"', svg)
    assert m, f"no series group for {key}"
    return m.group(1)


def test_empty_csv_is_an_error(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,key,accuracy,n\n")
    with pytest.raises(ValueError, match="no result rows"):
        emit_plots(p)


def test_two_row_csv_gives_one_two_point_line(tmp_path):
    p = SweepResult([(0.0, "overall", 0.5, 10), (1.0, "overall", 0.75, 10)]).write_csv(tmp_path / "s.csv")
    (svg_path,) = emit_plots(p)
    svg = svg_path.read_text()
    d = _series_path(svg, "overall")
    assert d.count("M") == 1 and d.count("L") == 1
    assert svg.count(f'id="{SERIES_GID_PREFIX}') == 1


def test_plots_are_byte_identical_on_rerun(tmp_path):
    rows = [(t, k, 0.5, 3) for t in (0.0, 0.5, 1.0) for k in ("overall", "class_0", "class_1")]
    p = SweepResult(rows).write_csv(tmp_path / "s.csv")
    first = {f.name: f.read_bytes() for f in emit_plots(p, tmp_path / "a")}
    second = {f.name: f.read_bytes() for f in emit_plots(p, tmp_path / "b")}
    assert set(first) == {"s_overall.svg", "s_per_class.svg"}
    assert first == second


def test_grid_csv_gives_heatmap(tmp_path):
    p = tmp_path / "g.csv"
    lines = ["t1,t2,accuracy,n_eval"] + [f"{a},{b},0.5,10" for a in (0.0, 1.0) for b in (0.0, 1.0)]
    p.write_text("\n".join(lines) + "\n")
    (svg,) = emit_plots(p)
    assert svg.name == "g_grid.svg" and 'id="grid-accuracy"' in svg.read_text()


# -- CLI ------------------------------------------------------------------


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_cli_malformed_config_exits_2_naming_field(tmp_path, capsys):
    raw = minimal_config(tmp_path)
    raw["bmc"]["epochz"] = 3
    assert main(["run", _write(tmp_path, raw)]) == 2
    assert "bmc.epochz" in capsys.readouterr().err


def test_cli_invalid_json_exits_2(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text("{not json")
    assert main(["run", str(p)]) == 2


def test_cli_missing_config_exits_2(tmp_path):
    assert main(["run", str(tmp_path / "absent.json")]) == 2


def test_cli_pretrain_smoke(tmp_path):
    assert main(["run", _write(tmp_path, minimal_config(tmp_path))]) == 0
    out = tmp_path / "run"
    assert (out / "endpoint.ckpt").exists() and (out / "config.json").exists()
    assert not (out / "FAILED").exists()
    assert load_checkpoint(out / "endpoint.ckpt").kind == "params"


def test_cli_runtime_failure_exits_1_and_marks_run(tmp_path):
    raw = minimal_config(tmp_path, data={"source": "idx", "train_images": "/nope/a", "train_labels": "/nope/b",
                                         "test_images": "/nope/c", "test_labels": "/nope/d"})
    assert main(["run", _write(tmp_path, raw)]) == 1
    assert (tmp_path / "run" / "FAILED").exists()


def test_cli_run_twice_gives_identical_csvs(tmp_path):
    raws = [minimal_config(tmp_path, experiment="bmc-shift", output_dir=str(tmp_path / f"r{i}")) for i in range(2)]
    for i, raw in enumerate(raws):
        assert main(["run", _write(tmp_path, raw, f"c{i}.json"), "--no-plots"]) == 0
    for name in ("sweep.csv", "baseline_sweep.csv", "history.csv", "curve.ckpt"):
        assert (tmp_path / "r0" / name).read_bytes() == (tmp_path / "r1" / name).read_bytes(), name
    for name in ("sweep.csv", "baseline_sweep.csv"):
        header, rows = read_csv(tmp_path / "r0" / name)
        assert header == ("t", "key", "accuracy", "n") and rows


def test_cli_eval_resweeps_a_checkpoint(tmp_path):
    raw = minimal_config(tmp_path, experiment="bmc-risk")
    assert main(["run", _write(tmp_path, raw), "--no-plots"]) == 0
    ckpt = tmp_path / "run" / "curve.ckpt"
    assert main(["eval", str(ckpt), "--context", "risk", "--grid", "0,0.25,1"]) == 0
    _, rows = read_csv(tmp_path / "run" / "eval" / "sweep.csv")
    assert sorted({r["t"] for r in rows}) == [0.0, 0.25, 1.0]
    assert (tmp_path / "run" / "eval" / "sweep_overall.svg").exists()


def test_cli_plot_command(tmp_path, capsys):
    p = SweepResult([(0.0, "overall", 0.5, 10), (1.0, "overall", 0.75, 10)]).write_csv(tmp_path / "s.csv")
    assert main(["plot", str(p)]) == 0
    assert "s_overall.svg" in capsys.readouterr().out


def test_output_root_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    raw = minimal_config(tmp_path, output_dir="relative/run")
    assert main(["run", _write(tmp_path, raw), "--no-plots"]) == 0
    assert (tmp_path / "root" / "relative" / "run" / "endpoint.ckpt").exists()
