import io
import json

import numpy as np
import pytest
from PIL import Image

from listingforge.cli import main
from listingforge.config import ConfigError, load_config


def png(seed) -> bytes:
    rng = np.random.default_rng(seed)
    coarse = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(coarse).resize((64, 64), Image.BILINEAR).save(buf, format="PNG")
    return buf.getvalue()


def listing(i, **kw):
    d = {"listing_id": f"id{i}", "title": f"Red bag {i}", "category_path": ["Bags"],
         "aspects": [["Color", "Red"], ["Material", "Leather"]], "image_refs": [f"id{i}.png"]}
    d.update(kw)
    return json.dumps(d)


def test_unknown_subcommand_and_missing_args(capsys):
    assert main(["frobnicate"]) == 2
    assert main(["ingest"]) == 2
    assert main([]) == 2


def test_bad_manifest_names_entry(tmp_path, capsys):
    (tmp_path / "v.jsonl").write_text("")
    (tmp_path / "m.yaml").write_text("- {json_path: a.json, sampling_strategy: all}\n- {json_path: b.json}\n")
    rc = main(["mix", "--verified", str(tmp_path / "v.jsonl"), "--out", str(tmp_path / "o.jsonl"),
               "--total", "0", "--manifest", str(tmp_path / "m.yaml")])
    assert rc == 2
    assert "entry 1: sampling_strategy missing" in capsys.readouterr().err


def test_cost_prints_ratio(tmp_path, capsys):
    images = tmp_path / "imgs"
    images.mkdir()
    refs = []
    for base in range(4):
        for k in range(3):
            name = f"b{base}_{k}.png"
            (images / name).write_bytes(png(base))
            refs.append(name)
    (tmp_path / "items.jsonl").write_text(json.dumps({"item_id": "it", "image_refs": refs}) + "\n")
    out = tmp_path / "crops"
    assert main(["crops", "--items", str(tmp_path / "items.jsonl"), "--images-dir", str(images),
                 "--out", str(out)]) == 0
    assert (out / "run_manifest.json").exists()
    capsys.readouterr()
    assert main(["cost", "--items", str(out)]) == 0
    text = capsys.readouterr().out
    assert "token ratio 3.00" in text and "visual tokens 3072 -> 1024" in text


def test_config_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 1\nparallelism: 2\ngap_px: 3\n")
    cfg = load_config(path, env={"LISTINGFORGE_SEED": "5", "LISTINGFORGE_GAP_PX": "6"},
                      overrides={"seed": 9, "gap_px": None})
    assert (cfg.seed, cfg.parallelism, cfg.gap_px) == (9, 2, 6)
    cfg = load_config(None, env={"LISTINGFORGE_CAPTIONER": "mock"})
    assert cfg.endpoints["captioner"] == "mock"
    path.write_text("sed: 1\n")
    with pytest.raises(ConfigError):
        load_config(path, env={})
    path.write_text("parallelism: 0\n")
    with pytest.raises(ConfigError):
        load_config(path, env={})


def test_config_error_exits_2(tmp_path):
    bad = tmp_path / "c.yaml"
    bad.write_text("bogus_key: 1\n")
    (tmp_path / "in.jsonl").write_text("")
    assert main(["ingest", "--config", str(bad), "--in", str(tmp_path / "in.jsonl"),
                 "--out", str(tmp_path / "o.jsonl")]) == 2


def test_missing_endpoint_is_usage_error(tmp_path, monkeypatch):
    monkeypatch.delenv("LISTINGFORGE_CAPTIONER", raising=False)
    (tmp_path / "in.jsonl").write_text(listing(0) + "\n")
    assert main(["curate", "--in", str(tmp_path / "in.jsonl"), "--out", str(tmp_path / "o.jsonl"),
                 "--mode", "lexical"]) == 2


def test_partial_failure_exit_1(tmp_path):
    lines = [listing(i) for i in range(20)] + ["{broken"]
    (tmp_path / "in.jsonl").write_text("\n".join(lines) + "\n")
    args = ["ingest", "--in", str(tmp_path / "in.jsonl"), "--out", str(tmp_path / "o.jsonl")]
    assert main(args) == 1
    cfg = tmp_path / "c.yaml"
    cfg.write_text("failure_threshold: 0.1\n")
    assert main(args + ["--config", str(cfg)]) == 0


def test_pipeline_run_manifests_are_deterministic(tmp_path):
    src = tmp_path / "raw.jsonl"
    src.write_text("".join(listing(i) + "\n" for i in range(6)))
    for i in range(6):
        (tmp_path / f"id{i}.png").write_bytes(png(i))

    def run(out):
        out.mkdir()
        assert main(["ingest", "--in", str(src), "--out", str(out / "clean.jsonl"), "--seed", "3"]) == 0
        assert main(["curate", "--in", str(out / "clean.jsonl"), "--out", str(out / "ver.jsonl"),
                     "--captioner", "mock", "--verifier", "mock", "--images-dir", str(tmp_path),
                     "--parallelism", "3"]) == 0
        assert main(["mix", "--verified", str(out / "ver.jsonl"), "--out", str(out / "mix.jsonl"),
                     "--total", "8", "--report", str(out / "mix_report.json")]) == 0
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    assert a == b
    man = json.loads(a["clean.jsonl.run.json"])
    assert man["command"] == "ingest" and man["seed"] == 3 and "clean.jsonl" in man["outputs"]
    assert len(a["mix.jsonl"].splitlines()) == 8


def test_eval_cli(tmp_path):
    gold = tmp_path / "gold.jsonl"
    gold.write_text(json.dumps({"id": "a", "task": "aspect", "gold_value": ["Color", "Red"]}) + "\n")
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps({"id": "a", "output": "red"}) + "\n")
    rep = tmp_path / "r.json"
    assert main(["eval", "--task", "aspect,fashion", "--gold", str(gold), "--pred", str(pred),
                 "--report", str(rep)]) == 0
    doc = json.loads(rep.read_text())
    assert doc["tasks"]["aspect"]["accuracy"] == 1.0 and doc["warnings"]
    assert (tmp_path / "r.json.run.json").exists()
