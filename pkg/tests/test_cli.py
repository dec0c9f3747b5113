"""Command line behavior: flag precedence, records, exit codes."""

import hashlib
import json
import shutil
import socket
import subprocess

import numpy as np
import pytest

from rpg.backends import FixtureStore
from rpg.cli import UsageError, parse_canvas, parse_config_file, run
from rpg.latents import LatentGrid, load_latent, save_latent
from rpg.layout import Canvas
from rpg.planner import build_plan_messages

WORLD_TEXT = "A | 1.0,0.8,0.05\nB | 1.0,-0.8,0.05\nbackground | 1.0,0.0,0.05\n"

PLAN_TEXT = """\
```rpg-plan
prompt: background
split: 1,1
subprompts:
0|left|A
1|right|B
```
"""

PLAN_RESPONSE = """\
Two panels, left and right.

```rpg-plan
split: 1,1
subprompts:
0|left|A
1|right|B
base_ratio: 0.25
```
"""


@pytest.fixture
def world_file(tmp_path):
    path = tmp_path / "world.txt"
    path.write_text(WORLD_TEXT, encoding="utf-8")
    return str(path)


@pytest.fixture
def plan_file(tmp_path):
    path = tmp_path / "plan.txt"
    path.write_text(PLAN_TEXT, encoding="utf-8")
    return str(path)


def generate(tmp_path, world_file, plan_file, name="out.rpgl", extra=()):
    out = tmp_path / name
    code = run(
        [
            "generate",
            "--plan",
            plan_file,
            "--world",
            world_file,
            "--steps",
            "30",
            "--out",
            str(out),
            *extra,
        ]
    )
    return code, out


# --- config and canvas parsing -----------------------------------------


def test_config_file_parsing(tmp_path):
    path = tmp_path / "rpg.cfg"
    path.write_text("# comment\nseed = 7\n\nsteps=25 # trailing\n", encoding="utf-8")
    assert parse_config_file(str(path)) == {"seed": "7", "steps": "25"}


@pytest.mark.parametrize(
    "body",
    ["mood = dark\n", "seed = 1\nseed = 2\n", "just words\n"],
)
def test_config_file_rejects(tmp_path, body):
    path = tmp_path / "rpg.cfg"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(UsageError):
        parse_config_file(str(path))


def test_parse_canvas():
    assert parse_canvas("12x8") == Canvas(width=12, height=8)
    assert parse_canvas("4X4") == Canvas(width=4, height=4)
    for bad in ("12", "axb", "0x4", "3x-1", "1x2x3"):
        with pytest.raises(UsageError):
            parse_canvas(bad)


# --- generate ----------------------------------------------------------


def test_generate_deterministic_rerun(tmp_path, world_file, plan_file):
    code1, out1 = generate(tmp_path, world_file, plan_file, "a.rpgl")
    code2, out2 = generate(tmp_path, world_file, plan_file, "b.rpgl")
    assert code1 == 0 and code2 == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_generate_run_record(tmp_path, world_file, plan_file):
    code, out = generate(tmp_path, world_file, plan_file, extra=["--seed", "3"])
    assert code == 0
    record_path = tmp_path / "out.rpgl.run.json"
    record = json.loads(record_path.read_text(encoding="utf-8"))
    assert record["command"] == "generate"
    assert record["seed"] == 3
    assert record["steps"] == 30
    assert record["canvas"] == "8x8"
    assert record["channels"] == 1
    assert record["denoiser"]["kind"] == "gmm"
    assert record["denoiser"]["world_sha256"] == hashlib.sha256(
        WORLD_TEXT.encode()
    ).hexdigest()
    assert "rpg-plan" in record["plan_block"]
    entry = record["outputs"][0]
    assert entry["role"] == "latent"
    assert entry["sha256"] == hashlib.sha256(out.read_bytes()).hexdigest()


def test_generate_png_and_record_path(tmp_path, world_file, plan_file):
    png = tmp_path / "view.png"
    rec = tmp_path / "custom.json"
    code, _ = generate(
        tmp_path,
        world_file,
        plan_file,
        extra=["--png", str(png), "--record", str(rec)],
    )
    assert code == 0
    assert png.read_bytes()[:4] == b"\x89PNG"
    record = json.loads(rec.read_text(encoding="utf-8"))
    roles = [entry["role"] for entry in record["outputs"]]
    assert roles == ["latent", "png"]


def test_base_ratio_precedence(tmp_path, world_file, plan_file):
    # plan file has no base_ratio key: parse default 0.3
    _, out_default = generate(tmp_path, world_file, plan_file, "d.rpgl")
    rec = json.loads((tmp_path / "d.rpgl.run.json").read_text())
    assert rec["base_ratio"] == 0.3

    # CLI flag wins and changes the bytes
    _, out_flag = generate(
        tmp_path, world_file, plan_file, "f.rpgl", extra=["--base-ratio", "0.0"]
    )
    rec = json.loads((tmp_path / "f.rpgl.run.json").read_text())
    assert rec["base_ratio"] == 0.0
    assert out_flag.read_bytes() != out_default.read_bytes()

    # config file beats the plan default
    cfg = tmp_path / "rpg.cfg"
    cfg.write_text("base_ratio = 0.5\n", encoding="utf-8")
    _, _ = generate(
        tmp_path, world_file, plan_file, "c.rpgl", extra=["--config", str(cfg)]
    )
    rec = json.loads((tmp_path / "c.rpgl.run.json").read_text())
    assert rec["base_ratio"] == 0.5

    # CLI flag beats the config file
    _, _ = generate(
        tmp_path,
        world_file,
        plan_file,
        "cf.rpgl",
        extra=["--config", str(cfg), "--base-ratio", "0.1"],
    )
    rec = json.loads((tmp_path / "cf.rpgl.run.json").read_text())
    assert rec["base_ratio"] == 0.1


def test_config_supplies_seed_cli_overrides_steps(tmp_path, world_file, plan_file):
    cfg = tmp_path / "rpg.cfg"
    cfg.write_text("seed = 9\nsteps = 25\n", encoding="utf-8")
    code, _ = generate(
        tmp_path, world_file, plan_file, extra=["--config", str(cfg)]
    )
    assert code == 0
    rec = json.loads((tmp_path / "out.rpgl.run.json").read_text())
    # generate() always passes --steps 30, which beats the config's 25
    assert rec["seed"] == 9
    assert rec["steps"] == 30


# --- plan and generate via fixtures backend ----------------------------


def seed_fixtures(tmp_path, prompt, response):
    fixtures = tmp_path / "fixtures"
    store = FixtureStore(fixtures)
    store.put(build_plan_messages(prompt), response)
    return str(fixtures)


def test_plan_command_writes_parseable_block(tmp_path, world_file):
    fixtures = seed_fixtures(tmp_path, "a and b", PLAN_RESPONSE)
    plan_out = tmp_path / "planned.txt"
    code = run(
        [
            "plan",
            "--backend",
            "fixtures",
            "--fixtures",
            fixtures,
            "--prompt",
            "a and b",
            "--out",
            str(plan_out),
        ]
    )
    assert code == 0
    text = plan_out.read_text(encoding="utf-8")
    assert text.startswith("```rpg-plan")
    assert "prompt: a and b" in text

    # the planned base prompt is not a world id, so name the base cond
    code, out = generate(
        tmp_path, world_file, str(plan_out), extra=["--base-cond", "background"]
    )
    assert code == 0
    assert out.exists()


def test_plan_command_stdout(tmp_path, capsys):
    fixtures = seed_fixtures(tmp_path, "a and b", PLAN_RESPONSE)
    code = run(
        ["plan", "--backend", "fixtures", "--fixtures", fixtures, "--prompt", "a and b"]
    )
    assert code == 0
    assert "base_ratio: 0.25" in capsys.readouterr().out


def test_generate_from_prompt_via_fixtures(tmp_path, world_file):
    fixtures = seed_fixtures(tmp_path, "a and b", PLAN_RESPONSE)
    out = tmp_path / "p.rpgl"
    code = run(
        [
            "generate",
            "--prompt",
            "a and b",
            "--backend",
            "fixtures",
            "--fixtures",
            fixtures,
            "--base-cond",
            "background",
            "--world",
            world_file,
            "--steps",
            "30",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    assert out.exists()


# --- edit and loop -----------------------------------------------------


def test_edit_command(tmp_path, world_file, plan_file):
    _, src = generate(tmp_path, world_file, plan_file, "src.rpgl")
    edits = tmp_path / "edits.txt"
    edits.write_text("modify | left half | 0,0,4,8 | B\n", encoding="utf-8")
    out = tmp_path / "edited.rpgl"
    code = run(
        [
            "edit",
            "--latent",
            str(src),
            "--edits",
            str(edits),
            "--world",
            world_file,
            "--steps",
            "30",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    before = load_latent(src)
    after = load_latent(out)
    assert np.array_equal(before.data[:, 4:], after.data[:, 4:])
    assert not np.array_equal(before.data[:, :4], after.data[:, :4])
    record = json.loads((tmp_path / "edited.rpgl.run.json").read_text())
    assert len(record["ops"]) == 1
    assert record["ops"][0]["cond_id"] == "B"
    assert record["source"]["sha256"] == hashlib.sha256(src.read_bytes()).hexdigest()


def flat_latent_file(tmp_path, value, name="start.rpgl"):
    path = tmp_path / name
    save_latent(LatentGrid(np.full((8, 8, 1), np.float32(value))), path)
    return str(path)


def test_loop_command_converges(tmp_path, world_file):
    start = flat_latent_file(tmp_path, -0.8)
    out = tmp_path / "fixed.rpgl"
    code = run(
        [
            "loop",
            "--latent",
            start,
            "--targets",
            "A,B",
            "--split",
            "1,1",
            "--world",
            world_file,
            "--steps",
            "30",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    record = json.loads((tmp_path / "fixed.rpgl.run.json").read_text())
    assert record["success"] is True
    assert record["final_observed"] == ["A", "B"]
    assert len(record["rounds"]) == 1


def test_loop_budget_exhaustion_is_still_exit_zero(tmp_path):
    # "shadow" shares B's mean; caption ties break toward "B", so the
    # target "shadow" is never observed and the budget runs out.
    world = tmp_path / "world.txt"
    world.write_text(WORLD_TEXT + "shadow | 1.0,-0.8,0.05\n", encoding="utf-8")
    start = flat_latent_file(tmp_path, -0.8)
    out = tmp_path / "stuck.rpgl"
    code = run(
        [
            "loop",
            "--latent",
            start,
            "--targets",
            "A,shadow",
            "--split",
            "1,1",
            "--world",
            str(world),
            "--steps",
            "30",
            "--max-rounds",
            "2",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    record = json.loads((tmp_path / "stuck.rpgl.run.json").read_text())
    assert record["success"] is False
    assert record["max_rounds_exceeded"] is True
    assert len(record["rounds"]) == 2


# --- exit codes --------------------------------------------------------


def test_exit_2_needs_exactly_one_plan_source(tmp_path, world_file, plan_file):
    out = str(tmp_path / "x.rpgl")
    assert run(["generate", "--world", world_file, "--out", out]) == 2
    assert (
        run(
            [
                "generate",
                "--prompt",
                "p",
                "--plan",
                plan_file,
                "--world",
                world_file,
                "--out",
                out,
            ]
        )
        == 2
    )


def test_exit_2_bad_step_count(tmp_path, world_file, plan_file):
    code, _ = generate(tmp_path, world_file, plan_file, extra=["--steps", "20"])
    # --steps 30 from the helper is overridden by the later flag
    assert code == 2


def test_exit_2_unknown_config_key(tmp_path, world_file, plan_file):
    cfg = tmp_path / "rpg.cfg"
    cfg.write_text("volume = 11\n", encoding="utf-8")
    code, _ = generate(tmp_path, world_file, plan_file, extra=["--config", str(cfg)])
    assert code == 2


def test_exit_2_world_and_attn_conflict(tmp_path, world_file, plan_file):
    code, _ = generate(tmp_path, world_file, plan_file, extra=["--attn"])
    assert code == 2


def test_exit_2_missing_required_flag_from_argparse(tmp_path, plan_file):
    with pytest.raises(SystemExit) as exc:
        run(["generate", "--plan", plan_file])
    assert exc.value.code == 2


def test_exit_3_auth_missing(tmp_path, monkeypatch):
    monkeypatch.delenv("RPG_API_KEY", raising=False)
    code = run(
        [
            "plan",
            "--backend",
            "http",
            "--url",
            "http://127.0.0.1:1/chat",
            "--prompt",
            "p",
        ]
    )
    assert code == 3


def test_exit_3_connection_refused(tmp_path, monkeypatch):
    monkeypatch.setenv("RPG_API_KEY", "k")
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    code = run(
        [
            "plan",
            "--backend",
            "http",
            "--url",
            f"http://127.0.0.1:{port}/chat",
            "--prompt",
            "p",
        ]
    )
    assert code == 3


def test_exit_4_fixture_miss(tmp_path):
    fixtures = tmp_path / "empty"
    fixtures.mkdir()
    code = run(
        ["plan", "--backend", "fixtures", "--fixtures", str(fixtures), "--prompt", "p"]
    )
    assert code == 4


def test_exit_4_malformed_plan_file(tmp_path, world_file):
    bad = tmp_path / "bad.txt"
    bad.write_text("```rpg-plan\nsplit: 1\n```\n", encoding="utf-8")
    code, _ = generate(tmp_path, world_file, str(bad))
    assert code == 4


def test_exit_4_bad_world_file(tmp_path, plan_file):
    bad = tmp_path / "bad_world.txt"
    bad.write_text("A | 1.0,0.8\n", encoding="utf-8")
    code, _ = generate(tmp_path, str(bad), plan_file)
    assert code == 4


def test_exit_4_unknown_cond(tmp_path, world_file):
    plan = tmp_path / "plan_c.txt"
    plan.write_text(
        "```rpg-plan\nprompt: background\nsplit: 1,1\nsubprompts:\n0|l|A\n1|r|C\n```\n",
        encoding="utf-8",
    )
    code, _ = generate(tmp_path, world_file, str(plan))
    assert code == 4


def test_exit_4_corrupt_latent(tmp_path, world_file):
    broken = tmp_path / "broken.rpgl"
    broken.write_bytes(b"not a latent")
    edits = tmp_path / "edits.txt"
    edits.write_text("modify | x | 0,0,2,2 | A\n", encoding="utf-8")
    code = run(
        [
            "edit",
            "--latent",
            str(broken),
            "--edits",
            str(edits),
            "--world",
            world_file,
            "--out",
            str(tmp_path / "o.rpgl"),
        ]
    )
    assert code == 4


# --- installed script --------------------------------------------------


def test_installed_script_runs(tmp_path, world_file, plan_file):
    exe = shutil.which("rpg")
    assert exe, "console script should be installed"
    out = tmp_path / "sub.rpgl"
    proc = subprocess.run(
        [
            exe,
            "generate",
            "--plan",
            plan_file,
            "--world",
            world_file,
            "--steps",
            "30",
            "--out",
            str(out),
        ],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
    # in-process run with the same inputs produces the same bytes
    code, out2 = generate(tmp_path, world_file, plan_file, "inproc.rpgl")
    assert code == 0
    assert out.read_bytes() == out2.read_bytes()
