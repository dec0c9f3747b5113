"""Command line front end.

Four subcommands: plan (prompt -> plan block), generate (plan -> latent),
edit (latent + edit plan -> latent), loop (caption-edit rounds). Every
invocation that writes a latent also writes a JSON run record beside it
with enough provenance (settings, plan block, output hashes) to redo the
run and compare bytes.

Exit codes: 0 success (a loop hitting its round budget is still a
defined outcome), 2 usage, 3 credential or network failure, 4 parse or
validation failure in an input or backend reply, 5 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from .backends import (
    Backend,
    BackendError,
    FixtureBackend,
    FixtureMissError,
    FixtureStore,
    HttpBackend,
    MalformedReplyError,
    DEFAULT_KEY_ENV,
)
from .conditioning import EMBED_DIM, embed_prompt
from .denoisers import (
    AttnDenoiser,
    GmmDenoiser,
    GmmWorldError,
    UnknownCondError,
    init_attn_params,
    load_gmm_world,
)
from .editing import execute_plan, load_edit_plan, run_closed_loop
from .ioutil import atomic_write_text
from .latents import LatentError, latent_to_png, load_latent, save_latent
from .layout import Canvas, LayoutError, parse_split, resolve_regions
from .plan import PlanInvalidError, PromptPlan, validate_plan
from .planner import (
    UnparseableResponseError,
    parse_plan_response,
    plan_regions,
    serialize_plan_block,
)
from .sampling import NestingTooDeepError, SamplerConfig, plan_conds, sample_crd
from .schedule import BadStepCountError, make_schedule

DEFAULT_STEPS = 50
DEFAULT_CANVAS = "8x8"
DEFAULT_BASE_RATIO = 0.3

CONFIG_KEYS = {
    "seed",
    "steps",
    "base_ratio",
    "canvas",
    "channels",
    "backend",
    "fixtures",
    "url",
    "model",
    "key_env",
    "world",
    "denoiser",
    "base_cond",
    "max_rounds",
}


class UsageError(Exception):
    pass


def parse_config_file(path: str) -> dict[str, str]:
    """key = value per line; '#' starts a comment; blank lines skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out: dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{line_no}: unknown config key {key!r}")
        if key in out:
            raise UsageError(f"{path}:{line_no}: config key {key!r} given twice")
        out[key] = value
    return out


def parse_canvas(token: str) -> Canvas:
    parts = token.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"canvas {token!r} is not WIDTHxHEIGHT")
    try:
        width, height = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"canvas {token!r} has a non-integer side") from None
    if width < 1 or height < 1:
        raise UsageError(f"canvas {token!r} has a non-positive side")
    return Canvas(width=width, height=height)


class Settings:
    """Flag values with config-file fallback: CLI beats config beats
    default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = parse_config_file(args.config) if getattr(args, "config", None) else {}

    def _pick(self, name: str, cast, default):
        cli_value = getattr(self.args, name, None)
        if cli_value is not None:
            return cli_value
        if name in self.config:
            try:
                return cast(self.config[name])
            except (ValueError, TypeError) as exc:
                raise UsageError(f"config key {name!r}: {exc}") from None
        return default

    @property
    def seed(self) -> int:
        return self._pick("seed", int, 0)

    @property
    def steps(self) -> int:
        return self._pick("steps", int, DEFAULT_STEPS)

    @property
    def base_ratio(self) -> float | None:
        """None when neither flag nor config spoke; the plan decides."""
        return self._pick("base_ratio", float, None)

    @property
    def canvas(self) -> Canvas:
        token = self._pick("canvas", str, DEFAULT_CANVAS)
        return parse_canvas(token)

    @property
    def channels(self) -> int | None:
        return self._pick("channels", int, None)

    @property
    def max_rounds(self) -> int:
        return self._pick("max_rounds", int, 3)

    @property
    def backend_kind(self) -> str | None:
        return self._pick("backend", str, None)

    @property
    def fixtures_dir(self) -> str | None:
        return self._pick("fixtures", str, None)

    @property
    def url(self) -> str | None:
        return self._pick("url", str, None)

    @property
    def model(self) -> str:
        return self._pick("model", str, "default")

    @property
    def key_env(self) -> str:
        return self._pick("key_env", str, DEFAULT_KEY_ENV)

    @property
    def world_path(self) -> str | None:
        return self._pick("world", str, None)

    @property
    def denoiser_kind(self) -> str | None:
        return self._pick("denoiser", str, None)

    @property
    def base_cond(self) -> str | None:
        return self._pick("base_cond", str, None)


def make_backend(s: Settings) -> Backend:
    kind = s.backend_kind
    if kind is None:
        raise UsageError("this command needs --backend {http,fixtures}")
    if kind == "fixtures":
        if not s.fixtures_dir:
            raise UsageError("--backend fixtures needs --fixtures DIR")
        return FixtureBackend(FixtureStore(s.fixtures_dir))
    if kind == "http":
        if not s.url:
            raise UsageError("--backend http needs --url URL")
        return HttpBackend(s.url, model=s.model, key_env=s.key_env)
    raise UsageError(f"unknown backend {kind!r}")


def make_denoiser(s: Settings, schedule, fallback_channels: int | None = None):
    """Returns (denoiser, channels, descriptor-dict for the run record)."""
    world_path = s.world_path
    kind = s.denoiser_kind
    if world_path and kind == "attn":
        raise UsageError("give either --world FILE or --attn, not both")
    if world_path:
        world = load_gmm_world(world_path)
        if s.channels is not None and s.channels != world.channels:
            raise UsageError(
                f"--channels {s.channels} conflicts with world channel count {world.channels}"
            )
        desc = {
            "kind": "gmm",
            "world": str(world_path),
            "world_sha256": _file_sha256(world_path),
        }
        return GmmDenoiser(world, schedule), world.channels, desc
    if kind == "attn":
        channels = s.channels if s.channels is not None else (fallback_channels or 2)
        params = init_attn_params(seed=0, channels=channels, dim=EMBED_DIM)
        desc = {"kind": "attn", "channels": channels, "dim": EMBED_DIM}
        return AttnDenoiser(params), channels, desc
    if kind is not None:
        raise UsageError(f"unknown denoiser {kind!r} (expected 'attn' or a --world file)")
    raise UsageError("this command needs --world FILE or --attn")


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_plan_file(path: str) -> PromptPlan:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read plan {path}: {exc}") from None
    return parse_plan_response(text, base_prompt=None)


def _resolve_plan(args: argparse.Namespace, s: Settings) -> PromptPlan:
    has_prompt = bool(getattr(args, "prompt", None))
    has_plan = bool(getattr(args, "plan", None))
    if has_prompt == has_plan:
        raise UsageError("give exactly one of --prompt TEXT or --plan FILE")
    if has_prompt:
        plan = plan_regions(args.prompt, make_backend(s))
    else:
        plan = _load_plan_file(args.plan)
    override = s.base_ratio
    if override is not None:
        # Settings beat whatever the plan said; nested plans keep their own.
        plan = dataclasses.replace(plan, base_ratio=override)
    return plan


def _write_record(path, record: dict) -> None:
    atomic_write_text(path, json.dumps(record, sort_keys=True, indent=2) + "\n")


def _output_entry(role: str, path) -> dict:
    return {"role": role, "path": str(path), "sha256": _file_sha256(path)}


def cmd_plan(args: argparse.Namespace) -> int:
    s = Settings(args)
    if not getattr(args, "prompt", None):
        raise UsageError("plan needs --prompt TEXT")
    plan = plan_regions(args.prompt, make_backend(s))
    override = s.base_ratio
    if override is not None:
        plan = dataclasses.replace(plan, base_ratio=override)
    validate_plan(plan)
    block = serialize_plan_block(plan)
    if args.out:
        atomic_write_text(args.out, block)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(block)
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    s = Settings(args)
    plan = _resolve_plan(args, s)
    canvas = s.canvas
    validate_plan(plan, canvas=canvas)
    schedule = make_schedule(s.steps)
    denoiser, channels, denoiser_desc = make_denoiser(s, schedule)
    config = SamplerConfig(seed=s.seed, steps=s.steps, canvas=canvas, channels=channels)
    conds = plan_conds(plan)
    if s.base_cond is not None:
        conds = dataclasses.replace(conds, base=embed_prompt(s.base_cond))
    latent = sample_crd(plan, denoiser, schedule, config, conds=conds)
    save_latent(latent, args.out)
    outputs = [_output_entry("latent", args.out)]
    if args.png:
        latent_to_png(latent, args.png)
        outputs.append(_output_entry("png", args.png))
    record = {
        "command": "generate",
        "seed": s.seed,
        "steps": s.steps,
        "canvas": f"{canvas.width}x{canvas.height}",
        "channels": channels,
        "base_ratio": plan.base_ratio,
        "base_cond": s.base_cond,
        "denoiser": denoiser_desc,
        "plan_block": serialize_plan_block(plan),
        "outputs": outputs,
    }
    record_path = args.record or f"{args.out}.run.json"
    _write_record(record_path, record)
    print(f"wrote {args.out}")
    return 0


def cmd_edit(args: argparse.Namespace) -> int:
    s = Settings(args)
    latent = load_latent(args.latent)
    edit_plan = load_edit_plan(args.edits)
    schedule = make_schedule(s.steps)
    denoiser, channels, denoiser_desc = make_denoiser(s, schedule, fallback_channels=latent.channels)
    if channels != latent.channels:
        raise UsageError(
            f"latent has {latent.channels} channels but the denoiser expects {channels}"
        )
    config = SamplerConfig(seed=s.seed, steps=s.steps, canvas=latent.canvas, channels=channels)
    result, log = execute_plan(latent, edit_plan, denoiser, schedule, config)
    save_latent(result, args.out)
    outputs = [_output_entry("latent", args.out)]
    if args.png:
        latent_to_png(result, args.png)
        outputs.append(_output_entry("png", args.png))
    record = {
        "command": "edit",
        "seed": s.seed,
        "steps": s.steps,
        "source": {"path": str(args.latent), "sha256": _file_sha256(args.latent)},
        "denoiser": denoiser_desc,
        "ops": [
            {
                "kind": entry.op.kind,
                "target": entry.op.target,
                "rect": [entry.op.rect.x0, entry.op.rect.y0, entry.op.rect.width, entry.op.rect.height],
                "cond_id": entry.op.cond_id,
                "before_sha256": entry.before_digest,
                "after_sha256": entry.after_digest,
            }
            for entry in log
        ],
        "outputs": outputs,
    }
    record_path = args.record or f"{args.out}.run.json"
    _write_record(record_path, record)
    print(f"applied {len(log)} ops, wrote {args.out}")
    return 0


def cmd_loop(args: argparse.Namespace) -> int:
    s = Settings(args)
    latent = load_latent(args.latent)
    if not s.world_path:
        raise UsageError("loop needs --world FILE (captioning uses the world)")
    targets = [t.strip() for t in args.targets.split(",") if t.strip()]
    if not targets:
        raise UsageError("--targets must list at least one label")
    split = parse_split(args.split)
    regions = resolve_regions(split, latent.canvas)
    if len(regions) != len(targets):
        raise UsageError(f"{len(targets)} targets for {len(regions)} regions")
    schedule = make_schedule(s.steps)
    denoiser, channels, denoiser_desc = make_denoiser(s, schedule)
    if channels != latent.channels:
        raise UsageError(
            f"latent has {latent.channels} channels but the world has {channels}"
        )
    config = SamplerConfig(seed=s.seed, steps=s.steps, canvas=latent.canvas, channels=channels)
    result = run_closed_loop(
        latent,
        targets,
        regions,
        denoiser.world,
        denoiser,
        schedule,
        config,
        max_rounds=s.max_rounds,
    )
    for state in result.rounds:
        print(
            f"round {state.index + 1}: observed {','.join(state.observed)}; "
            f"{len(state.plan.ops)} ops"
        )
    verdict = "matched" if result.success else "round budget exhausted"
    print(f"{verdict}: observed {','.join(result.observed)}")
    save_latent(result.final, args.out)
    outputs = [_output_entry("latent", args.out)]
    if args.png:
        latent_to_png(result.final, args.png)
        outputs.append(_output_entry("png", args.png))
    record = {
        "command": "loop",
        "seed": s.seed,
        "steps": s.steps,
        "targets": targets,
        "split": args.split,
        "max_rounds": s.max_rounds,
        "success": result.success,
        "max_rounds_exceeded": result.max_rounds_exceeded,
        "rounds": [
            {
                "index": state.index,
                "observed": list(state.observed),
                "ops": len(state.plan.ops),
            }
            for state in result.rounds
        ],
        "final_observed": list(result.observed),
        "source": {"path": str(args.latent), "sha256": _file_sha256(args.latent)},
        "denoiser": denoiser_desc,
        "outputs": outputs,
    }
    record_path = args.record or f"{args.out}.run.json"
    _write_record(record_path, record)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="settings file, key = value lines")
    parser.add_argument("--seed", type=int, help="sampler seed (default 0)")
    parser.add_argument("--steps", type=int, help=f"diffusion steps (default {DEFAULT_STEPS})")


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=("http", "fixtures"), help="chat backend")
    parser.add_argument("--fixtures", help="fixture store directory")
    parser.add_argument("--url", help="chat endpoint for --backend http")
    parser.add_argument("--model", help="model name sent to the endpoint")
    parser.add_argument("--key-env", dest="key_env", help="env var holding the API key")


def _add_denoiser_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--world", help="Gaussian-mixture world file")
    parser.add_argument(
        "--attn",
        action="store_const",
        const="attn",
        dest="denoiser",
        help="use the attention toy denoiser",
    )
    parser.add_argument("--channels", type=int, help="latent channels (attn denoiser)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpg", description="regional diffusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="turn a prompt into a region plan block")
    _add_common(p_plan)
    _add_backend_flags(p_plan)
    p_plan.add_argument("--prompt", help="image request text")
    p_plan.add_argument("--base-ratio", dest="base_ratio", type=float, help="blend override")
    p_plan.add_argument("--out", help="plan file to write (default stdout)")
    p_plan.set_defaults(func=cmd_plan)

    p_gen = sub.add_parser("generate", help="sample a latent from a plan or prompt")
    _add_common(p_gen)
    _add_backend_flags(p_gen)
    _add_denoiser_flags(p_gen)
    p_gen.add_argument("--prompt", help="image request text (planned via backend)")
    p_gen.add_argument("--plan", help="plan block file from 'rpg plan'")
    p_gen.add_argument("--base-ratio", dest="base_ratio", type=float, help="blend override")
    p_gen.add_argument("--canvas", help=f"WIDTHxHEIGHT (default {DEFAULT_CANVAS})")
    p_gen.add_argument("--base-cond", dest="base_cond", help="conditioning id for the base pass")
    p_gen.add_argument("--out", required=True, help="latent output path")
    p_gen.add_argument("--png", help="also export a PNG preview")
    p_gen.add_argument("--record", help="run record path (default OUT.run.json)")
    p_gen.set_defaults(func=cmd_generate)

    p_edit = sub.add_parser("edit", help="apply an edit plan to a latent")
    _add_common(p_edit)
    _add_denoiser_flags(p_edit)
    p_edit.add_argument("--latent", required=True, help="input latent file")
    p_edit.add_argument("--edits", required=True, help="edit plan file")
    p_edit.add_argument("--out", required=True, help="latent output path")
    p_edit.add_argument("--png", help="also export a PNG preview")
    p_edit.add_argument("--record", help="run record path (default OUT.run.json)")
    p_edit.set_defaults(func=cmd_edit)

    p_loop = sub.add_parser("loop", help="caption-edit rounds until targets match")
    _add_common(p_loop)
    p_loop.add_argument("--latent", required=True, help="input latent file")
    p_loop.add_argument("--targets", required=True, help="comma-separated region labels")
    p_loop.add_argument("--split", required=True, help="split notation for the regions")
    p_loop.add_argument("--world", help="Gaussian-mixture world file")
    p_loop.add_argument("--max-rounds", dest="max_rounds", type=int, help="edit round budget")
    p_loop.add_argument("--out", required=True, help="latent output path")
    p_loop.add_argument("--png", help="also export a PNG preview")
    p_loop.add_argument("--record", help="run record path (default OUT.run.json)")
    p_loop.set_defaults(func=cmd_loop)

    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except BadStepCountError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        if isinstance(exc, (FixtureMissError, MalformedReplyError)):
            print(f"backend reply error: {exc}", file=sys.stderr)
            return 4
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except (
        UnparseableResponseError,
        PlanInvalidError,
        LayoutError,
        GmmWorldError,
        UnknownCondError,
        LatentError,
        NestingTooDeepError,
    ) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit 5
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5


def main() -> None:
    sys.exit(run())
