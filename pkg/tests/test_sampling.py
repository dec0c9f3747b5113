"""Composed regional sampling: branches, blending, nesting, inpainting."""

import numpy as np
import pytest
from conftest import ConstDenoiser, two_cond_world

from rpg.conditioning import embed_prompt
from rpg.denoisers import GmmDenoiser
from rpg.latents import EmptyMaskError, LatentGrid, Mask
from rpg.layout import Canvas, RegionRect
from rpg.plan import PromptPlan
from rpg.sampling import (
    NestingTooDeepError,
    SamplerConfig,
    crd_step,
    plan_conds,
    sample_crd,
    sample_hierarchical,
    sample_inpaint,
)
from rpg.schedule import make_schedule

CANVAS = Canvas(width=8, height=4)


def config(seed=0, steps=25, canvas=CANVAS, channels=1, **kw):
    return SamplerConfig(seed=seed, steps=steps, canvas=canvas, channels=channels, **kw)


def test_plan_conds_ids_follow_recaptions():
    plan = PromptPlan.simple("whole scene", ["left thing", "right thing"], "1,1")
    conds = plan_conds(plan)
    assert conds.base.id == "whole scene"
    assert [c.id for c in conds.subs] == ["left thing", "right thing"]


def test_config_validation():
    with pytest.raises(ValueError):
        config(steps=0)
    with pytest.raises(ValueError):
        config(channels=0)
    with pytest.raises(ValueError):
        SamplerConfig(seed=0, steps=25, canvas=CANVAS, channels=1, base_ratio=1.5)


def test_crd_step_blend_matches_hand_formula():
    """out = beta * base + (1 - beta) * composite, computed in float64."""
    beta = 0.3
    plan = PromptPlan.simple("base", ["A", "B"], "1,1", base_ratio=beta)
    den = ConstDenoiser({"base": 0.5, "A": 1.0, "B": -1.0})
    sched = make_schedule(25)
    cfg = config()
    rng = np.random.default_rng(4)
    z = LatentGrid(rng.standard_normal((4, 8, 1), dtype=np.float32))
    noise = rng.standard_normal((4, 8, 1), dtype=np.float32)
    out, parts = crd_step(z, plan, None, den, sched, 10, cfg, noise=noise)
    manual = (
        beta * parts.base.data.astype(np.float64)
        + (1 - beta) * parts.concatenated.data.astype(np.float64)
    ).astype(np.float32)
    np.testing.assert_array_equal(out.data, manual)


def test_crd_step_composite_is_region_crops():
    plan = PromptPlan.simple("base", ["A", "B"], "1,1", base_ratio=0.4)
    den = ConstDenoiser({"base": 0.0, "A": 2.0, "B": -2.0})
    sched = make_schedule(25)
    rng = np.random.default_rng(8)
    z = LatentGrid(rng.standard_normal((4, 8, 1), dtype=np.float32))
    noise = rng.standard_normal((4, 8, 1), dtype=np.float32)
    _, parts = crd_step(z, plan, None, den, sched, 5, config(), noise=noise)
    for rect, branch in parts.regions:
        window = parts.concatenated.data[rect.y0 : rect.y1, rect.x0 : rect.x1, :]
        np.testing.assert_array_equal(window, branch.data)
    assert [rect for rect, _ in parts.regions] == [
        RegionRect(x0=0, y0=0, width=4, height=4),
        RegionRect(x0=4, y0=0, width=4, height=4),
    ]


def test_beta_one_returns_base_branch_bitwise():
    plan = PromptPlan.simple("base", ["A", "B"], "1,1", base_ratio=1.0)
    den = ConstDenoiser({"base": 0.3, "A": 5.0, "B": -5.0})
    sched = make_schedule(25)
    rng = np.random.default_rng(2)
    z = LatentGrid(rng.standard_normal((4, 8, 1), dtype=np.float32))
    noise = rng.standard_normal((4, 8, 1), dtype=np.float32)
    out, parts = crd_step(z, plan, None, den, sched, 7, config(), noise=noise)
    assert out.data.tobytes() == parts.base.data.tobytes()


def test_beta_zero_returns_composite_bitwise():
    plan = PromptPlan.simple("base", ["A", "B"], "1,1", base_ratio=0.0)
    den = ConstDenoiser({"base": 0.3, "A": 5.0, "B": -5.0})
    sched = make_schedule(25)
    rng = np.random.default_rng(2)
    z = LatentGrid(rng.standard_normal((4, 8, 1), dtype=np.float32))
    noise = rng.standard_normal((4, 8, 1), dtype=np.float32)
    out, parts = crd_step(z, plan, None, den, sched, 7, config(), noise=noise)
    assert out.data.tobytes() == parts.concatenated.data.tobytes()


def test_sample_crd_deterministic():
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    plan = PromptPlan.simple("background", ["A", "B"], "1,1", base_ratio=0.25)
    a = sample_crd(plan, den, sched, config(seed=31))
    b = sample_crd(plan, den, sched, config(seed=31))
    assert a.data.tobytes() == b.data.tobytes()
    c = sample_crd(plan, den, sched, config(seed=32))
    assert c.data.tobytes() != a.data.tobytes()


def test_sample_crd_matches_manual_step_loop():
    """The packaged loop is exactly: seeded z_T, then one shared noise
    draw per step fed to crd_step."""
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    plan = PromptPlan.simple("background", ["A", "B"], "1,1", base_ratio=0.25)
    cfg = config(seed=13)
    conds = plan_conds(plan)

    library = sample_crd(plan, den, sched, cfg, conds=conds)

    rng = np.random.default_rng(13)
    z = LatentGrid(rng.standard_normal((4, 8, 1), dtype=np.float32))
    for t in range(25, 0, -1):
        noise = rng.standard_normal((4, 8, 1), dtype=np.float32) if t > 1 else None
        z, _ = crd_step(z, plan, conds, den, sched, t, cfg, noise=noise)
    assert z.data.tobytes() == library.data.tobytes()


def test_beta_zero_regions_match_single_cond_runs():
    """With no base blend and a per-cell denoiser, each region is bit
    for bit the matching window of a whole-canvas single-conditioning
    run (same seed, same draws)."""
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    cfg = config(seed=5)
    combined = sample_crd(
        PromptPlan.simple("background", ["A", "B"], "1,1", base_ratio=0.0), den, sched, cfg
    )
    for cond_text, sl in (("A", np.s_[:, :4]), ("B", np.s_[:, 4:])):
        solo = sample_crd(
            PromptPlan.simple("background", [cond_text], "1", base_ratio=0.0), den, sched, cfg
        )
        assert combined.data[sl].tobytes() == solo.data[sl].tobytes()


def test_nested_beta_zero_equals_flat():
    """Splitting a region with a zero-blend nested plan is identical to
    flattening the geometry, for per-cell denoisers."""
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    cfg = config(seed=21)

    flat = PromptPlan.simple("background", ["A", "B", "A"], "2,1,1", base_ratio=0.2)
    inner = PromptPlan.simple("background", ["B", "A"], "1,1", base_ratio=0.0)
    nested = PromptPlan.simple(
        "background", ["A", "background"], "1,1", base_ratio=0.2, nested={1: inner}
    )
    a = sample_crd(flat, den, sched, cfg)
    b = sample_hierarchical(nested, den, sched, cfg)
    assert a.data.tobytes() == b.data.tobytes()


def test_nesting_depth_limit():
    inner = PromptPlan.simple("background", ["A", "B"], "1,1")
    outer = PromptPlan.simple("background", ["A", "B"], "1,1", nested={0: inner})
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    with pytest.raises(NestingTooDeepError):
        sample_crd(outer, den, sched, config(max_depth=1))
    sample_crd(outer, den, sched, config(max_depth=2))


def test_config_base_ratio_overrides_plan():
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    plan_02 = PromptPlan.simple("background", ["A", "B"], "1,1", base_ratio=0.2)
    plan_07 = PromptPlan.simple("background", ["A", "B"], "1,1", base_ratio=0.7)
    overridden = sample_crd(plan_02, den, sched, config(seed=3, base_ratio=0.7))
    direct = sample_crd(plan_07, den, sched, config(seed=3))
    assert overridden.data.tobytes() == direct.data.tobytes()


def test_inpaint_preserves_outside_bitwise():
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    cfg = config(seed=17)
    rng = np.random.default_rng(40)
    source = LatentGrid(rng.standard_normal((4, 8, 1), dtype=np.float32))
    mask = Mask.from_region(RegionRect(x0=4, y0=0, width=4, height=4), CANVAS)
    out = sample_inpaint(source, mask, embed_prompt("A"), den, sched, cfg)
    keep = mask.cells == 0
    np.testing.assert_array_equal(out.data[keep], source.data[keep])
    # and the masked half genuinely moved toward the conditioning
    assert out.data[~keep].mean() > 0.5


def test_inpaint_deterministic():
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    cfg = config(seed=17)
    source = LatentGrid(np.zeros((4, 8, 1), dtype=np.float32))
    mask = Mask.from_region(RegionRect(x0=0, y0=0, width=2, height=4), CANVAS)
    a = sample_inpaint(source, mask, embed_prompt("B"), den, sched, cfg)
    b = sample_inpaint(source, mask, embed_prompt("B"), den, sched, cfg)
    assert a.data.tobytes() == b.data.tobytes()


def test_inpaint_rejects_empty_mask():
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    source = LatentGrid(np.zeros((4, 8, 1), dtype=np.float32))
    with pytest.raises(EmptyMaskError):
        sample_inpaint(
            source, Mask(np.zeros((4, 8), dtype=np.uint8)), embed_prompt("A"), den, sched, config()
        )


def test_inpaint_rejects_mask_shape_mismatch():
    world = two_cond_world()
    sched = make_schedule(25)
    den = GmmDenoiser(world, sched)
    source = LatentGrid(np.zeros((4, 8, 1), dtype=np.float32))
    bad = Mask(np.ones((2, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        sample_inpaint(source, bad, embed_prompt("A"), den, sched, config())


def test_denoiser_output_shape_checked():
    class Wrong:
        def predict_x0(self, z_t, t, cond):
            return LatentGrid(np.zeros((1, 1, 1), dtype=np.float32))

    plan = PromptPlan.simple("base", ["A"], "1")
    sched = make_schedule(25)
    with pytest.raises(ValueError):
        sample_crd(plan, Wrong(), sched, config())
