"""Regional prompt-to-latent toolkit.

Split a canvas into regions, plan per-region subprompts (by hand or via
a chat backend), sample each region with its own conditioning while a
base pass keeps the whole coherent, then inpaint, diff, and loop until
the result matches the request.
"""

from .layout import (
    Canvas,
    CanvasTooSmallError,
    LayoutError,
    PartitionReport,
    RegionRect,
    SplitRow,
    SplitSpec,
    parse_split,
    resolve_regions,
    serialize_split,
    validate_partition,
)
from .latents import (
    LatentError,
    LatentGrid,
    Mask,
    concat_regions,
    latent_from_bytes,
    latent_bytes,
    latent_to_png,
    load_latent,
    load_mask,
    resize_latent,
    save_latent,
    save_mask,
)
from .schedule import NoiseSchedule, ddpm_step, make_schedule, q_sample
from .conditioning import EMBED_DIM, CondEmbedding, embed_prompt
from .plan import (
    Discrepancy,
    EditOp,
    EditPlan,
    EntityList,
    PlanInvalidError,
    PromptPlan,
    Subprompt,
    plan_depth,
    validate_plan,
)
from .sampling import (
    Denoiser,
    NestingTooDeepError,
    RegionConds,
    SamplerConfig,
    crd_step,
    plan_conds,
    sample_crd,
    sample_hierarchical,
    sample_inpaint,
)
from .denoisers import (
    AttnDenoiser,
    AttnParams,
    GmmCond,
    GmmDenoiser,
    GmmWorld,
    GmmWorldError,
    UnknownCondError,
    attn_denoise,
    attn_loss_and_grads,
    gmm_posterior_x0,
    init_attn_params,
    load_gmm_world,
    oracle_caption,
    parse_gmm_world,
    save_gmm_world,
    serialize_gmm_world,
)
from .backends import (
    Backend,
    BackendError,
    ChatMessage,
    FixtureBackend,
    FixtureMissError,
    FixtureStore,
    HttpBackend,
    message_digest,
)
from .planner import (
    DiffReport,
    MalformedPlanBlockError,
    NoPlanBlockError,
    UnparseableResponseError,
    caption_entities,
    diff_entities,
    parse_plan_response,
    plan_edit,
    plan_regions,
    recaption,
    serialize_plan_block,
)
from .editing import (
    LoopResult,
    OpLogEntry,
    RoundState,
    apply_op,
    execute_plan,
    load_edit_plan,
    mask_from_region,
    run_closed_loop,
    save_edit_plan,
)

__version__ = "0.1.0"
