"""Sequential recommendation with unified collaborative-semantic item
representations, scored reasoning traces, and a soft-prompt ranking head."""

from .align import (
    AlignmentBatch,
    AlignmentExample,
    AlignmentNetwork,
    UnifiedEmbedding,
    alignment_loss,
    build_alignment_dataset,
    decode,
    encode,
    init_alignment,
    reconstruction_loss,
    recommendation_loss,
    total_loss,
    train_alignment,
    unified_item_embedding,
)
from .cf import (
    CfConfig,
    CfModel,
    item_embedding,
    next_item_probabilities,
    next_item_scores,
    rank_by_score,
    train_cf,
    user_representation,
    user_representation_from_vectors,
    verbalize_prior,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, default_config, make_config, parse_config
from .cot import (
    CotRecord,
    FixtureAdapter,
    InstructionInstance,
    RemoteAdapter,
    build_instruction_instance,
    composite_score,
    filter_cots,
    generate_cot,
    score_cot,
    score_coherence,
    score_semantic_dimension,
    threshold_sweep,
)
from .data import (
    ColdWarmPartition,
    InteractionLog,
    SplitDataset,
    TrainingInstance,
    build_sequences,
    build_training_instances,
    filter_dataset,
    leave_one_out_split,
    load_catalog,
    load_interactions,
    partition_cold_warm,
    sample_negative,
)
from .errors import (
    ConfigError,
    DataError,
    DependencyError,
    FusionrecError,
    TrainingError,
)
from .evaluate import (
    CohortComparison,
    MetricReport,
    RecommendationPipeline,
    cold_warm_report,
    evaluate_split,
    zero_shot_eval,
)
from .metrics import bleu, hit_rate_at_k, ndcg_at_k, rouge
from .projection import (
    CotSignal,
    ProjectionStack,
    PromptBundle,
    SurrogateHead,
    UserContext,
    assemble_prompt,
    build_projection_examples,
    build_vocabulary,
    init_projection_stack,
    make_surrogate_head,
    project_components,
    rank_candidates,
    request_explanation,
    surrogate_lm_loss,
    train_projections,
)
from .semantic import embed_catalog, fallback_embed, load_embeddings, similarity

__version__ = "0.1.0"
