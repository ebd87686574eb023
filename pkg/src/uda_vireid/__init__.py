"""Pseudo-labeling, cross-modality alignment and loss kernels for unsupervised
visible-infrared person re-identification across domains, on fixed embeddings."""

from .alignment import (
    Assignment,
    SGMParams,
    SGMResult,
    hungarian,
    inter_modality_match,
    k_reciprocal_jaccard,
    sgm_pipeline,
    supplementary_assign,
    supplementary_cost,
)
from .clustering import ClusterSet, crmr_refine, dbscan
from .config import EPS_PRESETS, PipelineConfig, load_config, save_config
from .core import CenterMemory, EmbeddingSet, l2_normalize, memory_init, memory_update
from .evaluation import RetrievalMetrics, evaluate_retrieval
from .fileio import read_embeddings, write_embeddings
from .losses import (
    DSALTerms,
    cmcc_confidence,
    cmcc_loss,
    discriminator_loss,
    dsal_total,
    final_loss,
    generator_adversarial_loss,
    holistic_distribution,
    memory_contrastive_loss,
)
from .pipeline import StageReport, run_finetune_stage, run_pretrain_stage
from .synthbench import SynthConfig, generate_synthetic, matching_accuracy, pairwise_label_metrics

__version__ = "0.1.0"
