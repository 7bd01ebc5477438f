"""Frame-level localization of manipulated regions in partially fake audio.

The package covers the full loop: synthesizing a two-domain benchmark corpus,
training an ensemble of experts that are pushed apart in latent space,
mining the target-domain clips the ensemble disagrees on, pseudo-labeling
them by swapping low-energy-bounded segments, and retraining plus evaluating
a frame-level detector.
"""
from .config import canonical_json, config_hash, derive_seed
from .dsp import (
    AudioClip,
    FeatureMatrix,
    FrameGrid,
    append_deltas,
    delta_energy,
    frame_energy,
    lfcc,
    load_wav,
    make_frames,
    quantize16,
    read_feature_cache,
    write_feature_cache,
    write_wav,
    zero_crossing_rate,
)
from .evaluate import (
    EntropySummary,
    FrameMetrics,
    dissimilarity_matrix,
    entropy_summary,
    frame_metrics,
    mean_pairwise_dissimilarity,
    sentence_accuracy,
)
from .experts import (
    Ensemble,
    Expert,
    ExpertConfig,
    Sample,
    TrainingData,
    bce_loss,
    cosine_sim,
    distillation_loss,
    forward,
    load_ensemble,
    load_expert,
    save_ensemble,
    save_expert,
    total_loss,
    train_ensemble,
    train_expert,
)
from .manifest import ManifestRecord, read_manifest, resolve_wav_path, write_manifest
from .manipulation import (
    CutPointSet,
    FrameLabels,
    PseudoLabeledSample,
    SwapSpec,
    find_cut_points,
    generate_labels,
    pseudo_label_clip,
    select_swap_segments,
    swap_segments,
)
from .mining import (
    MiningReport,
    VoteMatrix,
    ensemble_vote,
    frame_entropy,
    kmeans_cluster,
    multicluster_select,
    negative_mining_select,
    random_select,
    rank_and_select,
    read_mining_report,
    sample_information,
    write_mining_report,
)
from .pipeline import (
    RunConfig,
    Workspace,
    run_mine,
    run_pseudo_label,
    run_retrain_eval,
    run_sweep,
    run_synth,
    run_train_experts,
)
from .synth import (
    DomainConfig,
    source_domain_config,
    synth_clip,
    synth_domain_corpus,
    target_domain_config,
)

__version__ = "0.1.0"
