"""Distance-weighted co-occurrence embeddings with attention pooling."""

from .cooc import CoocPair, SparseMatrix, build_cooc, concat_pair, concat_row, hal_weight
from .corpus import (
    EncodedDocument,
    RawDocument,
    Vocabulary,
    build_vocab,
    encode,
    encode_corpus,
    load_labeled_dir,
    tokenize,
)
from .linalg import EmbeddingTable, SvdResult, embed, spmm, spmm_t, truncated_svd
from .model import (
    AdamState,
    AttentionParams,
    ClassifierParams,
    Gradients,
    ModelParams,
    PoolResult,
    adam_step,
    attention_pool,
    attention_scores,
    attention_weights,
    classifier_forward,
    init_params,
    loss_and_grad,
    mean_pool,
    pool_sequence,
)
from .train import (
    AttentionReport,
    Checkpoint,
    EpochRecord,
    TrainConfig,
    evaluate,
    fit,
    inspect_attention,
    split,
)

__version__ = "0.1.0"
