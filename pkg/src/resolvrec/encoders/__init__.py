"""Neural base recommenders: Siamese triplet encoder and index embeddings."""
from .indexembed import (
    IndexEmbedding,
    IndexEmbedModel,
    indexembed_loss,
    indexembed_predict,
    indexembed_proba,
    indexembed_train,
    nearest_row,
)
from .mlp import DEFAULT_WIDTHS, Layer, Mlp, init_mlp, mlp_backward, mlp_forward, sgd_step
from .siamese import (
    AugmentPolicy,
    PrototypeSet,
    SiameseConfig,
    SiameseEncoder,
    SiameseModel,
    augment,
    compute_prototypes,
    siamese_features,
    siamese_predict,
    siamese_train,
    triplet_loss,
)
