//! Interchange formats and the cross-domain split protocol.

mod embeddings;
mod interactions;
mod split;

pub use embeddings::{
    decode as decode_embeddings, encode as encode_embeddings, load_embeddings, save_embeddings,
    EmbeddingTable, HEADER_LEN, MAGIC, VERSION,
};
pub use interactions::{
    filter_min_interactions, read_interactions, write_interactions, DomainDataset,
    InteractionRecord, MAX_RATING, MIN_RATING,
};
pub use split::{
    holdout_count, make_cross_domain_split, overlapping_users, CrossDomainSplit, SplitManifest,
    HOLDOUT_FRACTION, SPLIT_FILES, SPLIT_MANIFEST,
};
