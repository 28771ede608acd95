//! Per-domain user preference model.
//!
//! Each user is a point on the simplex over the domain's Gaussian components,
//! produced by the w-learner from the user's embedding. A rating for an item
//! is predicted from the user's weights times the item's (max-normalized)
//! density under each component.

mod model;
mod train;
mod weights;

pub use model::{
    evidence_matrix, feature_vector, item_evidence, rating_loss, DomainModel, RatingBatch,
    BUNDLE_FILE,
};
pub use train::{train_domain, DomainTrainConfig, EpochStats, TrainingInfo};
pub use weights::{PreferenceWeights, WEIGHT_SUM_TOL};
