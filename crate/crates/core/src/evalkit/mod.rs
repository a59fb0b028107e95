//! Latent probes, gap-width oracle, downstream classifiers and the
//! experiment drivers built on them.

mod classifier;
mod gap;
mod latent;
mod studies;
mod svm;

pub use classifier::{gather, Classifier, ClassifierKind};
pub use gap::{distance_to_range, gap_width_estimate, otsu_threshold};
pub use latent::{encode_set, exchange_semantics, held_out_pairs, latent_probe, EncodedSet, ExchangeScores, ProbeScores};
pub use studies::{
    augment_csv, augment_summary_csv, augmentation_eval, best_cell, decade_grid, grid_csv, grid_search, mean_accuracy,
    sample_size_study, sizes_csv, write_augment, write_grid, write_sizes, AugmentConfigEval, AugmentRow, GridRow,
    InputSet, SizeRow, PROBE_PER_CLASS,
};
pub use svm::{default_gamma, probe_train, ProbeModel, DEFAULT_C, KKT_TOL};

#[cfg(test)]
mod tests;
