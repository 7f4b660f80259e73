//! Evaluation protocols for trained models.

mod anomaly;
mod energy;
mod metrics;
mod mig;
mod probe;
mod resample;

pub use anomaly::{anomaly_score, recon_errors, recon_mse, score_dataset};
pub use energy::{energy_profile, ols_slope, EnergyProfile};
pub use metrics::{auprc, auroc, ScoredExample};
pub use mig::{
    dataset_factors, entropy, equal_mass_bins, equal_width_bins, mig_and_migsup, mig_scores, mutual_information,
    FACTOR_BINS, LATENT_BINS,
};
pub use probe::{layer_codes, probe_accuracy, probe_layer, probe_raw, ProbeClassifier, ProbeConfig, ProbeFeatures};
pub use resample::{
    flip_rate, hierarchical_resample, linspace, resample_layers, traversal_grid, traverse, TraversalGrid,
};
