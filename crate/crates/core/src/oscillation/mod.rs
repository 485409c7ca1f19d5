//! Hilbert analysis of node-averaged feature series and oscillatory pair
//! identification.
//!
//! A pair `(i, j)` is kept when both features carry strong oscillations at a
//! common frequency and `theta_i - theta_j` sits near `+pi/2`. Survivors are
//! ranked by coherence, amplitude, decoder strength and footprint overlap.

mod hilbert;
mod pairs;

pub use hilbert::{
    analytic_signal, analyze_features, frequency_proxy, interior, node_average, node_averages,
    phase_locking, wrap_angle, AnalyticSignal, FeatureSignal, MIN_SERIES_LEN,
};
pub use pairs::{
    combine_scores, energy_map, filter_pairs, filter_signals, footprint_coherence, identify_pairs,
    rank_pairs, select_disjoint, OscillatoryPair, PairCandidate, PairFilterConfig, PairMetrics,
};
