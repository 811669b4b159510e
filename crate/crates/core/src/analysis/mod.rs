//! Parameter tuning and runtime diagnostics.

mod diagnostics;
mod tuning;

pub use diagnostics::{
    check_envelope, check_lemma3, check_lemma4, compute_theta, conservation_gaps, diagnostics_series,
    diagnostics_to_csv, error_vector, fit_linear_rate, performance_index, DiagnosticsRecord, Lemma3Check,
    Lemma4Check, RESIDUAL_FLOOR,
};
pub use tuning::{
    alpha_stability_threshold, alpha_upper_bound, auto_alpha, bandwidth_bits, big_c1, build_h, c3_constant,
    choose_gamma, default_epsilon, eigenvalues, initial_bounds, level_bound, spectral_norm3, spectral_radius,
    spectral_radius_power, tune, zeta_constant, TuningInputs, TuningReport,
};
