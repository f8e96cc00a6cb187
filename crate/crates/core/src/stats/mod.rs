//! Agreement coefficients, significance tests and bootstrap machinery.

mod agreement;
mod bootstrap;
mod significance;

pub use agreement::{
    cohen_kappa, kappa_from_pairs, krippendorff_alpha, pabak, ContingencyTable, KappaOutcome,
};
pub use bootstrap::{
    cycle_length, cyclic_subset, iteration_rng, keyed_rng, percentile, percentile_bootstrap,
    CIReport,
};
pub use significance::{
    adjust_p_values, binary_tests, chi_square_test, fisher_exact, kruskal_wallis, mann_whitney_u,
    midranks, ordinal_tests, BinaryTests, ChiSquareResult, Correction, KruskalWallis, MannWhitney,
    OrdinalTests, PairwiseU, UMethod,
};
