//! Random-intercept REML against a brute-force dense-covariance maximizer.
//!
//! The oracle works on the full n-by-n covariance V = sigma2 I + tau2 ZZ',
//! evaluating the restricted log-likelihood by dense Cholesky and
//! maximizing it with nothing but a refining 2-D grid, so it shares no
//! code path with the crate's profiled one-dimensional search.

mod common;

#[test]
fn profiled_fit_matches_dense_grid_maximizer() {
    let check = common::lmm_oracle_check(20);
    assert!(check.pass, "{}", check.detail);
}

#[test]
fn all_singleton_groups_reduce_to_ols() {
    let check = common::lmm_singleton_check();
    assert!(check.pass, "{}", check.detail);
}
