mod common;

use common::check_term;
use partial_rca::score::TermMask;

#[test]
fn data_fit_gradient() {
    check_term(TermMask::only_data_fit(), false, 2, 20, 1000);
}

#[test]
fn weighted_data_fit_gradient() {
    check_term(TermMask::only_data_fit(), true, 2, 20, 2000);
}

#[test]
fn graph_penalty_gradient() {
    check_term(TermMask::only_graph_penalty(), false, 2, 20, 3000);
}

#[test]
fn confounder_kl_gradient() {
    check_term(TermMask::only_confounder_kl(), true, 2, 20, 4000);
}

#[test]
fn total_gradient_without_latents() {
    check_term(TermMask::ALL, true, 0, 20, 5000);
}
