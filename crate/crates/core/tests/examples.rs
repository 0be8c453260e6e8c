//! Runs the examples that take no arguments, so they stay in step with the
//! library.

#[path = "../examples/profiles.rs"]
mod profiles;
#[path = "../examples/quantization.rs"]
mod quantization;
#[path = "../examples/search_and_rank.rs"]
mod search_and_rank;

#[test]
fn profiles_runs() {
    profiles::main();
}

#[test]
fn quantization_runs() {
    quantization::main();
}

#[test]
fn search_and_rank_runs() {
    search_and_rank::main();
}
