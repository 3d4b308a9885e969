//! Shared fixtures for the criterion benches.

use noisyimpute::stochastics::{stream_id, Purpose};
use noisyimpute::{
    ampute, generate_population, make_stream, IncompleteDataset, MissingnessSpec, PopulationSpec,
    SeedSpec,
};

/// An amputed sample of `n` rows drawn from a population of `10 * n`.
pub fn fixture(r_squared: f64, n: usize, mar: bool, seed: u64) -> IncompleteDataset {
    let spec = PopulationSpec {
        size: 10 * n,
        ..PopulationSpec::with_r_squared(r_squared)
    };
    let mut pop_stream = make_stream(SeedSpec::new(
        seed,
        stream_id("bench", 0, Purpose::Population),
    ));
    let pop = generate_population(&spec, &mut pop_stream).expect("valid spec");
    let mut s = make_stream(SeedSpec::new(
        seed,
        stream_id("bench", 0, Purpose::Sampling),
    ));
    let sample = noisyimpute::datagen::draw_sample(&pop, n, &mut s).expect("n <= size");
    let mech = if mar {
        MissingnessSpec::mar_right(0.5)
    } else {
        MissingnessSpec::mcar(0.5)
    };
    let mut s = make_stream(SeedSpec::new(
        seed,
        stream_id("bench", 0, Purpose::Amputation),
    ));
    ampute(sample, &mech, &mut s).expect("valid mechanism")
}
