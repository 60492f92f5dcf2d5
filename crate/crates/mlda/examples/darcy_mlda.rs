//! Minimal end-to-end run of the Darcy benchmark: generate synthetic data,
//! sample with the adaptive error model, and print summary numbers.
//!
//! ```sh
//! cargo run --release --example darcy_mlda
//! ```

use mlda::darcy::{self, DarcyConfig};
use mlda::diagnostics::effective_sample_size;
use mlda::hierarchy::{MldaOptions, MldaSampler};
use mlda::kernel::sample_prior;
use rand::SeedableRng;

fn main() -> mlda::Result<()> {
    let config = DarcyConfig::default();
    let levels = darcy::build_darcy_levels(&config)?;
    let noise = darcy::noise_model(&config)?;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    let data = darcy::generate_synthetic_data(&levels, &noise, &mut rng)?;

    let hierarchy = darcy::build_hierarchy(&config, &[5, 5], data.observations, true)?;
    // Non-blocked coarse proposal, as in the reference experiment.
    let mut options = MldaOptions::default();
    options.proposal.single_site = true;
    let mut sampler = MldaSampler::new(&hierarchy, options)?;
    let initial = sample_prior(hierarchy.parameter_dim(), &mut rng);
    let run = sampler.run(500, 250, initial, &mut rng)?;

    let top = hierarchy.top_level();
    println!("top-level acceptance: {:.3}", run.stats.acceptance_rate(top)?);
    for level in 0..hierarchy.n_levels() {
        println!(
            "level {level}: {} forward evaluations",
            run.stats.total_forward_evaluations(level)
        );
    }
    let ess = effective_sample_size(&[run.trace.parameter_column(0)])?;
    println!("ESS(theta_1) over {} samples: {ess:.0}", run.trace.len());
    Ok(())
}
