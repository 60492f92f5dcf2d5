//! Ad-hoc diagnostic: which AEM moment component (mean or covariance) breaks
//! level-1 delayed acceptance, comparing run-estimated moments against ideal
//! posterior-local ones.

use mlda::darcy::{self, DarcyConfig};
use mlda::hierarchy::{run_rwmh, ForwardModel, MldaOptions, MldaSampler};
use mlda::kernel::{
    gaussian_log_likelihood, sample_prior, GaussianNoiseModel, ProposalConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

const BASE_SEED: u64 = 20250815;

fn batch_moments(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len();
    let m = samples[0].len();
    let mut mean = DVector::zeros(m);
    for s in samples {
        mean += s;
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(m, m);
    for s in samples {
        let c = s - &mean;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    (mean, cov)
}

fn top_eigs(cov: &DMatrix<f64>, sigma2: f64, n: usize) -> Vec<f64> {
    let eig = cov.clone_owned().symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().map(|v| v / sigma2).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.truncate(n);
    ev
}

fn main() {
    let config = DarcyConfig::default();
    let levels = darcy::build_darcy_levels(&config).unwrap();
    let noise = darcy::noise_model(&config).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(BASE_SEED);
    rng.set_stream(1);
    let data = darcy::generate_synthetic_data(&levels, &noise, &mut rng).unwrap();
    let sigma = config.noise_std;
    let sigma2 = sigma * sigma;

    let proposal_config = ProposalConfig {
        single_site: true,
        ..ProposalConfig::default()
    };

    // A. Ideal posterior-local moments from a fine-level chain.
    let mut rng = ChaCha12Rng::seed_from_u64(BASE_SEED + 101);
    let init = sample_prior(levels[2].parameter_dim(), &mut rng);
    let (trace, _) = run_rwmh(
        levels[2].as_ref(),
        &noise,
        &data.observations,
        proposal_config,
        3000,
        2000,
        init,
        &mut rng,
    )
    .unwrap();
    let cloud: Vec<&DVector<f64>> = trace.samples[1500..]
        .iter()
        .step_by(15)
        .map(|s| &s.theta)
        .collect();
    let b0: Vec<DVector<f64>> = cloud
        .iter()
        .map(|t| levels[1].evaluate(t).unwrap() - levels[0].evaluate(t).unwrap())
        .collect();
    let b1: Vec<DVector<f64>> = cloud
        .iter()
        .map(|t| levels[2].evaluate(t).unwrap() - levels[1].evaluate(t).unwrap())
        .collect();
    let (mu_i0, cov_i0) = batch_moments(&b0);
    let (mu_i1, cov_i1) = batch_moments(&b1);
    println!(
        "ideal: |mu0| {:.4}, Σ0 diag mean {:.2}σ², top eigs {:.2?}",
        mu_i0.norm(),
        cov_i0.diagonal().mean() / sigma2,
        top_eigs(&cov_i0, sigma2, 5)
    );

    // B. Run-estimated moments from the adaptive sampler.
    let hierarchy =
        darcy::build_hierarchy(&config, &[5, 5], data.observations.clone(), true).unwrap();
    let mut options = MldaOptions::default();
    options.proposal.single_site = true;
    let mut rng = ChaCha12Rng::seed_from_u64(BASE_SEED);
    let init = sample_prior(hierarchy.parameter_dim(), &mut rng);
    let mut sampler = MldaSampler::new(&hierarchy, options).unwrap();
    let run = sampler.run(2000, 1000, init, &mut rng).unwrap();
    let bm = run.bias.unwrap();
    let (mu_e0, cov_e0) = (bm.term(0).mean().clone(), bm.term(0).covariance().clone());
    println!(
        "estimated: |mu0| {:.4}, |mu0-ideal|/σ per entry {:.2}, Σ0 diag mean {:.2}σ², top eigs {:.2?}",
        mu_e0.norm(),
        (&mu_e0 - &mu_i0).norm() / sigma / (noise.dim() as f64).sqrt(),
        cov_e0.diagonal().mean() / sigma2,
        top_eigs(&cov_e0, sigma2, 5)
    );

    // C. Cross matrix: which component breaks the DA acceptance.
    let corrected1 =
        GaussianNoiseModel::new(noise.mean_shift() + &mu_i1, noise.covariance() + &cov_i1)
            .unwrap();
    for (mu_label, mu0) in [("ideal-mu", &mu_i0), ("est-mu", &mu_e0)] {
        for (cov_label, cov0) in [("ideal-cov", &cov_i0), ("est-cov", &cov_e0)] {
            let corrected0 = GaussianNoiseModel::new(
                noise.mean_shift() + mu0 + &mu_i1,
                noise.covariance() + cov0 + &cov_i1,
            )
            .unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(BASE_SEED + 202);
            let init = sample_prior(levels[0].parameter_dim(), &mut rng);
            let (ctrace, _) = run_rwmh(
                levels[0].as_ref(),
                &corrected0,
                &data.observations,
                proposal_config,
                3000,
                2000,
                init,
                &mut rng,
            )
            .unwrap();
            let ll0 = |t: &DVector<f64>| {
                gaussian_log_likelihood(
                    &levels[0].evaluate(t).unwrap(),
                    &corrected0,
                    &data.observations,
                )
                .unwrap()
            };
            let ll1 = |t: &DVector<f64>| {
                gaussian_log_likelihood(
                    &levels[1].evaluate(t).unwrap(),
                    &corrected1,
                    &data.observations,
                )
                .unwrap()
            };
            let (mut acc, mut n) = (0.0, 0);
            for i in (0..ctrace.len() - 5).step_by(7) {
                let (a, b) = (&ctrace.samples[i].theta, &ctrace.samples[i + 5].theta);
                if a == b {
                    continue;
                }
                let log_ratio = (ll1(b) - ll1(a)) - (ll0(b) - ll0(a));
                acc += log_ratio.exp().min(1.0);
                n += 1;
            }
            println!(
                "predicted L1 acceptance [{mu_label} + {cov_label}]: {:.3} ({n} pairs)",
                acc / n as f64
            );
        }
    }
}
