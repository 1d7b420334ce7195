use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Exp};

use super::{GeneratorSpec, IrregularSequence, Labels};
use crate::error::{ensure, Result};

/// A generated patient together with its hidden latent path.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPatient {
    pub sequence: IrregularSequence,
    pub states: Vec<usize>,
}

fn draw(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    WeightedIndex::new(weights).expect("validated distribution").sample(rng)
}

/// Samples one patient of exactly `len` events from its own stream.
pub fn generate_patient(spec: &GeneratorSpec, id: String, len: usize, rng: &mut ChaCha8Rng) -> LatentPatient {
    let mut tokens = Vec::with_capacity(len);
    let mut times = Vec::with_capacity(len);
    let mut states = Vec::with_capacity(len);
    let [lo, hi] = spec.start_age;
    let mut t = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let mut z = draw(rng, &spec.initial);
    for n in 0..len {
        if n > 0 {
            z = draw(rng, &spec.transition[z]);
            t += Exp::new(spec.gap_rates[z]).expect("positive rate").sample(rng);
        }
        let row = spec.emission_at(z, &tokens, &times, t);
        tokens.push(draw(rng, &row));
        times.push(t);
        states.push(z);
    }
    let labels = derive_labels(spec, &tokens, &times, &states);
    LatentPatient { sequence: IrregularSequence { id, tokens, times, labels }, states }
}

/// Drug-start: the drug code within the window after the first trigger
/// (false when the trigger never occurs). Phenotype: the path visits the
/// designated state.
pub fn derive_labels(spec: &GeneratorSpec, tokens: &[usize], times: &[f64], states: &[usize]) -> Labels {
    let l = &spec.labels;
    let drug_start = tokens.iter().position(|&c| c == l.drug_trigger).map(|i| {
        let t0 = times[i];
        tokens.iter().zip(times).skip(i + 1).any(|(&c, &t)| c == l.drug_code && t > t0 && t <= t0 + l.drug_window)
    });
    Labels { drug_start: Some(drug_start.unwrap_or(false)), phenotype: Some(states.contains(&l.phenotype_state)) }
}

/// Like [`generate_cohort`] but keeps the latent paths.
pub fn generate_latent_cohort(
    spec: &GeneratorSpec,
    n_patients: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<LatentPatient>> {
    spec.validate()?;
    ensure!(min_len >= 2, "min_len must be ≥ 2, got {min_len}");
    ensure!(max_len >= min_len, "max_len {max_len} < min_len {min_len}");
    Ok((0..n_patients)
        .map(|i| {
            // Each patient owns a stream so cohorts are prefix-stable and
            // could be generated in any order.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let len = rng.random_range(min_len..=max_len);
            generate_patient(spec, format!("p{i:06}"), len, &mut rng)
        })
        .collect())
}

/// Samples `n_patients` sequences with lengths uniform in
/// `[min_len, max_len]`.
pub fn generate_cohort(
    spec: &GeneratorSpec,
    n_patients: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<IrregularSequence>> {
    Ok(generate_latent_cohort(spec, n_patients, min_len, max_len, seed)?.into_iter().map(|p| p.sequence).collect())
}
