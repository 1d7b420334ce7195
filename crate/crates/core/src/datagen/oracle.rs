use super::{GeneratorSpec, IrregularSequence};
use crate::error::{ensure, Result};
use crate::numerics::top_k;

fn gap_density(rate: f64, dt: f64) -> f64 {
    rate * (-rate * dt).exp()
}

/// Exact filtering posterior `P(z_n | x_{1..n}, t_{1..n})` by the forward
/// algorithm. Every event after the first contributes its exponential gap
/// likelihood and its (boosted) emission likelihood.
pub fn latent_posterior(spec: &GeneratorSpec, prefix: &IrregularSequence) -> Result<Vec<f64>> {
    spec.validate()?;
    prefix.validate(Some(spec.vocab_size))?;
    ensure!(!prefix.is_empty(), "posterior needs a non-empty prefix");
    let k = spec.latent_states;
    let (tokens, times) = (&prefix.tokens, &prefix.times);
    let mut alpha = vec![0.0; k];
    for n in 0..prefix.len() {
        let mut next = vec![0.0; k];
        for (z, a) in next.iter_mut().enumerate() {
            let e = spec.emission_at(z, &tokens[..n], &times[..n], times[n])[tokens[n]];
            *a = if n == 0 {
                spec.initial[z] * e
            } else {
                let dt = times[n] - times[n - 1];
                let into: f64 = (0..k).map(|y| alpha[y] * spec.transition[y][z]).sum();
                into * gap_density(spec.gap_rates[z], dt) * e
            };
        }
        let total: f64 = next.iter().sum();
        ensure!(total > 0.0, "prefix {} has zero probability under the spec at event {n}", prefix.id);
        alpha = next.into_iter().map(|a| a / total).collect();
    }
    Ok(alpha)
}

/// One-step predictive distribution over codes for the next event.
///
/// With `target_time = Some(t)` the next event is known to occur at `t`, so
/// the next latent state is weighted by its gap density at `t − t_n` and
/// boosts are evaluated at `t`. With `None` the gap is marginalized out and
/// boosts are evaluated at the last observed time.
pub fn bayes_predictive(
    spec: &GeneratorSpec,
    prefix: &IrregularSequence,
    target_time: Option<f64>,
) -> Result<Vec<f64>> {
    let post = latent_posterior(spec, prefix)?;
    let k = spec.latent_states;
    let last = prefix.last_time().expect("non-empty");
    if let Some(t) = target_time {
        ensure!(t.is_finite() && t >= last, "target time {t} precedes the prefix end {last}");
    }
    let at = target_time.unwrap_or(last);
    let mut w = vec![0.0; k];
    for (z, wz) in w.iter_mut().enumerate() {
        let into: f64 = (0..k).map(|y| post[y] * spec.transition[y][z]).sum();
        *wz = match target_time {
            Some(t) => into * gap_density(spec.gap_rates[z], t - last),
            None => into,
        };
    }
    let total: f64 = w.iter().sum();
    ensure!(total > 0.0, "target time {at} has zero density under the spec");
    let mut out = vec![0.0; spec.vocab_size];
    for (z, &wz) in w.iter().enumerate() {
        let row = spec.emission_at(z, &prefix.tokens, &prefix.times, at);
        for (o, e) in out.iter_mut().zip(row) {
            *o += wz / total * e;
        }
    }
    Ok(out)
}

/// Top-`k` codes of [`bayes_predictive`], ties to the lower id.
pub fn bayes_topk(
    spec: &GeneratorSpec,
    prefix: &IrregularSequence,
    k: usize,
    target_time: Option<f64>,
) -> Result<Vec<usize>> {
    ensure!(k <= spec.vocab_size, "K = {k} exceeds vocab {}", spec.vocab_size);
    Ok(top_k(&bayes_predictive(spec, prefix, target_time)?, k))
}

/// [`bayes_predictive`] by summing the joint over every latent path.
/// Exponential in the prefix length; for cross-checking only.
pub fn brute_force_predictive(spec: &GeneratorSpec, prefix: &IrregularSequence, target_time: Option<f64>) -> Vec<f64> {
    let k = spec.latent_states;
    let n = prefix.len();
    let (tokens, times) = (&prefix.tokens, &prefix.times);
    let last = times[n - 1];
    let at = target_time.unwrap_or(last);
    let mut out = vec![0.0; spec.vocab_size];
    let mut path = vec![0usize; n + 1];
    let total_paths = k.pow((n + 1) as u32);
    for code in 0..total_paths {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % k;
            c /= k;
        }
        let mut w = spec.initial[path[0]];
        for i in 0..=n {
            let z = path[i];
            if i > 0 {
                w *= spec.transition[path[i - 1]][z];
                if i < n {
                    w *= gap_density(spec.gap_rates[z], times[i] - times[i - 1]);
                } else if let Some(t) = target_time {
                    w *= gap_density(spec.gap_rates[z], t - last);
                }
            }
            if i < n {
                w *= spec.emission_at(z, &tokens[..i], &times[..i], times[i])[tokens[i]];
            }
        }
        let row = spec.emission_at(path[n], tokens, times, at);
        for (o, e) in out.iter_mut().zip(row) {
            *o += w * e;
        }
    }
    let total: f64 = out.iter().sum();
    out.iter().map(|o| o / total).collect()
}
