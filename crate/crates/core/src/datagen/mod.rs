//! Synthetic irregular event sequences from a latent Markov process, the
//! exact Bayes predictor for that process, and dataset files.

mod generate;
mod io;
mod oracle;
mod sequence;
mod spec;

pub use generate::{derive_labels, generate_cohort, generate_latent_cohort, generate_patient, LatentPatient};
pub use io::{read_dataset, split, write_dataset};
pub use oracle::{bayes_predictive, bayes_topk, brute_force_predictive, latent_posterior};
pub use sequence::{IrregularSequence, Labels};
pub use spec::{Boost, GeneratorSpec, LabelSpec, SPEC_VERSION};
