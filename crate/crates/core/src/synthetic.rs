//! Seeded synthetic corpora with a known ("planted") description-to-code
//! map, for exercising training and retrieval without pretrained encoders.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{align_corpus, CorpusEntry, PairedCorpus};
use crate::embedding::EmbeddingMatrix;
use crate::hashing::mix64;
use crate::mapper::{init_network, MapperConfig, MapperNetwork};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTask {
    pub count: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden widths of the planted map; empty for a linear map.
    pub planted_hidden: Vec<usize>,
    /// Standard deviation of Gaussian noise added to each code coordinate.
    pub noise_sigma: f64,
    pub seed: u64,
}

pub fn synthetic_entries(count: usize) -> Vec<CorpusEntry> {
    (0..count)
        .map(|i| CorpusEntry {
            id: format!("s{i:06}"),
            doc_text: format!("synthetic description {i}"),
            code_text: format!("void synthetic{i}() {{}}"),
            language_tag: "synthetic".into(),
        })
        .collect()
}

/// Standard-normal matrix.
pub fn gaussian_matrix(count: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    let data = (0..count * dim).map(|_| normal.sample(&mut rng) as f32).collect();
    EmbeddingMatrix::new(dim, data).expect("finite gaussian samples")
}

/// Description vectors are standard normal; code vectors are the planted
/// network's output plus noise. Returns the corpus and the planted network.
pub fn planted_task(task: &PlantedTask) -> Result<(PairedCorpus, MapperNetwork)> {
    let planted_cfg = MapperConfig::new(task.input_dim, task.planted_hidden.clone(), task.output_dim);
    let planted = init_network(&planted_cfg, mix64(task.seed ^ 0x0050_4c41_4e54_4544))?;
    let nl = gaussian_matrix(task.count, task.input_dim, task.seed);
    let clean = planted.forward_batch(&nl)?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix64(task.seed ^ 0x004e_4f49_5345));
    let noise = Normal::new(0.0f64, task.noise_sigma.max(0.0)).unwrap();
    let code_data: Vec<f32> = clean
        .as_slice()
        .iter()
        .map(|v| {
            if task.noise_sigma > 0.0 {
                (*v as f64 + noise.sample(&mut rng)) as f32
            } else {
                *v
            }
        })
        .collect();
    let code = EmbeddingMatrix::new(task.output_dim, code_data)?;
    let corpus = align_corpus(synthetic_entries(task.count), nl, code)?;
    Ok((corpus, planted))
}

pub fn planted_corpus(task: &PlantedTask) -> Result<PairedCorpus> {
    Ok(planted_task(task)?.0)
}

/// Description and code vectors drawn independently, so no map relates them.
pub fn unrelated_corpus(count: usize, input_dim: usize, output_dim: usize, seed: u64) -> Result<PairedCorpus> {
    let nl = gaussian_matrix(count, input_dim, seed);
    let code = gaussian_matrix(count, output_dim, mix64(seed));
    align_corpus(synthetic_entries(count), nl, code)
}
