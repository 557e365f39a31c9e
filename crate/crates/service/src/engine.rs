use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use xmap_core::corpus::{read_corpus_jsonl, CorpusEntry};
use xmap_core::embedder::{embed_batch, EmbedderSpec};
use xmap_core::knn::{load_index, FlatIndex};
use xmap_core::mapper::{load_model, MapperNetwork};
use xmap_core::{Error, Result};

/// One ranked result with its corpus metadata attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub distance: f64,
    pub doc: String,
    pub code: String,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<Hit>,
}

/// Model, code index, metadata and query embedder, immutable once built.
///
/// Both the HTTP service and `xmap search` rank through [`Engine::search_vector`].
#[derive(Debug)]
pub struct Engine {
    net: MapperNetwork,
    index: FlatIndex,
    metadata: HashMap<String, CorpusEntry>,
    embedder: EmbedderSpec,
}

impl Engine {
    /// Checks that model output matches the index, the embedder feeds the
    /// model, and every indexed id has metadata.
    pub fn new(net: MapperNetwork, index: FlatIndex, corpus: Vec<CorpusEntry>, embedder: EmbedderSpec) -> Result<Self> {
        if net.output_dim() != index.dim() {
            return Err(Error::DimMismatch {
                expected: index.dim(),
                found: net.output_dim(),
            });
        }
        embedder.validate()?;
        if embedder.dim() != net.input_dim() {
            return Err(Error::DimMismatch {
                expected: net.input_dim(),
                found: embedder.dim(),
            });
        }
        let mut metadata = HashMap::with_capacity(corpus.len());
        for entry in corpus {
            let id = entry.id.clone();
            if metadata.insert(id.clone(), entry).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        if let Some(missing) = index.ids().iter().find(|id| !metadata.contains_key(*id)) {
            return Err(Error::UnknownId(missing.clone()));
        }
        Ok(Self {
            net,
            index,
            metadata,
            embedder,
        })
    }

    pub fn load(
        model: impl AsRef<Path>,
        index: impl AsRef<Path>,
        corpus: impl AsRef<Path>,
        embedder: EmbedderSpec,
    ) -> Result<Self> {
        let (net, _) = load_model(model)?;
        let index = load_index(index)?;
        let corpus = read_corpus_jsonl(corpus)?;
        Self::new(net, index, corpus, embedder)
    }

    pub fn corpus_size(&self) -> usize {
        self.index.len()
    }

    /// `[input, output]` dims of the model.
    pub fn model_dims(&self) -> [usize; 2] {
        [self.net.input_dim(), self.net.output_dim()]
    }

    pub fn embedder(&self) -> &EmbedderSpec {
        &self.embedder
    }

    /// Embeds query text. Blocks on network I/O for an external embedder.
    pub fn embed_query(&self, text: &str) -> Result<Vec<f32>> {
        Ok(embed_batch(&self.embedder, &[text])?.vectors.into_vec())
    }

    /// Maps an NL vector through the model and returns the `n` nearest
    /// indexed code items.
    pub fn search_vector(&self, nl_vector: &[f32], n: usize) -> Result<Vec<Hit>> {
        if nl_vector.len() != self.net.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.net.input_dim(),
                found: nl_vector.len(),
            });
        }
        let predicted = self.net.forward(nl_vector)?;
        let hits = self.index.search(&predicted, n)?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let entry = &self.metadata[&h.id];
                Hit {
                    doc: entry.doc_text.clone(),
                    code: entry.code_text.clone(),
                    id: h.id,
                    distance: h.distance,
                    rank: h.rank,
                }
            })
            .collect())
    }

    pub fn search_text(&self, text: &str, n: usize) -> Result<Vec<Hit>> {
        let v = self.embed_query(text)?;
        self.search_vector(&v, n)
    }
}
