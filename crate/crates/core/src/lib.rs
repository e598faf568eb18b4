//! Unsupervised domain adaptation of dense retrievers with generative pseudo
//! labeling.
//!
//! The pipeline generates synthetic queries for an unlabeled target corpus,
//! mines hard negatives for each query, labels every
//! `(query, positive, negative)` triple with a cross-encoder score margin and
//! distills those margins into a bi-encoder with a MarginMSE objective. The
//! crate also ships the in-batch-negatives baseline, six pre-training
//! objectives, BM25 and exact dense retrieval, and trec-style evaluation.
//!
//! Models are small and CPU-friendly: an embedding-bag encoder with analytic
//! gradients, plus deterministic mock generators and cross-encoders. Real
//! pretrained backends plug in through [`model::QueryGenerator`] and
//! [`model::CrossEncoderScorer`].

pub mod corpus;
pub mod error;
pub mod eval;
pub mod generation;
pub mod labeling;
pub mod mining;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod synthetic;
pub mod training;

pub use error::{GplError, Result};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }
    chapter!(introduction, "introduction.md");
    chapter!(quickstart, "quickstart.md");
    chapter!(pipeline, "pipeline.md");
    chapter!(configuration, "configuration.md");
    chapter!(methods, "methods.md");
    chapter!(library, "library.md");
    chapter!(synthetic, "synthetic.md");
    chapter!(checkpoints, "checkpoints.md");
    chapter!(testing, "testing.md");

    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
