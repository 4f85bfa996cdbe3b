//! Cross-lingual document retrieval: query-likelihood pre-selection followed by
//! bilingual term-interaction rerankers over a shared word-embedding space.
//!
//! The pipeline mirrors a typical CLIR experiment:
//!
//! 1. [`corpus`] loads bilingual documents/queries (original text plus a
//!    translation) or generates a synthetic cipher-language dataset.
//! 2. [`retrieval`] pre-selects candidates with Dirichlet-smoothed query
//!    likelihood, optionally through dictionary (DBQT) or probabilistic (PSQ)
//!    query translation.
//! 3. [`embeddings`] aligns the target-language word vectors into the source
//!    space with iterative orthogonal Procrustes.
//! 4. [`rankers`] scores query/document pairs with POSIT-DRMM, PACRR or
//!    PACRR-DRMM over four language channels, fused with [`features`].
//! 5. [`training`] fits the reranker with binary cross-entropy and Adam, and
//!    [`evaluation`] reports MAP, P@20, NDCG@20 and AQWV.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embeddings;
mod error;
pub mod evaluation;
pub mod features;
pub mod rankers;
pub mod retrieval;
pub mod run;
pub mod training;

pub use error::{Error, Result};
