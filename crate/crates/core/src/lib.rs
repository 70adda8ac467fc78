//! Building blocks for training and fusing word embeddings.
//!
//! The crate is organized around a small pipeline: tokenize a corpus and
//! count co-occurrences ([`corpus`]), train GloVe vectors on the counts
//! ([`glove`]), build PPMI vectors from a concept graph ([`graph`]), fuse
//! the two spaces ([`fuse`]), and score the result on word-similarity and
//! text-classification tasks ([`eval`]). Shared linear algebra lives in
//! [`numerics`] and the embedding container plus its file formats in
//! [`embedding`].

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod fuse;
pub mod glove;
pub mod graph;
pub mod numerics;
