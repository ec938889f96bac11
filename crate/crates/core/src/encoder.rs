//! Sentence and bag encoding.
//!
//! A sentence becomes a `[T, word_dim + 2*pos_dim]` matrix by concatenating
//! word embeddings with two entity-relative position embeddings. The PCNN
//! step convolves it, max-pools the three entity-delimited segments
//! separately and applies tanh, giving a fixed-length sentence vector.
//! Selective attention then combines a bag's sentence vectors, scoring each
//! against a relation-embedding query.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{SentenceInstance, Vocabulary};
use crate::tensor::{Tape, Tensor, TensorError, VarId};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("word vectors line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Learnable lookup tables for words and the two position channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub word: Tensor,
    pub pos1: Tensor,
    pub pos2: Tensor,
}

/// Learnable convolution state: filters `[w, d_in, d_out]` and bias `[d_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcnnParams {
    pub filters: Tensor,
    pub bias: Tensor,
}

/// Sentence matrix `[T, word_dim + 2*pos_dim]`; row `i` is
/// `[word_i ; pos1_i ; pos2_i]`. Gradients scatter-add onto the looked-up
/// table rows.
pub fn embed_sentence(
    tape: &mut Tape,
    word_table: VarId,
    pos1_table: VarId,
    pos2_table: VarId,
    inst: &SentenceInstance,
) -> Result<VarId, TensorError> {
    let words = tape.embed_rows(word_table, &inst.token_ids)?;
    let pos1 = tape.embed_rows(pos1_table, &inst.pos1_ids)?;
    let pos2 = tape.embed_rows(pos2_table, &inst.pos2_ids)?;
    tape.concat_cols(&[words, pos1, pos2])
}

/// PCNN sentence vector: convolution, piecewise max pooling split at the two
/// entity positions, then tanh. Output length is `3 * d_out`.
pub fn pcnn_encode(
    tape: &mut Tape,
    embedded: VarId,
    filters: VarId,
    bias: VarId,
    head_pos: usize,
    tail_pos: usize,
) -> Result<VarId, TensorError> {
    let featmap = tape.conv1d_same(embedded, filters, bias)?;
    let split1 = head_pos.min(tail_pos);
    let split2 = head_pos.max(tail_pos);
    let pooled = tape.piecewise_max_pool(featmap, split1, split2)?;
    Ok(tape.tanh(pooled))
}

/// Selective attention over a bag: weights are the softmax of each sentence
/// vector's dot product with the query, and the bag vector is their weighted
/// sum. Returns `(bag representation [1, d], weights [b, 1])`.
pub fn bag_attention(
    tape: &mut Tape,
    sentence_reps: &[VarId],
    query: VarId,
) -> Result<(VarId, VarId), TensorError> {
    if sentence_reps.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "bag_attention",
            message: "bag must contain at least one sentence".into(),
        });
    }
    let stacked = tape.stack_rows(sentence_reps)?;
    let d = tape.shape(stacked)[1];
    let query_row = tape.reshape(query, vec![1, d])?;
    let scores = tape.matmul_nt(stacked, query_row)?;
    let weights = tape.softmax_row(scores)?;
    let weights_row = tape.reshape(weights, vec![1, sentence_reps.len()])?;
    let bag_rep = tape.matmul(weights_row, stacked)?;
    Ok((bag_rep, weights))
}

/// Loads text-format word vectors (`token v1 .. v_dim` per line) into rows of
/// the word table. Tokens missing from the vocabulary are skipped; matched
/// tokens overwrite their initialized row. Returns how many rows were loaded.
pub fn load_word_vectors(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    word_table: &mut Tensor,
) -> Result<usize, EncoderError> {
    let text = fs::read_to_string(path)?;
    load_word_vectors_str(&text, vocab, word_table)
}

pub fn load_word_vectors_str(
    text: &str,
    vocab: &Vocabulary,
    word_table: &mut Tensor,
) -> Result<usize, EncoderError> {
    let dim = word_table.shape()[1];
    let mut loaded = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().ok_or_else(|| EncoderError::Parse {
            line: lineno + 1,
            message: "missing token".into(),
        })?;
        let vector: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| EncoderError::Parse {
                    line: lineno + 1,
                    message: format!("bad float {f}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if vector.len() != dim {
            return Err(EncoderError::Parse {
                line: lineno + 1,
                message: format!("expected {dim} values, got {}", vector.len()),
            });
        }
        if vocab.contains(token) {
            let id = vocab.lookup(token);
            word_table.values_mut()[id * dim..(id + 1) * dim].copy_from_slice(&vector);
            loaded += 1;
        }
    }
    Ok(loaded)
}
