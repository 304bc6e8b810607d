//! Frequency-weighted word-vector averaging with first principal component
//! removal.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_SIF_A: f64 = 1e-3;

/// SIF weight `a / (a + p(w))`.
pub fn sif_weight(a: f64, p: f64) -> f64 {
    a / (a + p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SifOutput {
    /// `[entities, dim]`, rows in input order.
    pub embeddings: Tensor,
    /// Entities that had no token with a known word vector.
    pub empty: Vec<String>,
}

/// Embeds each entity's token list. `word_probs` maps every token to its
/// unigram probability; tokens without a word vector are skipped.
pub fn sif_embed(
    entities: &[(String, Vec<String>)],
    word_vectors: &HashMap<String, Vec<f64>>,
    word_probs: &HashMap<String, f64>,
    a: f64,
) -> Result<SifOutput> {
    if a <= 0.0 {
        return Err(Error::Config(format!("SIF parameter a must be positive, got {a}")));
    }
    let dim = word_vectors
        .values()
        .next()
        .map(Vec::len)
        .ok_or(Error::Empty("word vector table"))?;
    if entities.is_empty() {
        return Err(Error::Empty("entity token list"));
    }
    let mut data = vec![0.0; entities.len() * dim];
    let mut empty = Vec::new();
    for (i, (name, tokens)) in entities.iter().enumerate() {
        let row = &mut data[i * dim..(i + 1) * dim];
        let mut used = 0usize;
        for tok in tokens {
            let p = *word_probs.get(tok).ok_or_else(|| Error::UnknownName {
                kind: "token frequency",
                name: tok.clone(),
            })?;
            let Some(vec) = word_vectors.get(tok) else { continue };
            if vec.len() != dim {
                return Err(Error::dims("word vector", &[dim], &[vec.len()]));
            }
            let w = sif_weight(a, p);
            for (r, v) in row.iter_mut().zip(vec) {
                *r += w * v;
            }
            used += 1;
        }
        if used == 0 {
            log::warn!("entity '{name}' has no tokens with word vectors; using the zero vector");
            empty.push(name.clone());
        } else {
            row.iter_mut().for_each(|r| *r /= used as f64);
        }
    }
    if empty.len() == entities.len() {
        return Err(Error::Empty("every entity's known-token list"));
    }
    remove_first_component(&mut data, entities.len(), dim);
    Ok(SifOutput {
        embeddings: Tensor::matrix(entities.len(), dim, data)?,
        empty,
    })
}

/// Projects every row off the top right-singular vector of the row matrix.
fn remove_first_component(data: &mut [f64], n: usize, dim: usize) {
    let v = DMatrix::from_row_slice(n, dim, data);
    let gram = v.transpose() * &v;
    let eig = SymmetricEigen::new(gram);
    let (top, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best });
    let u = eig.eigenvectors.column(top).into_owned();
    for r in 0..n {
        let row = &mut data[r * dim..(r + 1) * dim];
        let proj: f64 = row.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        for (x, ui) in row.iter_mut().zip(u.iter()) {
            *x -= proj * ui;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(words: &[(&str, Vec<f64>, f64)]) -> (HashMap<String, Vec<f64>>, HashMap<String, f64>) {
        let v = words.iter().map(|(w, v, _)| (w.to_string(), v.clone())).collect();
        let p = words.iter().map(|(w, _, p)| (w.to_string(), *p)).collect();
        (v, p)
    }

    #[test]
    fn weight_formula() {
        assert_eq!(sif_weight(1e-3, 1e-3), 0.5);
    }

    #[test]
    fn single_entity_is_annihilated() {
        let (v, p) = maps(&[("w", vec![0.3, -1.2, 2.0], 0.0)]);
        let out = sif_embed(&[("e".into(), vec!["w".into()])], &v, &p, 1e-3).unwrap();
        assert!(out.embeddings.data().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn unknown_word_vector_is_skipped_but_frequency_required() {
        let (v, mut p) = maps(&[("w", vec![1.0, 0.0], 0.5)]);
        p.insert("oov".into(), 0.1);
        let ents = vec![("a".into(), vec!["w".into(), "oov".into()]), ("b".into(), vec!["oov".into()])];
        let out = sif_embed(&ents, &v, &p, 1e-3).unwrap();
        assert_eq!(out.empty, vec!["b".to_string()]);
        let missing = vec![("a".into(), vec!["nofreq".into()])];
        assert!(matches!(sif_embed(&missing, &v, &p, 1e-3), Err(Error::UnknownName { .. })));
    }

    #[test]
    fn all_empty_errors() {
        let (v, mut p) = maps(&[("w", vec![1.0, 0.0], 0.5)]);
        p.insert("oov".into(), 0.1);
        let ents = vec![("a".into(), vec!["oov".into()])];
        assert!(sif_embed(&ents, &v, &p, 1e-3).is_err());
    }
}
