use crate::error::{Error, Result};

use super::data::Embeddings;

pub fn mean_pool(e: &Embeddings) -> Result<Vec<f64>> {
    if e.rows.is_empty() {
        return Err(Error::InvalidInput("embedding set is empty".into()));
    }
    let mut acc = vec![0.0; e.dim];
    for row in &e.rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = e.rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Undefined("zero-norm embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of the mean-pooled final-cut and raw embeddings.
pub fn fidelity(final_cut: &Embeddings, raw: &Embeddings) -> Result<f64> {
    if final_cut.dim != raw.dim {
        return Err(Error::LengthMismatch {
            left: final_cut.dim,
            right: raw.dim,
        });
    }
    cosine(&mean_pool(final_cut)?, &mean_pool(raw)?)
}
