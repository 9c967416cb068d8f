use std::io::Write;

use crate::error::{Error, Result};
use crate::kernels::{cosine, pairwise_mean};
use crate::model::TransformerLM;
use crate::par::Execution;
use crate::tensor::Tensor;

fn check_matrix(op: &'static str, hidden: &Tensor, min_rows: usize) -> Result<()> {
    if hidden.shape().len() != 2 {
        return Err(Error::Shape {
            op,
            lhs: hidden.shape().to_vec(),
            rhs: vec![0, 0],
        });
    }
    if hidden.rows() < min_rows {
        return Err(Error::Length {
            op,
            expected: min_rows,
            actual: hidden.rows(),
        });
    }
    Ok(())
}

/// Mean cosine similarity over all ordered pairs of distinct rows.
pub fn self_similarity(hidden: &Tensor) -> Result<f64> {
    check_matrix("self_similarity", hidden, 2)?;
    let t = hidden.rows();
    let mut sims = Vec::with_capacity(t * (t - 1) / 2);
    for i in 0..t {
        for j in i + 1..t {
            sims.push(cosine(hidden.row(i), hidden.row(j)));
        }
    }
    // cos is symmetric, so the ordered-pair mean equals the unordered one.
    Ok(pairwise_mean(&sims))
}

/// Mean cosine between each row and the mean row; 0 when the mean vanishes.
pub fn conicity(hidden: &Tensor) -> Result<f64> {
    check_matrix("conicity", hidden, 1)?;
    let t = hidden.rows();
    let d = hidden.last_dim();
    let mut mean = vec![0.0; d];
    for row in hidden.row_iter() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let cos: Vec<f64> = hidden.row_iter().map(|r| cosine(r, &mean)).collect();
    Ok(pairwise_mean(&cos))
}

/// `M[i][j] = cos(h_i, h_j)`; exactly symmetric.
pub fn similarity_matrix(hidden: &Tensor) -> Result<Tensor> {
    check_matrix("similarity_matrix", hidden, 1)?;
    let t = hidden.rows();
    let mut m = vec![0.0; t * t];
    for i in 0..t {
        for j in i..t {
            let s = cosine(hidden.row(i), hidden.row(j));
            m[i * t + j] = s;
            m[j * t + i] = s;
        }
    }
    Tensor::new(&[t, t], m)
}

/// Writes a similarity matrix as CSV: a header of token labels, then one
/// row of floats per token.
pub fn write_similarity_csv<W: Write>(w: W, matrix: &Tensor, labels: &[String]) -> Result<()> {
    check_matrix("write_similarity_csv", matrix, 1)?;
    if labels.len() != matrix.rows() || matrix.rows() != matrix.last_dim() {
        return Err(Error::Length {
            op: "write_similarity_csv",
            expected: matrix.rows(),
            actual: labels.len(),
        });
    }
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(labels).map_err(csv_err)?;
    for row in matrix.row_iter() {
        out.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean self-similarity of every hidden layer, embeddings included, over a
/// sample of sequences (each at least two tokens long).
pub fn layerwise_self_similarity(model: &TransformerLM, sample: &[Vec<usize>], execution: Execution) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::data("layerwise self-similarity needs at least one sequence"));
    }
    let per_seq: Vec<Result<Vec<f64>>> = execution.map(sample, |seq| {
        let out = model.forward(seq)?;
        out.hidden_states.iter().map(self_similarity).collect()
    });
    let per_seq: Vec<Vec<f64>> = per_seq.into_iter().collect::<Result<_>>()?;
    let layers = model.config().n_layers + 1;
    Ok((0..layers)
        .map(|l| pairwise_mean(&per_seq.iter().map(|s| s[l]).collect::<Vec<_>>()))
        .collect())
}
