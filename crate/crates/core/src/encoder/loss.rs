use super::EncoderError;

/// NT-Xent over `2B` rows of width `dim`; row `i` is positive with row
/// `(i + B) mod 2B` and negative with every other row.
pub fn nt_xent_loss(z: &[f64], dim: usize, temperature: f64) -> Result<f64, EncoderError> {
    let (rows, u, _) = normalize_rows(z, dim)?;
    let logits = similarity(&u, rows, dim, temperature);
    let b = rows / 2;
    let mut total = 0.0;
    for i in 0..rows {
        let row = &logits[i * rows..(i + 1) * rows];
        total += log_sum_exp_except(row, i) - row[(i + b) % rows];
    }
    Ok(total / rows as f64)
}

/// Loss and its gradient with respect to the unnormalized rows.
pub fn nt_xent_loss_grad(z: &[f64], dim: usize, temperature: f64) -> Result<(f64, Vec<f64>), EncoderError> {
    let (rows, u, norms) = normalize_rows(z, dim)?;
    let logits = similarity(&u, rows, dim, temperature);
    let b = rows / 2;
    let n = rows as f64;
    let mut total = 0.0;
    // gradient with respect to the similarity matrix
    let mut ds = vec![0.0; rows * rows];
    for i in 0..rows {
        let row = &logits[i * rows..(i + 1) * rows];
        let lse = log_sum_exp_except(row, i);
        let pos = (i + b) % rows;
        total += lse - row[pos];
        for k in (0..rows).filter(|&k| k != i) {
            let p = (row[k] - lse).exp();
            let target = if k == pos { 1.0 } else { 0.0 };
            ds[i * rows + k] = (p - target) / (n * temperature);
        }
    }
    let mut grad = vec![0.0; z.len()];
    for i in 0..rows {
        let mut du = vec![0.0; dim];
        for k in 0..rows {
            let w = ds[i * rows + k] + ds[k * rows + i];
            if w != 0.0 {
                for (d, uk) in du.iter_mut().zip(&u[k * dim..(k + 1) * dim]) {
                    *d += w * uk;
                }
            }
        }
        let ui = &u[i * dim..(i + 1) * dim];
        let proj: f64 = ui.iter().zip(&du).map(|(a, b)| a * b).sum();
        for ((g, d), uv) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&du).zip(ui) {
            *g = (d - uv * proj) / norms[i];
        }
    }
    Ok((total / n, grad))
}

fn normalize_rows(z: &[f64], dim: usize) -> Result<(usize, Vec<f64>, Vec<f64>), EncoderError> {
    if dim == 0 || z.len() % dim != 0 {
        return Err(EncoderError::ShapeMismatch(format!(
            "{} values do not form rows of width {dim}",
            z.len()
        )));
    }
    let rows = z.len() / dim;
    if rows % 2 != 0 {
        return Err(EncoderError::ShapeMismatch(format!("odd number of rows {rows}")));
    }
    if rows < 4 {
        return Err(EncoderError::DegenerateBatch(rows / 2));
    }
    let mut u = z.to_vec();
    let mut norms = Vec::with_capacity(rows);
    for row in u.chunks_mut(dim) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((rows, u, norms))
}

fn similarity(u: &[f64], rows: usize, dim: usize, temperature: f64) -> Vec<f64> {
    let mut s = vec![0.0; rows * rows];
    for i in 0..rows {
        for k in i..rows {
            let dot: f64 = u[i * dim..(i + 1) * dim]
                .iter()
                .zip(&u[k * dim..(k + 1) * dim])
                .map(|(a, b)| a * b)
                .sum();
            s[i * rows + k] = dot / temperature;
            s[k * rows + i] = dot / temperature;
        }
    }
    s
}

fn log_sum_exp_except(row: &[f64], skip: usize) -> f64 {
    let max = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != skip)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != skip)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + sum.ln()
}
