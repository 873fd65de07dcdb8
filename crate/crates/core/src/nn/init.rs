use rand::Rng;
use rand_distr::StandardNormal;

/// Orthogonal `rows × cols` matrix (row-major) scaled by `gain`: rows are
/// orthonormal when `rows <= cols`, columns otherwise.
pub fn orthogonal<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // Columns of a tall × short Gaussian matrix, orthonormalized in place.
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    for j in 0..short {
        for i in 0..j {
            let proj: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let qi = q[i].clone();
            for (v, u) in q[j].iter_mut().zip(&qi) {
                *v -= proj * u;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows <= cols { q[r][c] } else { q[c][r] };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gram(m: &[f64], rows: usize, cols: usize, by_rows: bool) -> Vec<f64> {
        let n = if by_rows { rows } else { cols };
        let at = |i: usize, k: usize| if by_rows { m[i * cols + k] } else { m[k * cols + i] };
        let len = if by_rows { cols } else { rows };
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] = (0..len).map(|k| at(i, k) * at(j, k)).sum();
            }
        }
        g
    }

    #[test]
    fn gram_matrix_is_scaled_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let gain = 2f64.sqrt();
        for (rows, cols) in [(16, 16), (8, 20), (20, 8)] {
            let w = orthogonal(rows, cols, gain, &mut rng);
            let g = gram(&w, rows, cols, rows <= cols);
            let n = rows.min(cols);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { gain * gain } else { 0.0 };
                    assert!((g[i * n + j] - want).abs() < 1e-4, "{rows}x{cols}");
                }
            }
        }
    }
}
