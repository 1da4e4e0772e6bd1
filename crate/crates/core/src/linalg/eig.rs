//! Eigenvalue routines: balanced Hessenberg reduction followed by implicit
//! double-shift QR for general real matrices, and cyclic Jacobi for symmetric
//! ones.

use super::{frob_norm, Mat};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Eigenvalues of a real matrix as (real, imaginary) pairs.
///
/// Complex eigenvalues occur in conjugate pairs; the pair members carry
/// imaginary parts of equal magnitude and opposite sign.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<(f64, f64)>,
}

impl Spectrum {
    /// Largest real part over the spectrum.
    pub fn max_real(&self) -> f64 {
        self.eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |m, &(re, _)| m.max(re))
    }
}

/// Eigenvalues of a square real matrix, `n <= 32`.
///
/// The matrix is balanced (Parlett-Reinsch scaling), reduced to upper
/// Hessenberg form by Householder reflections, and iterated with
/// Francis double-shift QR steps. Real-Schur 2x2 blocks yield the complex
/// conjugate pairs. Fails with `NoConvergence` (carrying the partial
/// spectrum) after `100 * n` QR steps.
pub fn eigenvalues(a: &Mat) -> Result<Spectrum> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(
            "eigenvalues require a square matrix".into(),
        ));
    }
    let n = a.rows();
    if n > 32 {
        return Err(Error::InvalidInput(format!(
            "eigensolver limited to n <= 32, got n = {n}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if n == 1 {
        return Ok(Spectrum {
            eigenvalues: vec![(a[(0, 0)], 0.0)],
        });
    }
    let mut h = a.clone();
    balance(&mut h);
    hessenberg(&mut h);
    francis_qr(&mut h, 100 * n)
}

/// Parlett-Reinsch balancing by radix-2 diagonal similarity scaling.
fn balance(a: &mut Mat) {
    let n = a.rows();
    let radix = 2.0_f64;
    for _ in 0..32 {
        let mut converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 || !c.is_finite() || !r.is_finite() {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut c2 = c;
            let mut r2 = r;
            while c2 < r2 / radix {
                c2 *= radix;
                r2 /= radix;
                f *= radix;
            }
            while c2 >= r2 * radix {
                c2 /= radix;
                r2 *= radix;
                f /= radix;
            }
            if c2 + r2 < 0.95 * s && f != 1.0 {
                converged = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= g;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
}

/// In-place Householder reduction to upper Hessenberg form.
fn hessenberg(a: &mut Mat) {
    let n = a.rows();
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1; // length of the column tail below the diagonal
        let mut v: Vec<f64> = (0..m).map(|i| a[(k + 1 + i, k)]).collect();
        let tail_norm: f64 = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if tail_norm == 0.0 {
            continue;
        }
        let norm = (v[0] * v[0] + tail_norm * tail_norm).sqrt();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vsq: f64 = v.iter().map(|x| x * x).sum();
        if vsq == 0.0 {
            continue;
        }
        let beta = 2.0 / vsq;
        // Left: rows k+1..n, all columns from k.
        for j in k..n {
            let mut s = 0.0;
            for i in 0..m {
                s += v[i] * a[(k + 1 + i, j)];
            }
            s *= beta;
            for i in 0..m {
                a[(k + 1 + i, j)] -= s * v[i];
            }
        }
        // Right: columns k+1..n, all rows.
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..m {
                s += v[j] * a[(i, k + 1 + j)];
            }
            s *= beta;
            for j in 0..m {
                a[(i, k + 1 + j)] -= s * v[j];
            }
        }
        a[(k + 1, k)] = alpha;
        for i in (k + 2)..n {
            a[(i, k)] = 0.0;
        }
    }
}

/// Eigenvalues of a 2x2 block `[[a, b], [c, d]]`.
fn eig2x2(a: f64, b: f64, c: f64, d: f64) -> [(f64, f64); 2] {
    let p = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = p * p - det;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let q = if p >= 0.0 { p + sq } else { p - sq };
        if q == 0.0 {
            [(0.0, 0.0), (0.0, 0.0)]
        } else {
            [(q, 0.0), (det / q, 0.0)]
        }
    } else {
        let im = (-disc).sqrt();
        [(p, im), (p, -im)]
    }
}

fn house3(x: f64, y: f64, z: f64) -> ([f64; 3], f64) {
    let tail = (y * y + z * z).sqrt();
    if tail == 0.0 {
        return ([0.0; 3], 0.0);
    }
    let norm = (x * x + tail * tail).sqrt();
    let alpha = if x >= 0.0 { -norm } else { norm };
    let v = [x - alpha, y, z];
    let vsq = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    ([v[0], v[1], v[2]], 2.0 / vsq)
}

fn house2(x: f64, y: f64) -> ([f64; 2], f64) {
    if y == 0.0 {
        return ([0.0; 2], 0.0);
    }
    let norm = (x * x + y * y).sqrt();
    let alpha = if x >= 0.0 { -norm } else { norm };
    let v = [x - alpha, y];
    let vsq = v[0] * v[0] + v[1] * v[1];
    ([v[0], v[1]], 2.0 / vsq)
}

/// One implicit double-shift step on the unreduced window `[lo, hi]`.
fn francis_step(h: &mut Mat, lo: usize, hi: usize, exceptional: bool) {
    let m = hi - 1;
    let (s, t) = if exceptional {
        // Ad-hoc shift to break symmetry-induced stagnation.
        let sigma = h[(hi, hi - 1)].abs() + h[(m, m - 1)].abs();
        (1.5 * sigma, -0.4375 * sigma * sigma)
    } else {
        (
            h[(m, m)] + h[(hi, hi)],
            h[(m, m)] * h[(hi, hi)] - h[(m, hi)] * h[(hi, m)],
        )
    };
    let mut x = h[(lo, lo)] * h[(lo, lo)] + h[(lo, lo + 1)] * h[(lo + 1, lo)] - s * h[(lo, lo)] + t;
    let mut y = h[(lo + 1, lo)] * (h[(lo, lo)] + h[(lo + 1, lo + 1)] - s);
    let mut z = h[(lo + 2, lo + 1)] * h[(lo + 1, lo)];

    for k in lo..=hi - 2 {
        let (v, beta) = house3(x, y, z);
        if beta != 0.0 {
            let col_start = if k > lo { k - 1 } else { lo };
            for j in col_start..=hi {
                let sum =
                    (v[0] * h[(k, j)] + v[1] * h[(k + 1, j)] + v[2] * h[(k + 2, j)]) * beta;
                h[(k, j)] -= sum * v[0];
                h[(k + 1, j)] -= sum * v[1];
                h[(k + 2, j)] -= sum * v[2];
            }
            let row_end = (k + 3).min(hi);
            for i in lo..=row_end {
                let sum =
                    (v[0] * h[(i, k)] + v[1] * h[(i, k + 1)] + v[2] * h[(i, k + 2)]) * beta;
                h[(i, k)] -= sum * v[0];
                h[(i, k + 1)] -= sum * v[1];
                h[(i, k + 2)] -= sum * v[2];
            }
            if k > lo {
                h[(k + 1, k - 1)] = 0.0;
                h[(k + 2, k - 1)] = 0.0;
            }
        }
        if k < hi - 2 {
            x = h[(k + 1, k)];
            y = h[(k + 2, k)];
            z = if k + 3 <= hi { h[(k + 3, k)] } else { 0.0 };
        }
    }
    // Final 2-vector reflection restores Hessenberg shape in the last column.
    let (v, beta) = house2(h[(hi - 1, hi - 2)], h[(hi, hi - 2)]);
    if beta != 0.0 {
        for j in (hi - 2)..=hi {
            let sum = (v[0] * h[(hi - 1, j)] + v[1] * h[(hi, j)]) * beta;
            h[(hi - 1, j)] -= sum * v[0];
            h[(hi, j)] -= sum * v[1];
        }
        for i in lo..=hi {
            let sum = (v[0] * h[(i, hi - 1)] + v[1] * h[(i, hi)]) * beta;
            h[(i, hi - 1)] -= sum * v[0];
            h[(i, hi)] -= sum * v[1];
        }
        h[(hi, hi - 2)] = 0.0;
    }
}

/// Shifted-QR driver with deflation on an upper Hessenberg matrix.
fn francis_qr(h: &mut Mat, max_steps: usize) -> Result<Spectrum> {
    let eps = f64::EPSILON;
    let hnorm = frob_norm(h).max(f64::MIN_POSITIVE);
    let mut eigs: Vec<(f64, f64)> = Vec::with_capacity(h.rows());
    let mut hi = h.rows() - 1;
    let mut steps = 0usize;
    let mut since_deflation = 0usize;

    loop {
        if hi == 0 {
            eigs.push((h[(0, 0)], 0.0));
            break;
        }
        // Set negligible subdiagonal entries to zero.
        for i in 1..=hi {
            let thresh = {
                let local = eps * (h[(i - 1, i - 1)].abs() + h[(i, i)].abs());
                if local == 0.0 {
                    eps * hnorm
                } else {
                    local
                }
            };
            if h[(i, i - 1)].abs() <= thresh {
                h[(i, i - 1)] = 0.0;
            }
        }
        if h[(hi, hi - 1)] == 0.0 {
            eigs.push((h[(hi, hi)], 0.0));
            hi -= 1;
            since_deflation = 0;
            continue;
        }
        if hi == 1 || h[(hi - 1, hi - 2)] == 0.0 {
            let block = eig2x2(
                h[(hi - 1, hi - 1)],
                h[(hi - 1, hi)],
                h[(hi, hi - 1)],
                h[(hi, hi)],
            );
            eigs.push(block[0]);
            eigs.push(block[1]);
            since_deflation = 0;
            if hi == 1 {
                break;
            }
            hi -= 2;
            continue;
        }
        if steps >= max_steps {
            return Err(Error::NoConvergence {
                iterations: steps,
                partial: eigs,
            });
        }
        // Start of the unreduced block ending at hi.
        let mut lo = hi - 1;
        while lo > 0 && h[(lo, lo - 1)] != 0.0 {
            lo -= 1;
        }
        steps += 1;
        since_deflation += 1;
        let exceptional = since_deflation % 11 == 10;
        francis_step(h, lo, hi, exceptional);
    }
    Ok(Spectrum { eigenvalues: eigs })
}

/// Spectral decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, v)` with `a = v * diag(eigenvalues) * v^T`;
/// eigenvector `k` is column `k` of `v`. The input is symmetrized first,
/// so callers may pass matrices that are symmetric only to roundoff.
pub fn sym_eig(a: &Mat) -> (Vec<f64>, Mat) {
    assert!(a.is_square(), "sym_eig requires a square matrix");
    let n = a.rows();
    let mut w = a.clone();
    w.symmetrize();
    let mut v = Mat::identity(n);
    let scale = frob_norm(&w).max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += w[(p, q)] * w[(p, q)];
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let tau = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let app = w[(p, p)];
                let aqq = w[(q, q)];
                w[(p, p)] = app - t * apq;
                w[(q, q)] = aqq + t * apq;
                w[(p, q)] = 0.0;
                w[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = w[(k, p)];
                        let akq = w[(k, q)];
                        w[(k, p)] = c * akp - s * akq;
                        w[(p, k)] = w[(k, p)];
                        w[(k, q)] = s * akp + c * akq;
                        w[(q, k)] = w[(k, q)];
                    }
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| w[(i, i)]).collect();
    (vals, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::op_norm2;

    /// Greedy multiset match: every expected eigenvalue must have a distinct
    /// computed partner within `tol`.
    pub fn assert_spectrum_close(got: &Spectrum, expect: &[(f64, f64)], tol: f64) {
        assert_eq!(got.eigenvalues.len(), expect.len());
        let mut used = vec![false; expect.len()];
        for &(re, im) in &got.eigenvalues {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for (k, &(er, ei)) in expect.iter().enumerate() {
                if used[k] {
                    continue;
                }
                let d = ((re - er).powi(2) + (im - ei).powi(2)).sqrt();
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            assert!(
                best != usize::MAX && best_d <= tol,
                "eigenvalue ({re}, {im}) unmatched (closest at distance {best_d:.3e})"
            );
            used[best] = true;
        }
    }

    #[test]
    fn companion_of_factored_polynomial() {
        // s^2 + 3s + 2 = (s+1)(s+2)
        let a = Mat::new(2, 2, vec![0.0, 1.0, -2.0, -3.0]);
        let spec = eigenvalues(&a).unwrap();
        assert_spectrum_close(&spec, &[(-1.0, 0.0), (-2.0, 0.0)], 1e-10);
    }

    #[test]
    fn rotation_gives_pure_imaginary_pair() {
        let a = Mat::new(2, 2, vec![0.0, 1.0, -1.0, 0.0]);
        let spec = eigenvalues(&a).unwrap();
        assert_spectrum_close(&spec, &[(0.0, 1.0), (0.0, -1.0)], 1e-10);
    }

    #[test]
    fn conjugate_pairs_cancel() {
        let a = Mat::new(
            4,
            4,
            vec![
                0.0, 1.0, 0.0, 0.0, //
                -2.0, -0.3, 1.0, 0.0, //
                0.0, 0.0, 0.5, 1.0, //
                0.0, 0.0, -3.0, 0.1,
            ],
        );
        let spec = eigenvalues(&a).unwrap();
        let im_sum: f64 = spec.eigenvalues.iter().map(|&(_, im)| im).sum();
        assert!(im_sum.abs() < 1e-9);
    }

    #[test]
    fn transpose_has_same_spectrum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = Mat::from_fn(6, 6, |_, _| rng.random_range(-2.0..2.0));
            let sa = eigenvalues(&a).unwrap();
            let sat = eigenvalues(&a.transpose()).unwrap();
            let expect: Vec<(f64, f64)> = sa.eigenvalues.clone();
            assert_spectrum_close(&sat, &expect, 1e-7);
        }
    }

    #[test]
    fn symmetric_jacobi_reconstructs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let g = Mat::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let a = g.matmul_tn(&g); // SPD-ish gram matrix
        let (vals, v) = sym_eig(&a);
        let recon = v.matmul(&Mat::diag(&vals)).matmul(&v.transpose());
        assert!(op_norm2(&recon.sub(&a)) < 1e-10 * op_norm2(&a).max(1.0));
        assert!(vals.iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn defective_jordan_block_converges() {
        // Double eigenvalue at 1 with a single Jordan chain.
        let a = Mat::new(2, 2, vec![1.0, 1.0, 0.0, 1.0]);
        let spec = eigenvalues(&a).unwrap();
        assert_spectrum_close(&spec, &[(1.0, 0.0), (1.0, 0.0)], 1e-7);
    }
}
