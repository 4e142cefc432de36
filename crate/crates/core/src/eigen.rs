//! Small dense symmetric eigensolver (cyclic Jacobi rotations, f64).
//!
//! Used to extract singular values of explicitly assembled Jacobians via
//! the eigenvalues of J^T J; the matrices involved are at most 64x64.

/// Eigenvalues of a symmetric matrix (row-major, n x n), ascending.
pub fn symmetric_eigenvalues(mat: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(mat.len(), n * n);
    let mut a = mat.to_vec();
    // verify symmetry within roundoff
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (a[i * n + j] - a[j * n + i]).abs();
            let scale = a[i * n + j].abs().max(a[j * n + i].abs()).max(1.0);
            assert!(d <= 1e-8 * scale, "matrix is not symmetric at ({i},{j})");
        }
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 * frobenius(&a, n).max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/columns p and q
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

fn frobenius(a: &[f64], n: usize) -> f64 {
    let _ = n;
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Singular values (ascending) of an m x n matrix via eig(A^T A).
pub fn singular_values(mat: &[f64], m: usize, n: usize) -> Vec<f64> {
    assert_eq!(mat.len(), m * n);
    let mut ata = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..m {
                acc += mat[k * n + i] * mat[k * n + j];
            }
            ata[i * n + j] = acc;
            ata[j * n + i] = acc;
        }
    }
    symmetric_eigenvalues(&ata, n)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn diagonal_matrix() {
        let m = [3.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0];
        let e = symmetric_eigenvalues(&m, 3);
        assert!((e[0] + 1.0).abs() < 1e-12);
        assert!((e[1] - 2.0).abs() < 1e-12);
        assert!((e[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let e = symmetric_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn trace_and_det_preserved_random() {
        let mut rng = Rng::new(1);
        let n = 12;
        let mut m = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.normal() as f64;
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        let e = symmetric_eigenvalues(&m, n);
        let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
        let esum: f64 = e.iter().sum();
        assert!((trace - esum).abs() < 1e-9 * trace.abs().max(1.0));
    }

    #[test]
    fn singular_values_of_scaled_orthogonal() {
        // A = 3 * [I; 0]: all singular values are 3
        let (m, n) = (6, 4);
        let mut a = vec![0.0f64; m * n];
        for i in 0..n {
            a[i * n + i] = 3.0;
        }
        let s = singular_values(&a, m, n);
        assert!(s.iter().all(|&v| (v - 3.0).abs() < 1e-10), "{s:?}");
    }

    #[test]
    fn singular_values_match_construction() {
        // A = U diag(s) V^T built from Householder-free rotations: use a
        // simple diagonal rectangular matrix with known values
        let (m, n) = (5, 3);
        let mut a = vec![0.0f64; m * n];
        a[0] = 4.0;
        a[n + 1] = 2.0;
        a[2 * n + 2] = 0.5;
        let s = singular_values(&a, m, n);
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert!((s[1] - 2.0).abs() < 1e-12);
        assert!((s[2] - 4.0).abs() < 1e-12);
    }
}
