//! Principal component projection.
//!
//! Small problems are solved exactly through a symmetric eigendecomposition
//! of whichever Gram matrix (`XᵀX` or `XXᵀ`) is smaller. Wide-and-tall inputs
//! such as bag-of-words node attributes use block subspace iteration with a
//! Rayleigh-Ritz finish.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

/// Largest `min(rows, cols)` solved with a dense eigendecomposition.
const EXACT_LIMIT: usize = 1500;
const OVERSAMPLE: usize = 24;
const SUBSPACE_ITERS: usize = 12;

/// Mean-centers `x` and projects it onto its top `n_components` principal
/// axes (no whitening). Each axis is signed so its largest-magnitude
/// loading is positive.
pub fn pca_reduce(x: &DenseMatrix, n_components: usize) -> Result<DenseMatrix> {
    let (n, d) = x.shape();
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::Dimension {
            op: "pca_reduce",
            left: (n, d),
            right: (n_components, n_components),
        });
    }
    let mut centered = DMatrix::<f64>::from_row_slice(n, d, x.as_slice());
    for c in 0..d {
        let mut col = centered.column_mut(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        col.add_scalar_mut(-mean);
    }

    let axes = if n.min(d) <= EXACT_LIMIT {
        exact_axes(&centered, n_components)
    } else {
        subspace_axes(&centered, n_components)
    };
    let axes = fix_signs(axes);
    let proj = &centered * &axes;
    let mut out = DenseMatrix::zeros(n, n_components);
    for r in 0..n {
        for c in 0..n_components {
            out.set(r, c, proj[(r, c)]);
        }
    }
    Ok(out)
}

/// Returns the `k` leading eigenvectors (as columns) of a symmetric matrix,
/// ordered by descending eigenvalue.
fn top_eigenvectors(sym: DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), k, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

fn exact_axes(centered: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (n, d) = centered.shape();
    if d <= n {
        top_eigenvectors(centered.transpose() * centered, k).1
    } else {
        // right singular vectors from left ones: v = Xᵀu / σ
        let (vals, u) = top_eigenvectors(centered * centered.transpose(), k);
        let mut v = centered.transpose() * u;
        for (c, lambda) in vals.iter().enumerate() {
            let sigma = lambda.max(0.0).sqrt();
            let mut col = v.column_mut(c);
            if sigma > 0.0 {
                col /= sigma;
            }
        }
        v
    }
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn subspace_axes(centered: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = centered.ncols();
    let width = (k + OVERSAMPLE).min(centered.nrows().min(d));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_9ca0);
    let mut q = orthonormalize(DMatrix::from_fn(d, width, |_, _| rng.sample(StandardNormal)));
    let xt = centered.transpose();
    for _ in 0..SUBSPACE_ITERS {
        let y = orthonormalize(centered * &q);
        q = orthonormalize(&xt * y);
    }
    let b = centered * &q;
    let (_, w) = top_eigenvectors(b.transpose() * b, k);
    q * w
}

fn fix_signs(mut axes: DMatrix<f64>) -> DMatrix<f64> {
    for c in 0..axes.ncols() {
        let mut col = axes.column_mut(c);
        let mut pivot = 0.0_f64;
        for &v in col.iter() {
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    axes
}

#[cfg(test)]
mod tests {
    use super::*;
    fn random(rng: &mut impl Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn column_means(m: &DenseMatrix) -> Vec<f64> {
        let s = m.column_sums();
        s.as_slice().iter().map(|v| v / m.rows() as f64).collect()
    }

    fn column_variances(m: &DenseMatrix) -> Vec<f64> {
        (0..m.cols())
            .map(|c| (0..m.rows()).map(|r| m.get(r, c).powi(2)).sum::<f64>() / m.rows() as f64)
            .collect()
    }

    #[test]
    fn planar_data_is_reconstructed_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let basis = random(&mut rng, 2, 5);
        let coords = random(&mut rng, 40, 2);
        let mut x = crate::numeric::matmul(&coords, &basis).unwrap();
        for r in 0..40 {
            x.row_mut(r).iter_mut().for_each(|v| *v += 3.0);
        }
        let z = pca_reduce(&x, 2).unwrap();
        // reconstruct: mean + Z Vᵀ where V spans the projection
        let zt_z = crate::numeric::matmul_tn(&z, &z).unwrap();
        let mean = column_means(&x);
        let mut centered = x.clone();
        for r in 0..40 {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        // V = (ZᵀZ)⁻¹ Zᵀ Xc, rows orthonormal when exact
        let zt_x = crate::numeric::matmul_tn(&z, &centered).unwrap();
        let inv = DMatrix::from_row_slice(2, 2, zt_z.as_slice()).try_inverse().unwrap();
        let v = &inv * DMatrix::from_row_slice(2, 5, zt_x.as_slice());
        let zm = DMatrix::from_row_slice(40, 2, z.as_slice());
        let recon = zm * v;
        let err = (0..40)
            .flat_map(|r| (0..5).map(move |c| (r, c)))
            .map(|(r, c)| (recon[(r, c)] - centered.get(r, c)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-9, "{err}");
    }

    #[test]
    fn output_is_centered_with_nonincreasing_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&mut rng, 60, 12);
        let z = pca_reduce(&x, 6).unwrap();
        assert!(column_means(&z).iter().all(|m| m.abs() <= 1e-10));
        let var = column_variances(&z);
        assert!(var.windows(2).all(|w| w[0] >= w[1] - 1e-12), "{var:?}");
    }

    fn assert_matches_svd(x: &DenseMatrix, k: usize) {
        let (n, d) = x.shape();
        let z = pca_reduce(x, k).unwrap();
        let mean = column_means(x);
        let centered = DMatrix::from_fn(n, d, |r, c| x.get(r, c) - mean[c]);
        let svd = centered.clone().svd(true, true);
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let vt = svd.v_t.unwrap();
        for (c, &i) in order.iter().take(k).enumerate() {
            let axis = vt.row(i).transpose();
            let oracle = &centered * axis;
            let same = (0..n).map(|r| (z.get(r, c) - oracle[r]).abs()).fold(0.0, f64::max);
            let flip = (0..n).map(|r| (z.get(r, c) + oracle[r]).abs()).fold(0.0, f64::max);
            assert!(same.min(flip) <= 1e-8, "component {c}: {same} / {flip}");
        }
    }

    #[test]
    fn matches_full_svd_up_to_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        assert_matches_svd(&random(&mut rng, 50, 10), 4);
    }

    #[test]
    fn wide_input_matches_full_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        assert_matches_svd(&random(&mut rng, 8, 20), 3);
    }

    #[test]
    fn subspace_iteration_agrees_with_exact_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        // low-rank signal plus small noise so the spectrum has a clear gap
        let a = random(&mut rng, 120, 5);
        let b = random(&mut rng, 5, 40);
        let mut x = crate::numeric::matmul(&a, &b).unwrap();
        x.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v += 1e-3 * rng.gen_range(-1.0..1.0));
        let centered = {
            let mean = column_means(&x);
            DMatrix::from_fn(120, 40, |r, c| x.get(r, c) - mean[c])
        };
        let exact = fix_signs(exact_axes(&centered, 3));
        let iter = fix_signs(subspace_axes(&centered, 3));
        let diff = (&exact - &iter).abs().max();
        assert!(diff <= 1e-8, "{diff}");
    }

    #[test]
    fn too_many_components_is_an_error() {
        let x = DenseMatrix::zeros(4, 3);
        assert!(matches!(pca_reduce(&x, 4), Err(Error::Dimension { .. })));
    }
}
