//! Laplacian positional encodings.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{canonical_sign, Graph};

/// Eigenvalues below this are treated as the trivial (zero) spectrum.
pub const TRIVIAL_EIGENVALUE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacianPe {
    /// `n x k_pe`
    pub vectors: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub n_components: usize,
}

impl LaplacianPe {
    pub fn k(&self) -> usize {
        self.vectors.ncols()
    }

    /// CSV `node_id,pe_1..pe_k`.
    pub fn write_csv<W: Write>(&self, node_ids: &[i64], mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.k()).map(|c| format!("pe_{c}")).collect();
        writeln!(w, "node_id,{}", header.join(","))?;
        for i in 0..self.vectors.nrows() {
            let row: Vec<String> = self.vectors.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", node_ids[i], row.join(","))?;
        }
        Ok(())
    }
}

/// Symmetric normalized Laplacian `I - D^-1/2 A D^-1/2` of the graph with
/// self-loops dropped, negative weights clamped to zero and `A` symmetrized
/// as `(A + A^T) / 2`. Zero-degree nodes get an all-zero row.
pub fn normalized_laplacian(graph: &Graph) -> DMatrix<f64> {
    let n = graph.n;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for e in graph.edges() {
        if e.src != e.dst {
            a[(e.src, e.dst)] += 0.5 * e.weight.max(0.0);
            a[(e.dst, e.src)] += 0.5 * e.weight.max(0.0);
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        if inv_sqrt_deg[i] > 0.0 {
            l[(i, i)] = 1.0;
        }
        for j in 0..i {
            let v = -a[(i, j)] * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    l
}

/// Full dense eigendecomposition; skips the near-zero eigenpairs and returns
/// the next `k_pe` eigenvectors with canonical signs.
pub fn compute_pe(laplacian: &DMatrix<f64>, k_pe: usize) -> Result<LaplacianPe> {
    let n = laplacian.nrows();
    let eig = SymmetricEigen::new(laplacian.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let n_components = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] < TRIVIAL_EIGENVALUE)
        .count();
    if k_pe + n_components > n {
        return Err(Error::TooManyEigenvectors {
            k_pe,
            n,
            n_components,
        });
    }
    let mut vectors = DMatrix::zeros(n, k_pe);
    let mut eigenvalues = Vec::with_capacity(k_pe);
    for (c, &i) in order[n_components..n_components + k_pe].iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        canonical_sign(v.as_mut_slice());
        vectors.set_column(c, &v);
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(LaplacianPe {
        vectors,
        eigenvalues,
        n_components,
    })
}

pub fn laplacian_pe(graph: &Graph, k_pe: usize) -> Result<LaplacianPe> {
    compute_pe(&normalized_laplacian(graph), k_pe)
}

/// Per-column seeded signs in {-1, +1}.
pub fn pe_signs(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

pub fn randomize_pe_signs(pe: &LaplacianPe, seed: u64) -> LaplacianPe {
    let signs = pe_signs(pe.k(), seed);
    let mut out = pe.clone();
    for (c, s) in signs.iter().enumerate() {
        out.vectors.column_mut(c).scale_mut(*s);
    }
    out
}
