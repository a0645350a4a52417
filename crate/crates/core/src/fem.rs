//! P1 discretisation of the weighted operator `div((1/(mu0 r)) grad .)` and
//! the direct solver for the Dirichlet-modified system `K psi = y + g`.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodalField};

/// Vacuum permeability in H/m.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct StiffnessMatrix {
    matrix: CsrMatrix<f64>,
    dirichlet_applied: bool,
    constrained: Vec<usize>,
}

/// Stiffness matrix of the Neumann problem, `1/r` sampled at each triangle centroid.
pub fn assemble_stiffness(mesh: &Mesh, mu0: f64) -> StiffnessMatrix {
    let n = mesh.n_nodes();
    let mut coo = CooMatrix::new(n, n);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.shape_gradients(t);
        let coef = mesh.area(t) / (mu0 * mesh.centroid(t).r);
        let mut ke = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                let v = coef * (g[a].0 * g[b].0 + g[a].1 * g[b].1);
                ke[a][b] = v;
                ke[b][a] = v;
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                coo.push(tri[a], tri[b], ke[a][b]);
            }
        }
    }
    StiffnessMatrix {
        matrix: CsrMatrix::from(&coo),
        dirichlet_applied: false,
        constrained: Vec::new(),
    }
}

impl StiffnessMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn csr(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn dirichlet_applied(&self) -> bool {
        self.dirichlet_applied
    }

    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get_entry(i, j).map(|e| e.into_value()).unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let row_offsets = self.matrix.row_offsets();
        let cols = self.matrix.col_indices();
        let vals = self.matrix.values();
        (0..self.n())
            .map(|i| (row_offsets[i]..row_offsets[i + 1]).map(|k| vals[k] * x[cols[k]]).sum())
            .collect()
    }

    /// Replaces every constrained row by the corresponding identity row.
    pub fn impose_dirichlet(self, nodes: &[usize]) -> Result<Self> {
        if self.dirichlet_applied {
            return Err(Error::State("Dirichlet rows already imposed".into()));
        }
        let n = self.n();
        let mut constrained = vec![false; n];
        for &i in nodes {
            if i >= n {
                return Err(Error::Argument(format!("constrained node {i} out of range")));
            }
            constrained[i] = true;
        }
        let mut coo = CooMatrix::new(n, n);
        for (i, row) in self.matrix.row_iter().enumerate() {
            if constrained[i] {
                coo.push(i, i, 1.0);
            } else {
                for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                    coo.push(i, j, v);
                }
            }
        }
        let mut list: Vec<usize> = (0..n).filter(|&i| constrained[i]).collect();
        list.dedup();
        Ok(Self {
            matrix: CsrMatrix::from(&coo),
            dirichlet_applied: true,
            constrained: list,
        })
    }
}

/// Reusable direct factorisation of the Dirichlet-modified stiffness matrix.
///
/// Constrained rows are identity rows, so the system decouples into
/// `psi_B = rhs_B` and the symmetric positive definite interior block
/// `K_II psi_I = rhs_I - K_IB rhs_B`, which is factorised by sparse Cholesky.
#[derive(Debug)]
pub struct Factorization {
    n: usize,
    interior: Vec<usize>,
    constrained: Vec<usize>,
    /// Coupling of interior rows to constrained columns, indexed by interior position.
    coupling: CsrMatrix<f64>,
    cholesky: CscCholesky<f64>,
}

pub fn factorize(k: &StiffnessMatrix) -> Result<Factorization> {
    if !k.dirichlet_applied {
        return Err(Error::State(
            "factorize requires Dirichlet rows to be imposed first".into(),
        ));
    }
    let n = k.n();
    let mut position = vec![usize::MAX; n];
    let mut is_constrained = vec![false; n];
    for &i in &k.constrained {
        is_constrained[i] = true;
    }
    let interior: Vec<usize> = (0..n).filter(|&i| !is_constrained[i]).collect();
    if interior.is_empty() {
        return Err(Error::Factorization("no unconstrained rows".into()));
    }
    for (p, &i) in interior.iter().enumerate() {
        position[i] = p;
    }
    let ni = interior.len();
    let mut kii = CooMatrix::new(ni, ni);
    let mut kib = CooMatrix::new(ni, n);
    let mut max_diag: f64 = 0.0;
    for (p, &i) in interior.iter().enumerate() {
        let row = k.matrix.row(i);
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            if is_constrained[j] {
                kib.push(p, j, v);
            } else {
                kii.push(p, position[j], v);
                if j == i {
                    max_diag = max_diag.max(v.abs());
                }
            }
        }
    }
    let cholesky = CscCholesky::factor(&CscMatrix::from(&kii)).map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let l = cholesky.l();
    let min_pivot = (0..ni)
        .map(|p| l.get_entry(p, p).map(|e| e.into_value()).unwrap_or(0.0).powi(2))
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * max_diag) {
        return Err(Error::Factorization(format!(
            "numerically singular interior block (pivot {min_pivot:e} vs diagonal {max_diag:e})"
        )));
    }
    Ok(Factorization {
        n,
        interior,
        constrained: k.constrained.clone(),
        coupling: CsrMatrix::from(&kib),
        cholesky,
    })
}

impl Factorization {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::Argument(format!(
                "rhs has length {} but system has {}",
                rhs.len(),
                self.n
            )));
        }
        let cols = DMatrix::from_column_slice(self.n, 1, rhs);
        Ok(self.solve_multi(&cols)?.column(0).iter().copied().collect())
    }

    pub fn solve_field(&self, rhs: &[f64]) -> Result<NodalField> {
        self.solve(rhs).map(NodalField::from_vec_unchecked)
    }

    /// Solves for every column of `rhs` (n x k).
    pub fn solve_multi(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.n {
            return Err(Error::Argument(format!(
                "rhs has {} rows but system has {}",
                rhs.nrows(),
                self.n
            )));
        }
        let k = rhs.ncols();
        let ni = self.interior.len();
        let mut b = DMatrix::zeros(ni, k);
        for (p, &i) in self.interior.iter().enumerate() {
            for c in 0..k {
                b[(p, c)] = rhs[(i, c)];
            }
        }
        for (p, row) in self.coupling.row_iter().enumerate() {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                for c in 0..k {
                    b[(p, c)] -= v * rhs[(j, c)];
                }
            }
        }
        let xi = self.cholesky.solve(&b);
        let mut x = DMatrix::zeros(self.n, k);
        for &i in &self.constrained {
            for c in 0..k {
                x[(i, c)] = rhs[(i, c)];
            }
        }
        for (p, &i) in self.interior.iter().enumerate() {
            for c in 0..k {
                x[(i, c)] = xi[(p, c)];
            }
        }
        Ok(x)
    }

    /// Dense `K^-1`, for callers that prefer explicit products over factored solves.
    pub fn dense_inverse(&self) -> DMatrix<f64> {
        self.solve_multi(&DMatrix::identity(self.n, self.n))
            .expect("identity has matching dimensions")
    }
}

/// Right-hand-side vector carrying Dirichlet data: `g_d[k]` is placed at row
/// `boundary[k]`, every other row is zero.
pub fn dirichlet_vector(mesh: &Mesh, g_d: &[f64]) -> Result<Vec<f64>> {
    if g_d.len() != mesh.boundary().len() {
        return Err(Error::Argument(format!(
            "{} Dirichlet values for {} boundary nodes",
            g_d.len(),
            mesh.boundary().len()
        )));
    }
    let mut g = vec![0.0; mesh.n_nodes()];
    for (&b, &v) in mesh.boundary().iter().zip(g_d) {
        g[b] = v;
    }
    Ok(g)
}

/// Convenience: assemble, constrain the boundary and factorise.
pub fn prepare(mesh: &Mesh, mu0: f64) -> Result<(StiffnessMatrix, Factorization)> {
    let k = assemble_stiffness(mesh, mu0).impose_dirichlet(mesh.boundary())?;
    let f = factorize(&k)?;
    Ok((k, f))
}

pub(crate) fn dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, Point};
    use rand::{Rng, SeedableRng};

    #[test]
    fn neumann_matrix_annihilates_constants_and_is_symmetric() {
        let m = build_rect_mesh(1.0, 2.0, -0.5, 0.5, 9, 7).unwrap();
        let k = assemble_stiffness(&m, MU0);
        let norm_inf = (0..k.n())
            .map(|i| (0..k.n()).map(|j| k.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let kx = k.mul_vec(&vec![1.0; k.n()]);
        assert!(kx.iter().all(|v| v.abs() <= 1e-12 * norm_inf));
        for i in 0..k.n() {
            for j in 0..k.n() {
                assert_eq!(k.get(i, j), k.get(j, i));
            }
        }
    }

    #[test]
    fn single_triangle_matches_hand_integral() {
        // vertices (1,0), (2,0), (1,1); centroid r = 4/3; area 1/2
        let nodes = vec![Point::new(1.0, 0.0), Point::new(2.0, 0.0), Point::new(1.0, 1.0)];
        let m = Mesh::new(nodes, vec![[0, 1, 2]], vec![0, 1, 2], vec![]).unwrap();
        let k = assemble_stiffness(&m, 1.0);
        // grad v0 = (-1,-1), grad v1 = (1,0), grad v2 = (0,1)
        let c = 0.5 / (4.0 / 3.0);
        let expected = [[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]];
        for (i, row) in expected.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                assert!((k.get(i, j) - c * e).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn dirichlet_rows_become_identity() {
        let m = build_rect_mesh(1.0, 2.0, -0.5, 0.5, 4, 4).unwrap();
        let raw = assemble_stiffness(&m, MU0);
        let k = raw.clone().impose_dirichlet(m.boundary()).unwrap();
        for &b in m.boundary() {
            let row = k.csr().row(b);
            assert_eq!(row.col_indices(), &[b]);
            assert_eq!(row.values(), &[1.0]);
        }
        for i in (0..m.n_nodes()).filter(|&i| !m.is_boundary(i)) {
            assert_eq!(k.csr().row(i).values(), raw.csr().row(i).values());
            assert_eq!(k.csr().row(i).col_indices(), raw.csr().row(i).col_indices());
        }
        assert!(matches!(k.impose_dirichlet(m.boundary()), Err(Error::State(_))));
    }

    #[test]
    fn factorize_requires_dirichlet() {
        let m = build_rect_mesh(1.0, 2.0, -0.5, 0.5, 4, 4).unwrap();
        assert!(matches!(factorize(&assemble_stiffness(&m, MU0)), Err(Error::State(_))));
    }

    #[test]
    fn solve_inverts_modified_matrix() {
        let m = build_rect_mesh(1.0, 2.0, -0.5, 0.5, 12, 10).unwrap();
        let (k, f) = prepare(&m, MU0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..k.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let back = f.solve(&k.mul_vec(&x)).unwrap();
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-10, "{err}");
        assert!(matches!(f.solve(&[0.0; 3]), Err(Error::Argument(_))));
    }

    #[test]
    fn dense_inverse_agrees_with_solve() {
        let m = build_rect_mesh(1.0, 2.0, -0.5, 0.5, 5, 5).unwrap();
        let (_, f) = prepare(&m, MU0).unwrap();
        let inv = f.dense_inverse();
        let rhs: Vec<f64> = (0..f.n()).map(|i| (i as f64).sin()).collect();
        let a = f.solve(&rhs).unwrap();
        let b = &inv * dvector(&rhs);
        for i in 0..f.n() {
            assert!((a[i] - b[i]).abs() < 1e-12 * a[i].abs().max(1.0));
        }
    }

    #[test]
    fn missing_dirichlet_rows_are_singular() {
        let m = build_rect_mesh(1.0, 2.0, -0.5, 0.5, 4, 4).unwrap();
        let k = assemble_stiffness(&m, MU0).impose_dirichlet(&[]).unwrap();
        assert!(matches!(factorize(&k), Err(Error::Factorization(_))));
    }
}
