//! Continuity constraints `Hγ = 0`, the reduction map `R̃` with `θ = R̃θ*`,
//! and the ridge selector `D`.
//!
//! Global parameter layout: `θ = (γ_1, …, γ_q, η)` with
//! `γ_u = (γ_{1u}, …, γ_{Ju})` and `γ_{ju} = (γ_{j,u0}, …, γ_{j,ud_u})`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};
use crate::linalg::{block_diag, Mat, Vector};
use crate::model::{basis_derivative_row, basis_row, BasisSpec};
use crate::partition::Partition;

/// Differentiability class enforced at interior partition edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Smoothness {
    None,
    #[default]
    C0,
    C1,
}

impl Smoothness {
    /// `v` for class `C^v`.
    pub fn order(self) -> Option<usize> {
        match self {
            Smoothness::None => None,
            Smoothness::C0 => Some(0),
            Smoothness::C1 => Some(1),
        }
    }

    /// Number of leading coefficients of each block after the first that are
    /// regenerated from the previous block.
    fn tied(self) -> usize {
        self.order().map_or(0, |v| v + 1)
    }
}

/// Index bookkeeping for the global parameter `θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub blocks: usize,
    pub degrees: Vec<usize>,
    pub p: usize,
}

impl ParamLayout {
    pub fn new(blocks: usize, basis: &BasisSpec, p: usize) -> Self {
        ParamLayout { blocks, degrees: basis.degrees.clone(), p }
    }

    pub fn q(&self) -> usize {
        self.degrees.len()
    }

    pub fn gamma_dim(&self) -> usize {
        self.degrees.iter().map(|d| self.blocks * (d + 1)).sum()
    }

    pub fn dim(&self) -> usize {
        self.gamma_dim() + self.p
    }

    /// `Σ_u (d_u + 1) + p`.
    pub fn block_dim(&self) -> usize {
        self.degrees.iter().map(|d| d + 1).sum::<usize>() + self.p
    }

    fn covariate_offset(&self, u: usize) -> usize {
        self.degrees[..u].iter().map(|d| self.blocks * (d + 1)).sum()
    }

    /// Global index of `γ_{j,ud}` (zero-based `j`, `u`).
    pub fn gamma_index(&self, j: usize, u: usize, d: usize) -> usize {
        self.covariate_offset(u) + j * (self.degrees[u] + 1) + d
    }

    pub fn eta_index(&self, k: usize) -> usize {
        self.gamma_dim() + k
    }

    /// Global indices of `θ_j` in block order: the selection map `E_j`.
    pub fn block_indices(&self, j: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.block_dim());
        for (u, &deg) in self.degrees.iter().enumerate() {
            idx.extend((0..=deg).map(|d| self.gamma_index(j, u, d)));
        }
        idx.extend((0..self.p).map(|k| self.eta_index(k)));
        idx
    }

    /// Extract `θ_j` from the global `θ`.
    pub fn select_block(&self, theta: &Vector, j: usize) -> Vector {
        let idx = self.block_indices(j);
        Vector::from_iterator(idx.len(), idx.iter().map(|&i| theta[i]))
    }

    /// Zero-padded basis row `x̃_u` (or its time derivative) for `t` evaluated
    /// with block `j`'s polynomial, so `β_u(t) = x̃_uᵀθ`.
    pub fn curve_row(
        &self,
        part: &Partition,
        scaled: bool,
        u: usize,
        j: usize,
        t: f64,
        derivative: bool,
    ) -> Result<Vector> {
        let edges = part.block_edges(j);
        let deg = self.degrees[u];
        let xi = if derivative {
            basis_derivative_row(t, edges, deg, scaled)?
        } else {
            basis_row(t, edges, deg, scaled)?
        };
        let mut row = Vector::zeros(self.dim());
        for (d, v) in xi.into_iter().enumerate() {
            row[self.gamma_index(j, u, d)] = v;
        }
        Ok(row)
    }

    /// Selector of `η_k`.
    pub fn eta_row(&self, k: usize) -> Vector {
        let mut row = Vector::zeros(self.dim());
        row[self.eta_index(k)] = 1.0;
        row
    }
}

/// `(H, R̃, D, D̃)` for one partition, basis and smoothness class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMap {
    pub smoothness: Smoothness,
    pub layout: ParamLayout,
    pub h: Mat,
    pub rtilde: Mat,
    pub d: Mat,
    pub dtilde: Mat,
}

impl ConstraintMap {
    pub fn new(part: &Partition, basis: &BasisSpec, smoothness: Smoothness, p: usize) -> Result<Self> {
        let h = build_h(part, basis, smoothness)?;
        let rtilde = build_rtilde(part, basis, smoothness, p)?;
        let (d, dtilde) = build_d(part, basis, p, &rtilde);
        Ok(ConstraintMap { smoothness, layout: ParamLayout::new(part.blocks(), basis, p), h, rtilde, d, dtilde })
    }

    /// `dim θ*`.
    pub fn reduced_dim(&self) -> usize {
        self.rtilde.ncols()
    }

    pub fn expand(&self, theta_star: &Vector) -> Vector {
        &self.rtilde * theta_star
    }

    /// Labels of the `θ*` coordinates: `gamma_{j},{d}` (with the covariate
    /// number after `gamma` when `q > 1`) and `eta{k}`, all 1-based except `d`.
    pub fn reduced_names(&self) -> Vec<String> {
        let l = &self.layout;
        let tied = self.smoothness.tied();
        let mut names = Vec::with_capacity(self.reduced_dim());
        for (u, &deg) in l.degrees.iter().enumerate() {
            let prefix = if l.q() > 1 { format!("gamma{}", u + 1) } else { "gamma".to_string() };
            for j in 0..l.blocks {
                let first = if j == 0 { 0 } else { tied };
                names.extend((first..=deg).map(|d| format!("{prefix}_{},{d}", j + 1)));
            }
        }
        names.extend((1..=l.p).map(|k| format!("eta{k}")));
        names
    }

    /// Least-squares preimage `θ*` of a full `θ` (exact when `θ` satisfies the constraints).
    pub fn reduce(&self, theta: &Vector) -> Vector {
        let rt = self.rtilde.transpose();
        let gram = &rt * &self.rtilde;
        gram.cholesky().expect("reduction map has full column rank").solve(&(rt * theta))
    }

    /// Rows of `R̃` belonging to `γ`.
    pub fn gamma_rows(&self) -> Mat {
        self.rtilde.rows(0, self.layout.gamma_dim()).into_owned()
    }

    /// Emit a matrix as CSV (no header).
    pub fn matrix_csv(m: &Mat) -> String {
        let mut out = String::new();
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|c| format!("{}", m[(r, c)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn check_class(basis: &BasisSpec, smoothness: Smoothness) -> Result<()> {
    if let Some(v) = smoothness.order() {
        if let Some((u, d)) = basis.degrees.iter().enumerate().find(|(_, &d)| v >= d) {
            return Err(ScmError::Config(format!(
                "class C{v} needs basis degree above {v}, but covariate {} has degree {d}; \
                 that would force the coefficients to be identical across blocks",
                u + 1
            )));
        }
    }
    Ok(())
}

fn edge_widths(part: &Partition, j: usize, scaled: bool) -> (f64, f64) {
    let (lo, hi) = part.block_edges(j);
    let width = hi - lo;
    let next = if j + 1 < part.blocks() {
        let (a, b) = part.block_edges(j + 1);
        b - a
    } else {
        width
    };
    // (δ_j used in the value row, factor applied to the derivative row)
    if scaled {
        (1.0, next / width)
    } else {
        (width, 1.0)
    }
}

/// Constraint matrix over `γ`: block diagonal over covariates, one value row
/// (and, for `C¹`, one first-derivative row) per interior edge.
pub fn build_h(part: &Partition, basis: &BasisSpec, smoothness: Smoothness) -> Result<Mat> {
    check_class(basis, smoothness)?;
    let jn = part.blocks();
    let tied = smoothness.tied();
    let per_cov: Vec<Mat> = basis
        .degrees
        .iter()
        .map(|&deg| {
            let width = jn * (deg + 1);
            let mut h = Mat::zeros(tied * (jn - 1), width);
            for j in 0..jn - 1 {
                let (delta, dscale) = edge_widths(part, j, basis.scaled);
                let base = j * (deg + 1);
                let next = (j + 1) * (deg + 1);
                if tied == 0 {
                    continue;
                }
                let r = tied * j;
                for d in 0..=deg {
                    h[(r, base + d)] = delta.powi(d as i32);
                }
                h[(r, next)] = -1.0;
                if tied > 1 {
                    for d in 1..=deg {
                        h[(r + 1, base + d)] = dscale * d as f64 * delta.powi(d as i32 - 1);
                    }
                    h[(r + 1, next + 1)] = -1.0;
                }
            }
            h
        })
        .collect();
    Ok(block_diag(&per_cov))
}

/// Reduction map with `θ* = (γ_{1,u0..d}, (γ_{j,u,v+1..d})_{j≥2}, …, η)`:
/// each block's leading `v+1` coefficients are regenerated from the value
/// (and slope) of the previous block at the shared edge.
pub fn build_rtilde(part: &Partition, basis: &BasisSpec, smoothness: Smoothness, p: usize) -> Result<Mat> {
    check_class(basis, smoothness)?;
    let jn = part.blocks();
    let tied = smoothness.tied();
    let mut blocks: Vec<Mat> = basis
        .degrees
        .iter()
        .map(|&deg| {
            let rows = jn * (deg + 1);
            let cols = rows - tied * (jn - 1);
            let mut r = Mat::zeros(rows, cols);
            let mut col = 0;
            for d in 0..=deg {
                r[(d, col)] = 1.0;
                col += 1;
            }
            for j in 1..jn {
                let (delta, dscale) = edge_widths(part, j - 1, basis.scaled);
                let prev = (j - 1) * (deg + 1);
                let here = j * (deg + 1);
                let mut value = Vector::zeros(cols);
                let mut slope = Vector::zeros(cols);
                for d in 0..=deg {
                    let src = r.row(prev + d).transpose();
                    value += &src * delta.powi(d as i32);
                    if d >= 1 {
                        slope += &src * (dscale * d as f64 * delta.powi(d as i32 - 1));
                    }
                }
                for d in 0..=deg {
                    if d < tied {
                        let src = if d == 0 { &value } else { &slope };
                        r.row_mut(here + d).copy_from(&src.transpose());
                    } else {
                        r[(here + d, col)] = 1.0;
                        col += 1;
                    }
                }
            }
            debug_assert_eq!(col, cols);
            r
        })
        .collect();
    blocks.push(Mat::identity(p, p));
    Ok(block_diag(&blocks))
}

/// `D` (ones on γ, zeros on η) and `D̃ = R̃ᵀDR̃`.
pub fn build_d(part: &Partition, basis: &BasisSpec, p: usize, rtilde: &Mat) -> (Mat, Mat) {
    let layout = ParamLayout::new(part.blocks(), basis, p);
    let diag = Vector::from_iterator(layout.dim(), (0..layout.dim()).map(|i| (i < layout.gamma_dim()) as u8 as f64));
    let d = Mat::from_diagonal(&diag);
    let dtilde = rtilde.transpose() * &d * rtilde;
    (d, dtilde)
}
