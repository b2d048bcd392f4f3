//! Matrix groups used as structure groups and fibres.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type GroupElement = DMatrix<f64>;

/// Constraint residual above which rotations are projected back onto the group.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GroupModel {
    So2,
    So3,
    /// U(1) realized as 2x2 rotation matrices, `e^{iθ} ↔ R(θ)`.
    U1,
    Gl(usize),
}

impl fmt::Display for GroupModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupModel::So2 => f.write_str("so2"),
            GroupModel::So3 => f.write_str("so3"),
            GroupModel::U1 => f.write_str("u1"),
            GroupModel::Gl(n) => write!(f, "gl{n}"),
        }
    }
}

impl FromStr for GroupModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "so2" => Ok(GroupModel::So2),
            "so3" => Ok(GroupModel::So3),
            "u1" => Ok(GroupModel::U1),
            other => other
                .strip_prefix("gl")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(GroupModel::Gl)
                .ok_or_else(|| Error::Model(format!("unknown group id '{s}'"))),
        }
    }
}

impl TryFrom<String> for GroupModel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GroupModel> for String {
    fn from(g: GroupModel) -> Self {
        g.to_string()
    }
}

/// How distances between group elements are measured in reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupDistance {
    /// `‖a - b‖_F`
    #[default]
    Frobenius,
    /// `‖log(a⁻¹ b)‖_F` for rotation groups; falls back to Frobenius for GL(n).
    Geodesic,
}

/// Planar rotation by `angle`.
pub fn rotation2(angle: f64) -> GroupElement {
    let (s, c) = angle.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

fn hat(w: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0])
}

fn rodrigues(w: &[f64]) -> GroupElement {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let k = hat(w);
    let (a, b) = if theta < 1e-8 {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    DMatrix::identity(3, 3) + &k * a + &k * &k * b
}

impl GroupModel {
    /// Size of the defining matrices.
    pub fn matrix_size(&self) -> usize {
        match self {
            GroupModel::So2 | GroupModel::U1 => 2,
            GroupModel::So3 => 3,
            GroupModel::Gl(n) => *n,
        }
    }

    /// Dimension of the group (of its Lie algebra).
    pub fn dim(&self) -> usize {
        match self {
            GroupModel::So2 | GroupModel::U1 => 1,
            GroupModel::So3 => 3,
            GroupModel::Gl(n) => n * n,
        }
    }

    pub fn is_abelian(&self) -> bool {
        matches!(self, GroupModel::So2 | GroupModel::U1 | GroupModel::Gl(1))
    }

    fn is_rotation(&self) -> bool {
        !matches!(self, GroupModel::Gl(_))
    }

    pub fn identity(&self) -> GroupElement {
        let n = self.matrix_size();
        DMatrix::identity(n, n)
    }

    pub fn multiply(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        a * b
    }

    pub fn invert(&self, a: &GroupElement) -> Result<GroupElement> {
        if self.is_rotation() {
            Ok(a.transpose())
        } else {
            a.clone()
                .try_inverse()
                .ok_or_else(|| Error::Payload("singular matrix is not in GL(n)".into()))
        }
    }

    /// Deviation of `g` from the group's defining constraints (infinite on shape mismatch).
    pub fn constraint_residual(&self, g: &GroupElement) -> f64 {
        let n = self.matrix_size();
        if g.nrows() != n || g.ncols() != n || g.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        if self.is_rotation() {
            let orth = (g.transpose() * g - DMatrix::identity(n, n)).norm();
            let det = (g.determinant() - 1.0).abs();
            orth.max(det)
        } else if g.determinant().abs() > 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn contains(&self, g: &GroupElement, tol: f64) -> bool {
        self.constraint_residual(g) < tol
    }

    /// Nearest group element; polar projection for rotation groups, identity map for GL(n).
    pub fn renormalize(&self, g: &GroupElement) -> GroupElement {
        if !self.is_rotation() {
            return g.clone();
        }
        let svd = g.clone().svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = &u * &vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            let last = u.ncols() - 1;
            u.column_mut(last).neg_mut();
            r = u * vt;
        }
        r
    }

    /// Renormalizes only when the residual exceeds [`RENORMALIZE_THRESHOLD`].
    pub fn maybe_renormalize(&self, g: GroupElement) -> GroupElement {
        if self.is_rotation() && self.constraint_residual(&g) > RENORMALIZE_THRESHOLD {
            self.renormalize(&g)
        } else {
            g
        }
    }

    /// A basis of the Lie algebra as matrices of size `matrix_size()`.
    pub fn algebra_basis(&self) -> Vec<DMatrix<f64>> {
        match self {
            GroupModel::So2 | GroupModel::U1 => vec![DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])],
            GroupModel::So3 => vec![hat(&[1.0, 0.0, 0.0]), hat(&[0.0, 1.0, 0.0]), hat(&[0.0, 0.0, 1.0])],
            GroupModel::Gl(n) => {
                let mut basis = Vec::with_capacity(n * n);
                for i in 0..*n {
                    for j in 0..*n {
                        let mut e = DMatrix::zeros(*n, *n);
                        e[(i, j)] = 1.0;
                        basis.push(e);
                    }
                }
                basis
            }
        }
    }

    /// Algebra element `sum_a coords[a] E_a`.
    pub fn algebra_element(&self, coords: &[f64]) -> Result<DMatrix<f64>> {
        if coords.len() != self.dim() {
            return Err(Error::Payload(format!(
                "{self} algebra has dimension {}, got {} coordinates",
                self.dim(),
                coords.len()
            )));
        }
        let n = self.matrix_size();
        Ok(self
            .algebra_basis()
            .iter()
            .zip(coords)
            .fold(DMatrix::zeros(n, n), |acc, (e, c)| acc + e * *c))
    }

    /// Exponential of the algebra element with the given coordinates.
    pub fn exp(&self, coords: &[f64]) -> Result<GroupElement> {
        match self {
            GroupModel::So2 | GroupModel::U1 => {
                self.algebra_element(coords)?;
                Ok(rotation2(coords[0]))
            }
            GroupModel::So3 => {
                self.algebra_element(coords)?;
                Ok(rodrigues(coords))
            }
            GroupModel::Gl(_) => Ok(self.algebra_element(coords)?.exp()),
        }
    }

    /// Rotation angle of a planar rotation (U(1)/SO(2) phase), in `(-π, π]`.
    pub fn angle(&self, g: &GroupElement) -> Option<f64> {
        match self {
            GroupModel::So2 | GroupModel::U1 => Some(g[(1, 0)].atan2(g[(0, 0)])),
            _ => None,
        }
    }

    pub fn distance(&self, a: &GroupElement, b: &GroupElement, kind: GroupDistance) -> f64 {
        if a.shape() != b.shape() {
            return f64::INFINITY;
        }
        match (kind, self) {
            (GroupDistance::Frobenius, _) | (GroupDistance::Geodesic, GroupModel::Gl(_)) => (a - b).norm(),
            (GroupDistance::Geodesic, GroupModel::So2 | GroupModel::U1) => {
                let rel = a.transpose() * b;
                std::f64::consts::SQRT_2 * rel[(1, 0)].atan2(rel[(0, 0)]).abs()
            }
            (GroupDistance::Geodesic, GroupModel::So3) => {
                let rel = a.transpose() * b;
                let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
                std::f64::consts::SQRT_2 * c.acos()
            }
        }
    }

    /// A random element; Haar-uniform for rotation groups, a well-conditioned
    /// perturbation of the identity for GL(n).
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupElement {
        match self {
            GroupModel::So2 | GroupModel::U1 => rotation2(rng.random_range(-PI..PI)),
            GroupModel::So3 => {
                // Shoemake's uniform unit quaternion
                let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
                let a = (1.0 - u1).sqrt();
                let b = u1.sqrt();
                let (x, y) = (a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos());
                let (z, w) = (b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos());
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[
                        1.0 - 2.0 * (y * y + z * z),
                        2.0 * (x * y - z * w),
                        2.0 * (x * z + y * w),
                        2.0 * (x * y + z * w),
                        1.0 - 2.0 * (x * x + z * z),
                        2.0 * (y * z - x * w),
                        2.0 * (x * z - y * w),
                        2.0 * (y * z + x * w),
                        1.0 - 2.0 * (x * x + y * y),
                    ],
                )
            }
            GroupModel::Gl(n) => loop {
                let g: DMatrix<f64> = DMatrix::identity(*n, *n)
                    + DMatrix::from_fn(*n, *n, |_, _| rng.random_range(-0.5..0.5_f64));
                if g.determinant().abs() > 0.1 {
                    break g;
                }
            },
        }
    }
}
