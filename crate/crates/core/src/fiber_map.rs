//! Invertible maps between two fibres.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bundle::{DistancePolicy, Fiber, FiberElement, FiberKind, Payload};
use crate::error::{Error, Result};

type PayloadFn = Arc<dyn Fn(&Payload) -> Result<Payload> + Send + Sync>;

/// How a [`FiberMap`] acts on payloads.
#[derive(Clone)]
pub enum Action {
    Identity,
    /// `y ↦ linear · y + offset` on vector payloads.
    Affine { linear: DMatrix<f64>, offset: DVector<f64> },
    /// `g ↦ left · g · right` on group payloads.
    TwoSided { left: DMatrix<f64>, right: DMatrix<f64> },
    /// `i ↦ table[i]` on finite fibres.
    Permutation(Vec<usize>),
    /// Arbitrary payload bijection given with its inverse.
    Custom { forward: PayloadFn, backward: PayloadFn },
}

impl fmt::Debug for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Identity => write!(f, "Identity"),
            Action::Affine { linear, offset } => {
                f.debug_struct("Affine").field("linear", linear).field("offset", offset).finish()
            }
            Action::TwoSided { left, right } => {
                f.debug_struct("TwoSided").field("left", left).field("right", right).finish()
            }
            Action::Permutation(p) => f.debug_tuple("Permutation").field(p).finish(),
            Action::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl Action {
    pub fn linear(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        Action::Affine { linear: m, offset: DVector::zeros(n) }
    }

    pub fn translation(offset: DVector<f64>) -> Self {
        let n = offset.len();
        Action::Affine { linear: DMatrix::identity(n, n), offset }
    }

    pub fn left_multiplication(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        Action::TwoSided { left: m, right: DMatrix::identity(n, n) }
    }

    pub fn right_multiplication(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        Action::TwoSided { left: DMatrix::identity(n, n), right: m }
    }

    pub fn custom<F, B>(forward: F, backward: B) -> Self
    where
        F: Fn(&Payload) -> Result<Payload> + Send + Sync + 'static,
        B: Fn(&Payload) -> Result<Payload> + Send + Sync + 'static,
    {
        Action::Custom { forward: Arc::new(forward), backward: Arc::new(backward) }
    }

    fn apply(&self, p: &Payload) -> Result<Payload> {
        match (self, p) {
            (Action::Identity, _) => Ok(p.clone()),
            (Action::Affine { linear, offset }, Payload::Vector(v)) => Ok(Payload::Vector(linear * v + offset)),
            (Action::TwoSided { left, right }, Payload::Group(g)) => Ok(Payload::Group(left * g * right)),
            (Action::Permutation(table), Payload::Label(i)) => table
                .get(*i)
                .map(|j| Payload::Label(*j))
                .ok_or_else(|| Error::Payload(format!("label {i} outside permutation of size {}", table.len()))),
            (Action::Custom { forward, .. }, _) => forward(p),
            (a, p) => Err(Error::Payload(format!("{} payload cannot be acted on by {a:?}", p.kind_name()))),
        }
    }

    fn inverse(&self) -> Result<Action> {
        Ok(match self {
            Action::Identity => Action::Identity,
            Action::Affine { linear, offset } => {
                let inv = linear
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::Degenerate("affine fibre map is not invertible".into()))?;
                let offset = -(&inv * offset);
                Action::Affine { linear: inv, offset }
            }
            Action::TwoSided { left, right } => {
                let l = left.clone().try_inverse();
                let r = right.clone().try_inverse();
                match (l, r) {
                    (Some(left), Some(right)) => Action::TwoSided { left, right },
                    _ => return Err(Error::Degenerate("group fibre map is not invertible".into())),
                }
            }
            Action::Permutation(table) => {
                let mut inv = vec![0; table.len()];
                for (i, &j) in table.iter().enumerate() {
                    inv[j] = i;
                }
                Action::Permutation(inv)
            }
            Action::Custom { forward, backward } => {
                Action::Custom { forward: Arc::clone(backward), backward: Arc::clone(forward) }
            }
        })
    }

    /// `next ∘ self`.
    fn then(&self, next: &Action) -> Action {
        match (self, next) {
            (Action::Identity, a) | (a, Action::Identity) => a.clone(),
            (Action::Affine { linear: m1, offset: b1 }, Action::Affine { linear: m2, offset: b2 }) => {
                Action::Affine { linear: m2 * m1, offset: m2 * b1 + b2 }
            }
            (Action::TwoSided { left: l1, right: r1 }, Action::TwoSided { left: l2, right: r2 }) => {
                Action::TwoSided { left: l2 * l1, right: r1 * r2 }
            }
            (Action::Permutation(p1), Action::Permutation(p2)) if p1.len() == p2.len() => {
                Action::Permutation(p1.iter().map(|&i| p2[i]).collect())
            }
            (first, second) => {
                let (f1, f2) = (first.clone(), second.clone());
                let (b1, b2) = (first.inverse(), second.inverse());
                let backward: PayloadFn = match (b1, b2) {
                    (Ok(b1), Ok(b2)) => Arc::new(move |p: &Payload| b1.apply(&b2.apply(p)?)),
                    _ => Arc::new(|_: &Payload| Err(Error::Degenerate("composite map has no inverse".into()))),
                };
                Action::Custom { forward: Arc::new(move |p: &Payload| f2.apply(&f1.apply(p)?)), backward }
            }
        }
    }

    fn validate(&self, source: &FiberKind, target: &FiberKind) -> Result<()> {
        let bad = |msg: String| Err(Error::Model(msg));
        match (self, source, target) {
            (Action::Identity, s, t) => {
                if std::mem::discriminant(s) == std::mem::discriminant(t) {
                    Ok(())
                } else {
                    bad("identity between fibres of different kinds".into())
                }
            }
            (Action::Affine { linear, offset }, _, _) => {
                let (k_in, k_out) = (vector_rank(source), vector_rank(target));
                match (k_in, k_out) {
                    (Some(a), Some(b)) if linear.ncols() == a && linear.nrows() == b && offset.len() == b => Ok(()),
                    _ => bad(format!("affine map of shape {}x{} does not fit the fibres", linear.nrows(), linear.ncols())),
                }
            }
            (Action::TwoSided { left, right }, FiberKind::Group { group: g1 }, FiberKind::Group { group: g2 }) => {
                let n = g1.matrix_size();
                if g1 == g2 && left.shape() == (n, n) && right.shape() == (n, n) {
                    Ok(())
                } else {
                    bad("two-sided multiplication does not fit the group fibres".into())
                }
            }
            (Action::Permutation(table), FiberKind::Finite { size: a }, FiberKind::Finite { size: b }) => {
                let mut seen = vec![false; *b];
                if a != b || table.len() != *a {
                    return bad(format!("permutation of length {} between fibres of size {a} and {b}", table.len()));
                }
                for &j in table {
                    if j >= *b || seen[j] {
                        return bad("permutation table is not a bijection".into());
                    }
                    seen[j] = true;
                }
                Ok(())
            }
            (Action::Custom { .. }, _, _) => Ok(()),
            (a, _, _) => bad(format!("{a:?} does not fit the fibre kinds")),
        }
    }
}

fn vector_rank(kind: &FiberKind) -> Option<usize> {
    match kind {
        FiberKind::Vector { rank } => Some(*rank),
        FiberKind::Foliation(f) => Some(f.rank()),
        _ => None,
    }
}

/// A bijection from the fibre over one base point to the fibre over another.
#[derive(Clone, Debug)]
pub struct FiberMap {
    source: Fiber,
    target: Fiber,
    action: Action,
}

impl FiberMap {
    pub fn new(source: Fiber, target: Fiber, action: Action) -> Result<Self> {
        action.validate(source.kind(), target.kind())?;
        Ok(FiberMap { source, target, action })
    }

    pub fn identity(fiber: Fiber) -> Self {
        FiberMap { source: fiber.clone(), target: fiber, action: Action::Identity }
    }

    pub fn source(&self) -> &Fiber {
        &self.source
    }

    pub fn target(&self) -> &Fiber {
        &self.target
    }

    pub fn action(&self) -> &Action {
        &self.action
    }

    /// Maps `e`, which must lie in the source fibre.
    pub fn apply(&self, e: &FiberElement) -> Result<FiberElement> {
        self.source.check(e)?;
        let payload = self.apply_payload(e.payload())?;
        Ok(FiberElement::new_unchecked(self.target.base().clone(), payload))
    }

    /// Maps a payload without checking which fibre it came from.
    pub fn apply_payload(&self, p: &Payload) -> Result<Payload> {
        let out = self.action.apply(p)?;
        Ok(match (out, self.target.kind()) {
            (Payload::Group(g), FiberKind::Group { group }) => Payload::Group(group.maybe_renormalize(g)),
            (out, _) => out,
        })
    }

    pub fn inverse(&self) -> Result<FiberMap> {
        Ok(FiberMap { source: self.target.clone(), target: self.source.clone(), action: self.action.inverse()? })
    }

    /// `next ∘ self`; `next` must start where `self` ends.
    pub fn then(&self, next: &FiberMap) -> Result<FiberMap> {
        if !self.target.same_fiber(&next.source) {
            return Err(Error::Composition(format!(
                "map into the fibre over {:?} cannot be followed by a map out of the fibre over {:?}",
                self.target.base().as_slice(),
                next.source.base().as_slice()
            )));
        }
        Ok(FiberMap { source: self.source.clone(), target: next.target.clone(), action: self.action.then(&next.action) })
    }

    /// `outer ∘ inner`.
    pub fn compose(outer: &FiberMap, inner: &FiberMap) -> Result<FiberMap> {
        inner.then(outer)
    }

    /// Largest distance between `self(u)` and `other(u)` over `samples`.
    pub fn max_deviation(&self, other: &FiberMap, samples: &[FiberElement], policy: DistancePolicy) -> f64 {
        samples
            .iter()
            .map(|u| match (self.apply(u), other.apply(u)) {
                (Ok(a), Ok(b)) => self.target.distance(&a, &b, policy),
                _ => f64::INFINITY,
            })
            .fold(0.0, nan_max)
    }

    /// Largest distance between `self(u)` and `u` (with bases ignored) over `samples`.
    pub fn identity_deviation(&self, samples: &[FiberElement], policy: DistancePolicy) -> f64 {
        samples
            .iter()
            .map(|u| match self.apply(u) {
                Ok(v) => {
                    let moved = FiberElement::new_unchecked(u.base().clone(), v.into_payload());
                    self.source.distance(&moved, u, policy)
                }
                Err(_) => f64::INFINITY,
            })
            .fold(0.0, nan_max)
    }

    /// `table[i] = j` when label `i` maps to label `j` (finite fibres only).
    pub fn permutation_table(&self) -> Option<Vec<usize>> {
        let elements = self.source.enumerate()?;
        elements.iter().map(|e| self.apply(e).ok()?.payload().as_label()).collect()
    }

    /// Matrix of a linear vector map, or of left multiplication on a group fibre.
    pub fn matrix(&self) -> Option<DMatrix<f64>> {
        match &self.action {
            Action::Affine { linear, offset } if offset.iter().all(|c| *c == 0.0) => Some(linear.clone()),
            Action::TwoSided { left, right } if right.is_identity(0.0) => Some(left.clone()),
            Action::Identity => match self.source.kind() {
                FiberKind::Vector { rank } => Some(DMatrix::identity(*rank, *rank)),
                FiberKind::Group { group } => Some(group.identity()),
                _ => None,
            },
            _ => None,
        }
    }
}

/// `max` that lets NaN poison the result, so broken residuals never pass.
pub(crate) fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}
