//! The truncated Riesz kernel `ψ_s(x) = min(1, |x|^{-s})`, its indicator
//! limit `ψ_∞`, and the potentials and energies built from it.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pointset::{distance, norm, PointCloud};

/// Largest cloud for which a dense kernel matrix is built.
pub const MAX_KERNEL_POINTS: usize = 20_000;

/// Order `s` of the kernel: a positive real or infinity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelOrderRepr", into = "KernelOrderRepr")]
pub enum KernelOrder {
    Finite(f64),
    Infinity,
}

impl KernelOrder {
    pub fn finite(s: f64) -> Result<Self> {
        if s > 0.0 && s.is_finite() {
            Ok(KernelOrder::Finite(s))
        } else if s == f64::INFINITY {
            Ok(KernelOrder::Infinity)
        } else {
            Err(invalid(format!("kernel order {s} must be positive")))
        }
    }

    /// `s` as a float, `f64::INFINITY` for the indicator kernel.
    pub fn as_f64(self) -> f64 {
        match self {
            KernelOrder::Finite(s) => s,
            KernelOrder::Infinity => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, KernelOrder::Finite(_))
    }

    /// Kernel value at a point of Euclidean norm `t`.
    #[inline]
    pub fn eval_norm(self, t: f64) -> f64 {
        match self {
            KernelOrder::Finite(s) => {
                if t <= 1.0 {
                    1.0
                } else {
                    t.powf(-s)
                }
            }
            KernelOrder::Infinity => {
                if t <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for KernelOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelOrder::Finite(s) => write!(f, "{s}"),
            KernelOrder::Infinity => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for KernelOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(KernelOrder::Infinity),
            other => {
                let v: f64 = other.parse().map_err(|_| invalid(format!("bad kernel order {s:?}")))?;
                KernelOrder::finite(v)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KernelOrderRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<KernelOrderRepr> for KernelOrder {
    type Error = Error;

    fn try_from(r: KernelOrderRepr) -> Result<Self> {
        match r {
            KernelOrderRepr::Number(s) => KernelOrder::finite(s),
            KernelOrderRepr::Text(t) => t.parse(),
        }
    }
}

impl From<KernelOrder> for KernelOrderRepr {
    fn from(o: KernelOrder) -> Self {
        match o {
            KernelOrder::Finite(s) => KernelOrderRepr::Number(s),
            KernelOrder::Infinity => KernelOrderRepr::Text("inf".into()),
        }
    }
}

/// `ψ_s(x)`; equals 1 on the closed unit ball for every order.
pub fn psi(order: KernelOrder, x: &[f64]) -> f64 {
    order.eval_norm(norm(x))
}

/// A finitely supported probability measure.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMeasure {
    support: PointCloud,
    weights: Vec<f64>,
}

impl WeightedMeasure {
    /// Weights must be nonnegative and sum to one within `1e-10`.
    pub fn new(support: PointCloud, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != support.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} weights for {} support points",
                weights.len(),
                support.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightedMeasure { support, weights })
    }

    pub fn uniform(support: PointCloud) -> Self {
        let k = support.len();
        WeightedMeasure {
            support,
            weights: vec![1.0 / k as f64; k],
        }
    }

    /// Normalizes nonnegative masses to total one.
    pub fn from_masses(support: PointCloud, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidMeasure("total mass must be positive".into()));
        }
        Self::new(support, masses.into_iter().map(|m| m / total).collect())
    }

    pub fn support(&self) -> &PointCloud {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices carrying positive mass.
    pub fn charged(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i)
    }

    /// Drops zero-weight atoms.
    pub fn pruned(&self) -> Result<Self> {
        let keep: Vec<usize> = self.charged().collect();
        let support = self.support.subset(&keep)?;
        let weights = keep.iter().map(|&i| self.weights[i]).collect();
        Self::new(support, weights)
    }
}

fn check_scale(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("scale r = {r} must be positive")))
    }
}

/// `F_s^μ(x, r) = Σ_j w_j ψ_s((x − y_j)/r)`.
pub fn potential(order: KernelOrder, mu: &WeightedMeasure, x: &[f64], r: f64) -> Result<f64> {
    check_scale(r)?;
    if x.len() != mu.support.dim() {
        return Err(invalid("point dimension does not match the measure"));
    }
    Ok(potential_unchecked(order, mu, x, r))
}

fn potential_unchecked(order: KernelOrder, mu: &WeightedMeasure, x: &[f64], r: f64) -> f64 {
    mu.support
        .iter()
        .zip(&mu.weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(y, w)| w * order.eval_norm(distance(x, y) / r))
        .sum()
}

/// Potentials `F_s^μ(x_i, r)` at every support point, in support order.
pub fn support_potentials(order: KernelOrder, mu: &WeightedMeasure, r: f64) -> Result<Vec<f64>> {
    check_scale(r)?;
    Ok((0..mu.support.len())
        .into_par_iter()
        .map(|i| potential_unchecked(order, mu, mu.support.point(i), r))
        .collect())
}

/// `I_s(r, μ) = ∫ F_s^μ(x, r) μ(dx)`.
pub fn functional_i(order: KernelOrder, mu: &WeightedMeasure, r: f64) -> Result<f64> {
    let loads = support_potentials(order, mu, r)?;
    Ok(loads.iter().zip(&mu.weights).map(|(f, w)| f * w).sum())
}

/// `J_s(r, μ)`: the largest potential over the support of `μ`.
pub fn functional_j(order: KernelOrder, mu: &WeightedMeasure, r: f64) -> Result<f64> {
    let loads = support_potentials(order, mu, r)?;
    Ok(mu.charged().map(|i| loads[i]).fold(f64::NEG_INFINITY, f64::max))
}

/// Dense symmetric matrix `ψ_s((x_i − x_j)/r)` over a cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    size: usize,
    entries: Vec<f64>,
    scale: f64,
    order: KernelOrder,
}

impl KernelMatrix {
    /// Wraps explicit entries (row-major), checking the kernel-matrix invariants.
    pub fn from_entries(size: usize, entries: Vec<f64>, scale: f64, order: KernelOrder) -> Result<Self> {
        if size == 0 || entries.len() != size * size {
            return Err(invalid("kernel matrix must be square and nonempty"));
        }
        for i in 0..size {
            if entries[i * size + i] != 1.0 {
                return Err(invalid("kernel matrix diagonal must be 1"));
            }
            for j in 0..size {
                let v = entries[i * size + j];
                if !(0.0..=1.0).contains(&v) || v != entries[j * size + i] {
                    return Err(invalid("kernel matrix must be symmetric with entries in [0, 1]"));
                }
            }
        }
        Ok(KernelMatrix {
            size,
            entries,
            scale,
            order,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn order(&self) -> KernelOrder {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    /// `K w`.
    pub fn mul_vec(&self, w: &[f64]) -> Vec<f64> {
        self.entries
            .chunks_exact(self.size)
            .map(|row| row.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `wᵀ K w`.
    pub fn quad(&self, w: &[f64]) -> f64 {
        self.mul_vec(w).iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

/// Builds `K_ij = ψ_s((x_i − x_j)/r)`. Rows are filled in parallel; each
/// entry is computed independently, so the result does not depend on
/// scheduling.
pub fn kernel_matrix(points: &PointCloud, r: f64, order: KernelOrder) -> Result<KernelMatrix> {
    check_scale(r)?;
    let k = points.len();
    if k > MAX_KERNEL_POINTS {
        return Err(Error::TooManyPoints {
            count: k as u128,
            cap: MAX_KERNEL_POINTS,
        });
    }
    let mut entries = vec![0.0; k * k];
    entries.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let xi = points.point(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j {
                1.0
            } else {
                order.eval_norm(distance(xi, points.point(j)) / r)
            };
        }
    });
    Ok(KernelMatrix {
        size: k,
        entries,
        scale: r,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> PointCloud {
        PointCloud::new(1, xs.to_vec(), 1e-3, "line").unwrap()
    }

    #[test]
    fn psi_values() {
        for s in [0.1, 1.0, 7.5] {
            assert_eq!(psi(KernelOrder::Finite(s), &[0.0, 0.0]), 1.0);
        }
        assert_eq!(psi(KernelOrder::Finite(1.0), &[2.0]), 0.5);
        assert_eq!(psi(KernelOrder::Finite(2.0), &[0.5]), 1.0);
        assert_eq!(psi(KernelOrder::Infinity, &[1.0]), 1.0);
        assert_eq!(psi(KernelOrder::Infinity, &[1.0001]), 0.0);
        assert_eq!(psi(KernelOrder::Finite(1.0), &[3.0, 4.0]), 0.2);
    }

    #[test]
    fn order_parsing() {
        assert_eq!("inf".parse::<KernelOrder>().unwrap(), KernelOrder::Infinity);
        assert_eq!("0.5".parse::<KernelOrder>().unwrap(), KernelOrder::Finite(0.5));
        assert!("-1".parse::<KernelOrder>().is_err());
        assert!(KernelOrder::finite(0.0).is_err());
        let json = serde_json::to_string(&vec![KernelOrder::Finite(2.0), KernelOrder::Infinity]).unwrap();
        assert_eq!(json, r#"[2.0,"inf"]"#);
        let back: Vec<KernelOrder> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![KernelOrder::Finite(2.0), KernelOrder::Infinity]);
    }

    #[test]
    fn potential_examples() {
        let s1 = KernelOrder::Finite(1.0);
        let dirac = WeightedMeasure::uniform(line(&[0.0]));
        for (x, r) in [(0.3, 0.1), (2.0, 1.0), (-5.0, 0.5)] {
            assert_eq!(potential(s1, &dirac, &[x], r).unwrap(), psi(s1, &[x / r]));
        }
        let two = WeightedMeasure::uniform(line(&[0.0, 1.0]));
        assert_abs_diff_eq!(potential(s1, &two, &[0.0], 0.5).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(potential(s1, &two, &[1.0], 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(potential(s1, &two, &[0.0], 0.0).is_err());
    }

    #[test]
    fn functional_examples() {
        let s1 = KernelOrder::Finite(1.0);
        let dirac = WeightedMeasure::uniform(line(&[0.4]));
        assert_eq!(functional_i(s1, &dirac, 0.1).unwrap(), 1.0);
        assert_eq!(functional_j(s1, &dirac, 0.1).unwrap(), 1.0);

        let two = WeightedMeasure::uniform(line(&[0.0, 1.0]));
        assert_abs_diff_eq!(functional_i(s1, &two, 0.5).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(functional_j(s1, &two, 0.5).unwrap(), 0.75, epsilon = 1e-15);

        let three = WeightedMeasure::uniform(line(&[0.0, 1.0, 2.0]));
        let loads = support_potentials(s1, &three, 0.5).unwrap();
        assert!(loads[1] > loads[0] && loads[1] > loads[2]);
        assert_abs_diff_eq!(functional_j(s1, &three, 0.5).unwrap(), 2.0 / 3.0, epsilon = 1e-15);

        // widely separated atoms at a tiny scale: the matrix is the identity
        let far = WeightedMeasure::uniform(line(&[0.0, 10.0, 20.0, 30.0]));
        assert_abs_diff_eq!(functional_i(s1, &far, 1e-9).unwrap(), 0.25, epsilon = 1e-9);
    }

    #[test]
    fn j_ignores_uncharged_points() {
        let s1 = KernelOrder::Finite(1.0);
        let mu = WeightedMeasure::new(line(&[0.0, 1.0, 2.0]), vec![0.5, 0.0, 0.5]).unwrap();
        // the middle point would carry load 1 but is not in the support
        assert_abs_diff_eq!(functional_j(s1, &mu, 0.5).unwrap(), 0.5 + 0.5 * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn kernel_matrix_examples() {
        let m = kernel_matrix(&line(&[0.0, 1.0]), 1.0, KernelOrder::Finite(3.0)).unwrap();
        assert_eq!(m.row(0), &[1.0, 1.0]);
        let m = kernel_matrix(&line(&[0.0, 2.0]), 1.0, KernelOrder::Finite(1.0)).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.5]);
        let m = kernel_matrix(&line(&[0.0, 1.0, 2.0]), 1.0, KernelOrder::Finite(2.0)).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(0, 2), 0.25);
        assert_eq!(m.get(2, 1), 1.0);
        assert!(kernel_matrix(&line(&[0.0]), -1.0, KernelOrder::Infinity).is_err());
    }

    #[test]
    fn measure_validation() {
        assert!(WeightedMeasure::new(line(&[0.0, 1.0]), vec![0.5, 0.6]).is_err());
        assert!(WeightedMeasure::new(line(&[0.0, 1.0]), vec![1.5, -0.5]).is_err());
        assert!(WeightedMeasure::new(line(&[0.0, 1.0]), vec![1.0]).is_err());
        let mu = WeightedMeasure::new(line(&[0.0, 1.0]), vec![1.0, 0.0]).unwrap();
        assert_eq!(mu.pruned().unwrap().support().len(), 1);
    }

    fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..12).prop_filter_map("distinct", |pts| {
            let coords = pts.into_iter().flat_map(|(a, b)| [a, b]).collect();
            PointCloud::new(2, coords, 1e-3, "p").ok()
        })
    }

    proptest! {
        #[test]
        fn matrix_invariants(cloud in cloud_strategy(), r in 0.01..5.0f64, s in 0.1..4.0f64) {
            let k = kernel_matrix(&cloud, r, KernelOrder::Finite(s)).unwrap();
            for i in 0..k.size() {
                prop_assert_eq!(k.get(i, i), 1.0);
                for j in 0..k.size() {
                    prop_assert_eq!(k.get(i, j), k.get(j, i));
                    prop_assert!(k.get(i, j) > 0.0 && k.get(i, j) <= 1.0);
                }
            }
        }

        #[test]
        fn decreasing_in_order(t in 1.0001..100.0f64, s in 0.1..5.0f64, ds in 0.01..3.0f64) {
            prop_assert!(KernelOrder::Finite(s + ds).eval_norm(t) < KernelOrder::Finite(s).eval_norm(t));
        }

        #[test]
        fn functionals_monotone_in_scale(cloud in cloud_strategy(), r in 0.01..3.0f64, f in 1.0..4.0f64, s in 0.1..4.0f64) {
            let mu = WeightedMeasure::uniform(cloud);
            for order in [KernelOrder::Finite(s), KernelOrder::Infinity] {
                let (i0, i1) = (functional_i(order, &mu, r).unwrap(), functional_i(order, &mu, r * f).unwrap());
                let (j0, j1) = (functional_j(order, &mu, r).unwrap(), functional_j(order, &mu, r * f).unwrap());
                prop_assert!(i1 >= i0 - 1e-15 && j1 >= j0 - 1e-15);
                prop_assert!(i0 <= j0 + 1e-15);
            }
        }

        #[test]
        fn potential_is_convex_combination(cloud in cloud_strategy(), x in -5.0..5.0f64, y in -5.0..5.0f64, r in 0.01..3.0f64) {
            let order = KernelOrder::Finite(1.5);
            let mu = WeightedMeasure::uniform(cloud.clone());
            let p = [x, y];
            let vals: Vec<f64> = cloud.iter().map(|q| psi(order, &[(x - q[0]) / r, (y - q[1]) / r])).collect();
            let f = potential(order, &mu, &p, r).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(0.0, f64::max);
            prop_assert!(f >= lo - 1e-12 && f <= hi + 1e-12);
        }

        #[test]
        fn scale_and_translation_invariance(cloud in cloud_strategy(), r in 0.05..3.0f64, c in 0.1..10.0f64, t in -3.0..3.0f64) {
            let order = KernelOrder::Finite(0.7);
            let base = kernel_matrix(&cloud, r, order).unwrap();
            let moved = kernel_matrix(&cloud.affine(c, &[t, -t]).unwrap(), c * r, order).unwrap();
            for i in 0..base.size() {
                for j in 0..base.size() {
                    prop_assert!((base.get(i, j) - moved.get(i, j)).abs() <= 1e-12);
                }
            }
            // powers of two scale exactly
            let doubled = kernel_matrix(&cloud.affine(4.0, &[0.0, 0.0]).unwrap(), 4.0 * r, order).unwrap();
            for i in 0..base.size() {
                prop_assert_eq!(doubled.row(i), base.row(i));
            }
        }
    }
}
