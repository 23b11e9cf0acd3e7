//! Finite point clouds approximating self-similar sets in `R^N`.
//!
//! Clouds are built from construction points (left endpoints of the
//! level-`m` pieces), never from random samples, so the resolution of a
//! cloud is known exactly and generation is bit-for-bit reproducible.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Hard cap on the number of points any generator may produce.
pub const MAX_POINTS: usize = 10_000_000;

/// Two points closer than this (Euclidean) are treated as the same point.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Deepest construction level accepted by the Cantor generator.
pub const MAX_CANTOR_LEVEL: u32 = 20;

/// A point in `R^N` with finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid("a point needs at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("point coordinates must be finite"));
        }
        Ok(Point(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Point(vec![0.0; dim.max(1)])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// An ordered, duplicate-free set of points sharing one ambient dimension.
///
/// Coordinates are stored row-major; `point(i)` borrows row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    resolution: f64,
    label: String,
}

impl PointCloud {
    /// Builds a cloud and checks every invariant: nonempty, finite,
    /// positive resolution, and no two points within [`DUPLICATE_TOL`].
    pub fn new(dim: usize, coords: Vec<f64>, resolution: f64, label: impl Into<String>) -> Result<Self> {
        let cloud = Self::unchecked(dim, coords, resolution, label)?;
        if let Some((i, j)) = cloud.first_duplicate() {
            return Err(Error::InvalidCloud(format!(
                "points {i} and {j} coincide within {DUPLICATE_TOL:e}"
            )));
        }
        Ok(cloud)
    }

    /// Builds a cloud, dropping every point that duplicates an earlier one.
    pub fn merged(dim: usize, coords: Vec<f64>, resolution: f64, label: impl Into<String>) -> Result<Self> {
        let mut cloud = Self::unchecked(dim, coords, resolution, label)?;
        let keep = cloud.first_occurrences();
        if keep.len() != cloud.len() {
            let mut out = Vec::with_capacity(keep.len() * dim);
            for i in keep {
                out.extend_from_slice(cloud.point(i));
            }
            cloud.coords = out;
        }
        Ok(cloud)
    }

    pub fn from_points(points: &[Point], resolution: f64, label: impl Into<String>) -> Result<Self> {
        let dim = points.first().map(Point::dim).ok_or_else(|| Error::InvalidCloud("empty cloud".into()))?;
        if points.iter().any(|p| p.dim() != dim) {
            return Err(Error::InvalidCloud("points have mixed dimensions".into()));
        }
        let coords = points.iter().flat_map(|p| p.coords().iter().copied()).collect();
        Self::new(dim, coords, resolution, label)
    }

    fn unchecked(dim: usize, coords: Vec<f64>, resolution: f64, label: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCloud("ambient dimension must be positive".into()));
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::InvalidCloud(format!(
                "{} coordinates do not form a nonempty set of {dim}-dimensional points",
                coords.len()
            )));
        }
        if coords.len() / dim > MAX_POINTS {
            return Err(Error::TooManyPoints {
                count: (coords.len() / dim) as u128,
                cap: MAX_POINTS,
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidCloud("non-finite coordinate".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidCloud(format!("resolution {resolution} must be positive")));
        }
        Ok(PointCloud {
            dim,
            coords,
            resolution,
            label: label.into(),
        })
    }

    // Indices sorted by first coordinate; any near-duplicate pair is within
    // DUPLICATE_TOL in that coordinate, so a forward window scan finds all.
    fn sorted_by_first(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.point(a)[0].total_cmp(&self.point(b)[0]).then(a.cmp(&b)));
        order
    }

    fn first_duplicate(&self) -> Option<(usize, usize)> {
        let order = self.sorted_by_first();
        for (pos, &i) in order.iter().enumerate() {
            let xi = self.point(i);
            for &j in &order[pos + 1..] {
                let xj = self.point(j);
                if xj[0] - xi[0] > DUPLICATE_TOL {
                    break;
                }
                if distance(xi, xj) <= DUPLICATE_TOL {
                    return Some((i.min(j), i.max(j)));
                }
            }
        }
        None
    }

    fn first_occurrences(&self) -> Vec<usize> {
        let order = self.sorted_by_first();
        let mut dropped = vec![false; self.len()];
        for (pos, &i) in order.iter().enumerate() {
            if dropped[i] {
                continue;
            }
            let xi = self.point(i);
            for &j in &order[pos + 1..] {
                let xj = self.point(j);
                if xj[0] - xi[0] > DUPLICATE_TOL {
                    break;
                }
                if !dropped[j] && distance(xi, xj) <= DUPLICATE_TOL {
                    // keep the earlier index
                    if j > i {
                        dropped[j] = true;
                    } else {
                        dropped[i] = true;
                        break;
                    }
                }
            }
        }
        (0..self.len()).filter(|&i| !dropped[i]).collect()
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_points(&self) -> Vec<Point> {
        self.iter().map(|p| Point(p.to_vec())).collect()
    }

    /// Subcloud made of the listed indices, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(invalid(format!("index {i} out of range for {} points", self.len())));
            }
            coords.extend_from_slice(self.point(i));
        }
        Self::merged(self.dim, coords, self.resolution, self.label.clone())
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        if self.dim == 1 {
            let (lo, hi) = self
                .coords
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            return hi - lo;
        }
        let mut best: f64 = 0.0;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                best = best.max(distance(self.point(i), self.point(j)));
            }
        }
        best
    }

    /// Image under `x ↦ factor·x + shift`; resolution scales with `factor`.
    pub fn affine(&self, factor: f64, shift: &[f64]) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(invalid("scale factor must be positive"));
        }
        if shift.len() != self.dim {
            return Err(invalid("shift dimension mismatch"));
        }
        let coords = self
            .iter()
            .flat_map(|p| p.iter().zip(shift).map(move |(x, t)| factor * x + t))
            .collect();
        Self::new(self.dim, coords, self.resolution * factor, self.label.clone())
    }

    /// One point per row, coordinates written with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for p in self.iter() {
            w.write_record(p.iter().map(|x| format!("{x:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, resolution: f64, label: impl Into<String>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut coords = Vec::new();
        let mut dim = 0;
        for record in r.records() {
            let record = record?;
            if dim == 0 {
                dim = record.len();
            } else if record.len() != dim {
                return Err(Error::InvalidCloud("rows have differing lengths".into()));
            }
            for field in record.iter() {
                let x: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidCloud(format!("cannot parse coordinate {field:?}")))?;
                coords.push(x);
            }
        }
        Self::new(dim, coords, resolution, label)
    }

    pub fn envelope(&self) -> CloudEnvelope {
        CloudEnvelope {
            label: self.label.clone(),
            dim: self.dim,
            resolution: self.resolution,
            count: self.len(),
        }
    }
}

/// JSON metadata written next to a cloud's CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudEnvelope {
    pub label: String,
    #[serde(rename = "N")]
    pub dim: usize,
    pub resolution: f64,
    pub count: usize,
}

/// A similarity `x ↦ ratio·x + translation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub ratio: f64,
    pub translation: Point,
}

impl Similarity {
    fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(x.iter().zip(self.translation.coords()).map(|(xi, ti)| self.ratio * xi + ti));
    }
}

/// Iterated function system of similarities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IfsSpec {
    dim: usize,
    maps: Vec<Similarity>,
    /// Caller's assertion that the open-set condition holds; not verified.
    pub open_set_condition: bool,
}

impl IfsSpec {
    pub fn new(dim: usize, maps: Vec<Similarity>, open_set_condition: bool) -> Result<Self> {
        if maps.len() < 2 {
            return Err(invalid("an IFS needs at least two maps"));
        }
        for m in &maps {
            if !(m.ratio > 0.0 && m.ratio < 1.0) {
                return Err(invalid(format!("contraction ratio {} outside (0, 1)", m.ratio)));
            }
            if m.translation.dim() != dim {
                return Err(invalid("translation dimension does not match the IFS"));
            }
        }
        Ok(IfsSpec {
            dim,
            maps,
            open_set_condition,
        })
    }

    /// The two-map Cantor system `x ↦ ρx`, `x ↦ ρx + 1 − ρ`.
    pub fn cantor(ratio: f64) -> Result<Self> {
        let maps = vec![
            Similarity {
                ratio,
                translation: Point(vec![0.0]),
            },
            Similarity {
                ratio,
                translation: Point(vec![1.0 - ratio]),
            },
        ];
        Self::new(1, maps, ratio <= 0.5)
    }

    /// Planar dust: four maps of ratio `ratio` onto the corners of the unit square.
    pub fn corner_dust(ratio: f64) -> Result<Self> {
        let t = 1.0 - ratio;
        let maps = [(0.0, 0.0), (t, 0.0), (0.0, t), (t, t)]
            .into_iter()
            .map(|(a, b)| Similarity {
                ratio,
                translation: Point(vec![a, b]),
            })
            .collect();
        Self::new(2, maps, ratio <= 0.5)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn maps(&self) -> &[Similarity] {
        &self.maps
    }

    /// Similarity dimension `D` solving `Σ ratio_i^D = 1` (bisection).
    pub fn similarity_dimension(&self) -> f64 {
        let f = |d: f64| self.maps.iter().map(|m| m.ratio.powf(d)).sum::<f64>() - 1.0;
        let (mut lo, mut hi) = (0.0, 64.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn check_count(count: u128) -> Result<usize> {
    if count > MAX_POINTS as u128 {
        Err(Error::TooManyPoints {
            count,
            cap: MAX_POINTS,
        })
    } else {
        Ok(count as usize)
    }
}

/// Left endpoints of the `2^level` construction intervals of the Cantor set
/// with contraction `ratio`, in increasing order.
pub fn gen_cantor(ratio: f64, level: u32) -> Result<PointCloud> {
    if !(ratio > 0.0 && ratio <= 0.5) {
        return Err(invalid(format!("Cantor ratio {ratio} outside (0, 1/2]")));
    }
    if level > MAX_CANTOR_LEVEL {
        return Err(invalid(format!("level {level} exceeds {MAX_CANTOR_LEVEL}")));
    }
    let count = check_count(1u128 << level)?;
    let gap = 1.0 - ratio;
    let steps: Vec<f64> = (0..level).map(|i| gap * ratio.powi(i as i32)).collect();
    let coords = (0..count)
        .map(|index| {
            // bit (level-1-i) of the index selects the right piece at depth i
            steps
                .iter()
                .enumerate()
                .filter(|(i, _)| index >> (level as usize - 1 - i) & 1 == 1)
                .map(|(_, s)| s)
                .sum()
        })
        .collect();
    PointCloud::new(1, coords, ratio.powi(level as i32), format!("cantor(ratio={ratio}, level={level})"))
}

/// Images of the origin under all length-`level` compositions of the maps.
pub fn gen_ifs(spec: &IfsSpec, level: u32) -> Result<PointCloud> {
    let m = spec.maps.len() as u128;
    let count = m
        .checked_pow(level)
        .map_or(Err(Error::TooManyPoints { count: u128::MAX, cap: MAX_POINTS }), check_count)?;
    let dim = spec.dim;
    let mut points = vec![0.0; dim];
    for _ in 0..level {
        let mut next = Vec::with_capacity(points.len() * spec.maps.len());
        for map in &spec.maps {
            for p in points.chunks_exact(dim) {
                map.apply_into(p, &mut next);
            }
        }
        points = next;
    }
    debug_assert_eq!(points.len(), count * dim);
    let max_ratio = spec.maps.iter().map(|m| m.ratio).fold(0.0, f64::max);
    PointCloud::merged(
        dim,
        points,
        max_ratio.powi(level as i32),
        format!("ifs({} maps, level={level})", spec.maps.len()),
    )
}

/// Cartesian product; resolution is the coarser of the two.
pub fn product(a: &PointCloud, b: &PointCloud) -> Result<PointCloud> {
    check_count(a.len() as u128 * b.len() as u128)?;
    let dim = a.dim() + b.dim();
    let mut coords = Vec::with_capacity(a.len() * b.len() * dim);
    for p in a.iter() {
        for q in b.iter() {
            coords.extend_from_slice(p);
            coords.extend_from_slice(q);
        }
    }
    PointCloud::new(
        dim,
        coords,
        a.resolution().max(b.resolution()),
        format!("{} x {}", a.label(), b.label()),
    )
}

/// Orthogonal projection onto the line spanned by a unit `direction`.
///
/// The result is sorted ascending with duplicates merged.
pub fn project(cloud: &PointCloud, direction: &Point) -> Result<PointCloud> {
    if cloud.dim() < 2 {
        return Err(invalid("projection needs an ambient dimension of at least 2"));
    }
    if direction.dim() != cloud.dim() {
        return Err(invalid("direction dimension does not match the cloud"));
    }
    if (direction.norm() - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("direction has norm {}, expected 1", direction.norm())));
    }
    let u = direction.coords();
    let mut values: Vec<f64> = cloud
        .iter()
        .map(|p| p.iter().zip(u).map(|(x, c)| x * c).sum())
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup_by(|b, a| (*b - *a).abs() <= DUPLICATE_TOL);
    PointCloud::new(1, values, cloud.resolution(), format!("proj({}; {:?})", cloud.label(), u))
}

/// Rounds every coordinate to the nearest multiple of `spacing`.
pub fn snap_to_grid(cloud: &PointCloud, spacing: f64) -> Result<PointCloud> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid("grid spacing must be positive"));
    }
    let coords = cloud
        .coords()
        .iter()
        .map(|x| (x / spacing).round() * spacing)
        .collect();
    PointCloud::merged(cloud.dim(), coords, cloud.resolution().max(spacing), cloud.label())
}

/// Uniformly distributed unit vectors in `R^dim` (normalized Gaussians).
pub fn sample_directions(dim: usize, count: usize, seed: u64) -> Result<Vec<Point>> {
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            out.push(Point(v.into_iter().map(|x| x / n).collect()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn values(c: &PointCloud) -> Vec<f64> {
        c.coords().to_vec()
    }

    #[test]
    fn cantor_first_levels() {
        let c = gen_cantor(1.0 / 3.0, 0).unwrap();
        assert_eq!(values(&c), vec![0.0]);
        assert_eq!(c.resolution(), 1.0);

        let c = gen_cantor(1.0 / 3.0, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_abs_diff_eq!(c.point(1)[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.resolution(), 1.0 / 3.0, epsilon = 1e-15);

        let c = gen_cantor(1.0 / 3.0, 2).unwrap();
        let want = [0.0, 2.0 / 9.0, 2.0 / 3.0, 8.0 / 9.0];
        for (got, want) in values(&c).iter().zip(want) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(c.resolution(), 1.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn cantor_rejects_bad_input() {
        assert!(gen_cantor(0.6, 3).is_err());
        assert!(gen_cantor(0.0, 3).is_err());
        assert!(gen_cantor(1.0 / 3.0, 21).is_err());
    }

    #[test]
    fn ifs_counts_and_corners() {
        let three = IfsSpec::new(
            1,
            (0..3)
                .map(|i| Similarity {
                    ratio: 0.2,
                    translation: Point(vec![0.4 * i as f64]),
                })
                .collect(),
            true,
        )
        .unwrap();
        assert_eq!(gen_ifs(&three, 3).unwrap().len(), 27);

        let dust = gen_ifs(&IfsSpec::corner_dust(0.25).unwrap(), 1).unwrap();
        assert_eq!(dust.len(), 4);
        assert_eq!(dust.point(3), &[0.75, 0.75]);
        assert_abs_diff_eq!(IfsSpec::corner_dust(0.25).unwrap().similarity_dimension(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ifs_rejects_degenerate_specs() {
        let one = vec![Similarity {
            ratio: 0.5,
            translation: Point(vec![0.0]),
        }];
        assert!(IfsSpec::new(1, one, true).is_err());
        assert!(IfsSpec::cantor(1.0).is_err());
        let huge = IfsSpec::corner_dust(0.25).unwrap();
        assert!(matches!(gen_ifs(&huge, 12), Err(Error::TooManyPoints { .. })));
    }

    #[test]
    fn product_examples() {
        let a = PointCloud::new(1, vec![0.0, 1.0], 1.0, "a").unwrap();
        let b = PointCloud::new(1, vec![0.0], 0.5, "b").unwrap();
        let ab = product(&a, &b).unwrap();
        assert_eq!(ab.coords(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ab.resolution(), 1.0);
        let c = gen_cantor(1.0 / 3.0, 2).unwrap();
        assert_eq!(product(&c, &c).unwrap().len(), 16);
    }

    #[test]
    fn projection_examples() {
        let seg = PointCloud::new(2, vec![0.0, 0.0, 1.0, 0.0], 1.0, "seg").unwrap();
        let x = project(&seg, &Point::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(x.coords(), &[0.0, 1.0]);
        let y = project(&seg, &Point::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(y.coords(), &[0.0]);
        assert!(project(&seg, &Point::new(vec![1.0, 1.0]).unwrap()).is_err());

        let dust = gen_ifs(&IfsSpec::corner_dust(0.25).unwrap(), 1).unwrap();
        let theta = std::f64::consts::FRAC_PI_6;
        let u = Point::new(vec![theta.cos(), theta.sin()]).unwrap();
        let p = project(&dust, &u).unwrap();
        let mut want: Vec<f64> = [(0.0, 0.0), (0.75, 0.0), (0.0, 0.75), (0.75, 0.75)]
            .iter()
            .map(|(a, b)| a * theta.cos() + b * theta.sin())
            .collect();
        want.sort_by(f64::total_cmp);
        assert_eq!(p.len(), 4);
        for (g, w) in p.coords().iter().zip(want) {
            assert_abs_diff_eq!(*g, w, epsilon = 1e-15);
        }
    }

    #[test]
    fn snapping() {
        let c = PointCloud::new(1, vec![0.1, 0.26], 0.01, "c").unwrap();
        let s = snap_to_grid(&c, 0.25).unwrap();
        assert_eq!(s.coords(), &[0.0, 0.25]);
        assert_eq!(s.resolution(), 0.25);

        let cantor = gen_cantor(1.0 / 3.0, 5).unwrap();
        let h = 2f64.powi(-12);
        let snapped = snap_to_grid(&cantor, h).unwrap();
        assert_eq!(snapped.len(), 32);
        for (a, b) in cantor.iter().zip(snapped.iter()) {
            assert!((a[0] - b[0]).abs() <= 2f64.powi(-13));
        }
        let fine = snap_to_grid(&cantor, 1e-6).unwrap();
        assert_eq!(fine.len(), cantor.len());
    }

    #[test]
    fn duplicates_rejected_or_merged() {
        assert!(PointCloud::new(1, vec![0.5, 0.5 + 1e-13], 1.0, "dup").is_err());
        let m = PointCloud::merged(2, vec![1.0, 2.0, 0.0, 0.0, 1.0, 2.0], 1.0, "m").unwrap();
        assert_eq!(m.coords(), &[1.0, 2.0, 0.0, 0.0]);
        assert!(PointCloud::new(1, vec![f64::NAN], 1.0, "nan").is_err());
        assert!(PointCloud::new(1, vec![], 1.0, "empty").is_err());
    }

    #[test]
    fn csv_round_trip_keeps_bits() {
        let c = gen_cantor(1.0 / 3.0, 4).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = PointCloud::read_csv(buf.as_slice(), c.resolution(), c.label()).unwrap();
        assert_eq!(back, c);
        let env: CloudEnvelope = serde_json::from_str(&serde_json::to_string(&c.envelope()).unwrap()).unwrap();
        assert_eq!(env.count, 16);
    }

    #[test]
    fn directions_are_unit() {
        for u in sample_directions(3, 50, 7).unwrap() {
            assert_abs_diff_eq!(u.norm(), 1.0, epsilon = 1e-12);
        }
    }
}
