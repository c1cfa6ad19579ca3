//! High-dimensional Gaussian filtering.
//!
//! [`LatticeFilter`] splats values onto the vertices of a permutohedral
//! lattice, blurs along each of the `d + 1` lattice directions and slices
//! back with barycentric weights, which costs `O(N d^2)` instead of the
//! `O(N^2 d)` of the direct sum in [`filter_bruteforce`].
//!
//! Features are expected to be pre-divided by their bandwidths so that the
//! target kernel is `exp(-|f_k - f_l|^2 / 2)`.

use std::hash::Hasher;

use rustc_hash::FxHasher;

use crate::error::{domain_err, Error, Result};
use crate::scalar::Scalar;

/// Largest feature dimension accepted by [`LatticeFilter::build`].
pub const MAX_LATTICE_DIM: usize = 16;
/// Largest point count accepted by the quadratic-cost exact paths.
pub const BRUTEFORCE_MAX_POINTS: usize = 5000;
const NORMALIZER_FLOOR: f64 = 1e-12;
const NO_VERTEX: u32 = u32::MAX;

/// Points in a (bandwidth-scaled) feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePointSet<T> {
    count: usize,
    dim: usize,
    features: Vec<T>,
}

impl<T: Scalar> FeaturePointSet<T> {
    pub fn new(count: usize, dim: usize, features: Vec<T>) -> Result<Self> {
        if count == 0 || dim == 0 {
            return Err(domain_err!("feature point set needs count >= 1 and dim >= 1"));
        }
        if features.len() != count * dim {
            return Err(domain_err!(
                "feature length {} does not match {count} points x {dim} dims",
                features.len()
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(domain_err!("non-finite feature value"));
        }
        Ok(Self { count, dim, features })
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.count
    }
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    pub fn features(&self) -> &[T] {
        &self.features
    }
    #[inline]
    pub fn point(&self, k: usize) -> &[T] {
        &self.features[k * self.dim..(k + 1) * self.dim]
    }

    /// Concatenates two point sets of equal dimension (`self` first).
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(domain_err!("cannot concatenate point sets of dim {} and {}", self.dim, other.dim));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        Ok(Self { count: self.count + other.count, dim: self.dim, features })
    }
}

/// Shared surface of the exact and lattice Gaussian filters.
pub trait GaussianFilter<T: Scalar> {
    fn point_count(&self) -> usize;

    /// `out_k = sum_l K(k, l) v_l` for every channel, self-pair included.
    fn apply(&self, values: &[T], channels: usize) -> Result<Vec<T>>;

    /// Diagonal entry `K(k, k)` of the filter; exactly 1 for the Gaussian.
    fn self_weight(&self, _k: usize) -> T {
        T::one()
    }

    /// Per-point normalizer `D = K 1`.
    fn normalizer(&self) -> Result<Vec<T>> {
        let d = self.apply(&vec![T::one(); self.point_count()], 1)?;
        if let Some((k, v)) = d.iter().enumerate().find(|(_, v)| v.as_f64() < NORMALIZER_FLOOR) {
            return Err(Error::Numerical(format!("normalizer {v} at point {k} is below 1e-12")));
        }
        Ok(d)
    }

    /// Row-normalized kernel with the diagonal removed:
    /// `out = D^-1 (K v - diag(K) v)`.
    fn apply_normalized_no_self(&self, values: &[T], channels: usize) -> Result<Vec<T>> {
        let d = self.normalizer()?;
        normalized_no_self_with(self, &d, values, channels)
    }
}

/// [`GaussianFilter::apply_normalized_no_self`] with a precomputed normalizer.
pub fn normalized_no_self_with<T: Scalar, F: GaussianFilter<T> + ?Sized>(
    filter: &F,
    normalizer: &[T],
    values: &[T],
    channels: usize,
) -> Result<Vec<T>> {
    let mut out = filter.apply(values, channels)?;
    for (k, &dk) in normalizer.iter().enumerate() {
        for c in 0..channels {
            let i = k * channels + c;
            out[i] = (out[i] - filter.self_weight(k) * values[i]) / dk;
        }
    }
    Ok(out)
}

fn check_values<T>(n: usize, values: &[T], channels: usize) -> Result<()> {
    if channels == 0 || values.len() != n * channels {
        return Err(domain_err!(
            "value length {} does not match {n} points x {channels} channels",
            values.len()
        ));
    }
    Ok(())
}

/// Direct double sum `out_k = sum_l exp(-|f_k - f_l|^2 / 2) v_l`.
pub fn filter_bruteforce<T: Scalar>(
    points: &FeaturePointSet<T>,
    values: &[T],
    channels: usize,
) -> Result<Vec<T>> {
    ExactFilter::new(points.clone())?.apply(values, channels)
}

/// Exact Gaussian filter evaluated by the direct quadratic sum.
#[derive(Clone, Debug)]
pub struct ExactFilter<T> {
    points: FeaturePointSet<T>,
}

impl<T: Scalar> ExactFilter<T> {
    pub fn new(points: FeaturePointSet<T>) -> Result<Self> {
        if points.count() > BRUTEFORCE_MAX_POINTS {
            return Err(Error::Refusal(format!(
                "{} points exceed the brute-force guard of {BRUTEFORCE_MAX_POINTS}",
                points.count()
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &FeaturePointSet<T> {
        &self.points
    }

    /// Kernel weight between points `k` and `l`.
    pub fn weight(&self, k: usize, l: usize) -> T {
        let half = T::lit(0.5);
        let d2: T = self
            .points
            .point(k)
            .iter()
            .zip(self.points.point(l))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        (-d2 * half).exp()
    }
}

impl<T: Scalar> GaussianFilter<T> for ExactFilter<T> {
    fn point_count(&self) -> usize {
        self.points.count()
    }

    fn apply(&self, values: &[T], channels: usize) -> Result<Vec<T>> {
        let n = self.points.count();
        check_values(n, values, channels)?;
        let mut out = vec![T::zero(); n * channels];
        for k in 0..n {
            let row = &mut out[k * channels..(k + 1) * channels];
            for l in 0..n {
                let w = self.weight(k, l);
                for (o, &v) in row.iter_mut().zip(&values[l * channels..(l + 1) * channels]) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

/// Tuning of the lattice discretization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeOptions {
    /// Lattice refinement relative to the classic spacing (1.0).
    pub refinement: f64,
    /// Number of `[1 2 1]` passes per lattice direction.
    pub blur_passes: usize,
    /// Rings of empty neighbor vertices inserted around the splatted
    /// support per direction, so blurring is not truncated at its boundary.
    pub expand_rings: usize,
    /// Skip inserting expansion vertices whose mass cannot reach a splatted
    /// vertex. Does not change the filter response.
    pub prune: bool,
}

impl LatticeOptions {
    /// Splat support plus one `[1 2 1]` pass per direction on the classic
    /// lattice spacing, without neighbor expansion.
    pub fn classic() -> Self {
        Self { refinement: 1.0, blur_passes: 1, expand_rings: 0, prune: false }
    }

    /// Fully expanded lattice whose spacing is chosen so the effective
    /// kernel variance is one. Splatting and slicing contribute about 0.35
    /// and each blur pass 0.75 (in classic lattice units).
    pub fn with_passes(blur_passes: usize) -> Self {
        let refinement = (0.75 * blur_passes as f64 + 0.35).sqrt();
        Self { refinement, blur_passes, expand_rings: blur_passes, prune: true }
    }
}

impl Default for LatticeOptions {
    fn default() -> Self {
        Self::with_passes(2)
    }
}

/// Permutohedral-lattice approximation of the Gaussian filter.
#[derive(Clone, Debug)]
pub struct LatticeFilter<T> {
    count: usize,
    dim: usize,
    vertices: usize,
    /// `(vertex, barycentric weight)` for each point, `dim + 1` entries per point.
    splat: Vec<(u32, T)>,
    /// Per blur direction, the two neighbor vertices of each vertex.
    neighbors: Vec<Vec<[u32; 2]>>,
    blur_passes: usize,
    /// Scale mapping the lattice response onto the unnormalized Gaussian sum.
    gain: T,
    /// Response of each point to its own unit value.
    self_weight: Vec<T>,
}

/// Open-addressing map from integer lattice keys to vertex indices.
struct KeyTable {
    dim: usize,
    keys: Vec<i32>,
    slots: Vec<u32>,
}

impl KeyTable {
    fn with_capacity(dim: usize, cap: usize) -> Self {
        let slots = (cap * 2).next_power_of_two().max(16);
        Self { dim, keys: Vec::with_capacity(cap * dim), slots: vec![NO_VERTEX; slots] }
    }

    fn len(&self) -> usize {
        self.keys.len() / self.dim
    }

    /// Home slot of `key` in a table of `slots` (a power of two) entries,
    /// taken from the high bits of a multiplicative mix.
    fn home(key: &[i32], slots: usize) -> usize {
        let mut h = FxHasher::default();
        for &k in key {
            h.write_i32(k);
        }
        let mixed = h.finish().wrapping_mul(0x9E37_79B9_7F4A_7C15);
        (mixed >> (64 - slots.trailing_zeros())) as usize
    }

    fn key(&self, i: usize) -> &[i32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    fn find(&self, key: &[i32]) -> Option<u32> {
        let mask = self.slots.len() - 1;
        let mut s = Self::home(key, mask + 1);
        loop {
            let v = self.slots[s];
            if v == NO_VERTEX {
                return None;
            }
            if self.key(v as usize) == key {
                return Some(v);
            }
            s = (s + 1) & mask;
        }
    }

    fn insert(&mut self, key: &[i32]) -> u32 {
        if let Some(v) = self.find(key) {
            return v;
        }
        if 2 * (self.len() + 1) > self.slots.len() {
            self.grow();
        }
        let mask = self.slots.len() - 1;
        let mut s = Self::home(key, mask + 1);
        while self.slots[s] != NO_VERTEX {
            s = (s + 1) & mask;
        }
        let id = self.len() as u32;
        self.slots[s] = id;
        self.keys.extend_from_slice(key);
        id
    }

    fn grow(&mut self) {
        let n = self.slots.len() * 2;
        self.slots = vec![NO_VERTEX; n];
        let mask = n - 1;
        for i in 0..self.len() {
            let mut s = Self::home(self.key(i), n);
            while self.slots[s] != NO_VERTEX {
                s = (s + 1) & mask;
            }
            self.slots[s] = i as u32;
        }
    }
}

impl<T: Scalar> LatticeFilter<T> {
    pub fn build(points: &FeaturePointSet<T>) -> Result<Self> {
        Self::build_with(points, LatticeOptions::default())
    }

    pub fn build_with(points: &FeaturePointSet<T>, opts: LatticeOptions) -> Result<Self> {
        let d = points.dim();
        if d > MAX_LATTICE_DIM {
            return Err(Error::Refusal(format!(
                "feature dimension {d} exceeds the lattice bound of {MAX_LATTICE_DIM}"
            )));
        }
        if opts.refinement <= 0.0 || opts.blur_passes == 0 {
            return Err(domain_err!("lattice refinement and blur passes must be positive"));
        }
        let n = points.count();
        let d1 = d + 1;

        // Elevation onto the hyperplane sum(x) = 0 in R^{d+1}, scaled so that
        // the lattice spacing matches a unit-bandwidth Gaussian.
        let inv_std = (2.0f64 / 3.0).sqrt() * d1 as f64 * opts.refinement;
        let scale: Vec<f64> =
            (0..d).map(|i| inv_std / (((i + 1) * (i + 2)) as f64).sqrt()).collect();

        let mut table = KeyTable::with_capacity(d, n * d1);
        let mut splat = Vec::with_capacity(n * d1);
        let mut elevated = vec![0f64; d1];
        let mut rem0 = vec![0i32; d1];
        let mut rank = vec![0i32; d1];
        let mut bary = vec![0f64; d1 + 1];
        let mut key = vec![0i32; d];
        let d1f = d1 as f64;
        let d1i = d1 as i32;

        for k in 0..n {
            let f = points.point(k);
            let mut sm = 0.0;
            for i in (1..=d).rev() {
                let cf = f[i - 1].as_f64() * scale[i - 1];
                elevated[i] = sm - i as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // Nearest remainder-0 point.
            let mut sum = 0i32;
            for i in 0..d1 {
                let v = elevated[i] / d1f;
                let up = v.ceil() * d1f;
                let down = v.floor() * d1f;
                rem0[i] = if up - elevated[i] < elevated[i] - down { up } else { down } as i32;
                sum += rem0[i];
            }
            sum /= d1i;

            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                let di = elevated[i] - rem0[i] as f64;
                for j in i + 1..d1 {
                    if di < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            if sum > 0 {
                for i in 0..d1 {
                    if rank[i] >= d1i - sum {
                        rem0[i] -= d1i;
                        rank[i] += sum - d1i;
                    } else {
                        rank[i] += sum;
                    }
                }
            } else if sum < 0 {
                for i in 0..d1 {
                    if rank[i] < -sum {
                        rem0[i] += d1i;
                        rank[i] += d1i + sum;
                    } else {
                        rank[i] += sum;
                    }
                }
            }

            // Barycentric coordinates within the enclosing simplex.
            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..d1 {
                let delta = (elevated[i] - rem0[i] as f64) / d1f;
                bary[(d as i32 - rank[i]) as usize] += delta;
                bary[(d1i - rank[i]) as usize] -= delta;
            }
            bary[0] += 1.0 + bary[d1];

            for r in 0..d1 {
                let ri = r as i32;
                for i in 0..d {
                    let canonical = if rank[i] <= d as i32 - ri { ri } else { ri - d1i };
                    key[i] = rem0[i] + canonical;
                }
                let v = table.insert(&key);
                splat.push((v, T::lit(bary[r])));
            }
        }

        let neighbors = link_neighbors(&mut table, d, opts, opts.prune);
        let vertices = table.len();
        let gain = Self::gain(d, opts);
        let beta = impulse_profile(d, opts);
        let self_weight = splat
            .chunks(d1)
            .map(|w| {
                let mut acc = 0.0;
                for (r, &(_, wr)) in w.iter().enumerate() {
                    for (q, &(_, wq)) in w.iter().enumerate() {
                        acc += wr.as_f64() * wq.as_f64() * beta[r.abs_diff(q)];
                    }
                }
                T::lit(acc * gain)
            })
            .collect();
        Ok(Self {
            count: n,
            dim: d,
            vertices,
            splat,
            neighbors,
            blur_passes: opts.blur_passes,
            gain: T::lit(gain),
            self_weight,
        })
    }

    /// Ratio between the unit-mass Gaussian density the lattice produces
    /// and the unnormalized kernel `exp(-|x|^2/2)`.
    fn gain(d: usize, opts: LatticeOptions) -> f64 {
        let d1 = (d + 1) as f64;
        let density = (2.0f64 / 3.0).powf(d as f64 / 2.0) * d1.sqrt() * opts.refinement.powi(d as i32);
        (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * density
    }

    pub fn point_count(&self) -> usize {
        self.count
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    fn filter(&self, values: &[T], channels: usize) -> Vec<T> {
        let d1 = self.dim + 1;
        let mut grid = vec![T::zero(); self.vertices * channels];
        for k in 0..self.count {
            let vals = &values[k * channels..(k + 1) * channels];
            for &(v, w) in &self.splat[k * d1..(k + 1) * d1] {
                let dst = &mut grid[v as usize * channels..(v as usize + 1) * channels];
                for (g, &x) in dst.iter_mut().zip(vals) {
                    *g += w * x;
                }
            }
        }

        blur(&mut grid, &self.neighbors, self.blur_passes, channels);

        let mut out = vec![T::zero(); self.count * channels];
        for k in 0..self.count {
            let dst = &mut out[k * channels..(k + 1) * channels];
            for &(v, w) in &self.splat[k * d1..(k + 1) * d1] {
                let src = &grid[v as usize * channels..(v as usize + 1) * channels];
                for (o, &g) in dst.iter_mut().zip(src) {
                    *o += w * g;
                }
            }
            for o in dst.iter_mut() {
                *o *= self.gain;
            }
        }
        out
    }
}

/// Lattice step along blur direction `j`: every coordinate +1 except the
/// `j`-th, which moves by `-d` (direction `d` moves all coordinates by +1).
fn direction(d: usize, j: usize) -> Vec<i32> {
    (0..d).map(|t| if t == j { -(d as i32) } else { 1 }).collect()
}

fn dilate_along(set: &KeyTable, dir: &[i32], reach: i32) -> KeyTable {
    let mut out = KeyTable::with_capacity(set.dim, set.len() * (2 * reach as usize + 1));
    let mut key = vec![0i32; set.dim];
    for i in 0..set.len() {
        for a in -reach..=reach {
            for (t, (&b, &u)) in set.key(i).iter().zip(dir).enumerate() {
                key[t] = b + a * u;
            }
            out.insert(&key);
        }
    }
    out
}

/// For each blur direction, the vertices worth inserting when that
/// direction is expanded: targets whose value still reaches a splatted
/// vertex through the remaining directions, plus the relays feeding them.
/// Computed backwards from the splat set while it stays small; `None`
/// means no pruning for that direction.
fn useful_sets(table: &KeyTable, d: usize, passes: usize) -> Vec<Option<KeyTable>> {
    const GROWTH_CAP: usize = 16;
    let cap = table.len() * GROWTH_CAP;
    let reach = passes as i32;
    let mut out: Vec<Option<KeyTable>> = (0..=d).map(|_| None).collect();
    let mut needed = dilate_along(table, &vec![0; d], 0);
    for j in (0..=d).rev() {
        let dir = direction(d, j);
        out[j] = Some(dilate_along(&needed, &dir, reach - 1));
        if j == 0 {
            break;
        }
        needed = dilate_along(&needed, &dir, reach);
        if needed.len() > cap {
            break;
        }
    }
    out
}

/// Neighbor vertex indices for each blur direction. Missing neighbors are
/// inserted as empty vertices for `expand_rings` rings so the blur is a
/// true lattice convolution rather than one truncated at the support edge.
/// With `prune`, only vertices that can still carry mass back to a splatted
/// vertex are inserted; responses at splatted vertices are unchanged.
fn link_neighbors(table: &mut KeyTable, d: usize, opts: LatticeOptions, prune: bool) -> Vec<Vec<[u32; 2]>> {
    let step = |base: &[i32], j: usize, n1: &mut [i32], n2: &mut [i32]| {
        for t in 0..d {
            n1[t] = base[t] - 1;
            n2[t] = base[t] + 1;
        }
        if j < d {
            n1[j] = base[j] + d as i32;
            n2[j] = base[j] - d as i32;
        }
    };
    let rings = opts.expand_rings.min(opts.blur_passes);
    let useful = if prune && rings > 0 { useful_sets(table, d, opts.blur_passes) } else { (0..=d).map(|_| None).collect() };
    let mut n1 = vec![0i32; d];
    let mut n2 = vec![0i32; d];
    let mut neighbors = Vec::with_capacity(d + 1);
    for j in 0..=d {
        let keep = |key: &[i32]| useful[j].as_ref().is_none_or(|u| u.find(key).is_some());
        // Each ring only needs the neighbors of the vertices added by the
        // previous ring.
        let mut frontier = 0..table.len();
        for _ in 0..rings {
            let start = table.len();
            for i in frontier {
                step(table.key(i), j, &mut n1, &mut n2);
                for n in [&n1, &n2] {
                    if keep(n) {
                        table.insert(n);
                    }
                }
            }
            frontier = start..table.len();
        }
        let dir: Vec<[u32; 2]> = (0..table.len())
            .map(|i| {
                step(table.key(i), j, &mut n1, &mut n2);
                [table.find(&n1).unwrap_or(NO_VERTEX), table.find(&n2).unwrap_or(NO_VERTEX)]
            })
            .collect();
        neighbors.push(dir);
    }
    let vertices = table.len();
    for dir in neighbors.iter_mut() {
        dir.resize(vertices, [NO_VERTEX, NO_VERTEX]);
    }
    neighbors
}

/// Normalized `[1/4, 1/2, 1/4]` passes, directions in ascending order.
fn blur<T: Scalar>(grid: &mut Vec<T>, neighbors: &[Vec<[u32; 2]>], passes: usize, channels: usize) {
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let mut next = vec![T::zero(); grid.len()];
    for dir in neighbors {
        for _ in 0..passes {
            for (i, &[a, b]) in dir.iter().enumerate() {
                for c in 0..channels {
                    let mut acc = half * grid[i * channels + c];
                    if a != NO_VERTEX {
                        acc += quarter * grid[a as usize * channels + c];
                    }
                    if b != NO_VERTEX {
                        acc += quarter * grid[b as usize * channels + c];
                    }
                    next[i * channels + c] = acc;
                }
            }
            std::mem::swap(grid, &mut next);
        }
    }
}

/// Blur response of a unit impulse at the origin, read at the offset
/// between two vertices of one simplex whose remainders differ by `delta`
/// (the response only depends on `delta` by the lattice's symmetry).
fn impulse_profile(d: usize, opts: LatticeOptions) -> Vec<f64> {
    let full = LatticeOptions { expand_rings: opts.blur_passes, ..opts };
    let mut table = KeyTable::with_capacity(d, 64);
    let origin = vec![0i32; d];
    table.insert(&origin);
    let neighbors = link_neighbors(&mut table, d, full, false);
    let mut grid = vec![0f64; table.len()];
    grid[0] = 1.0;
    blur(&mut grid, &neighbors, opts.blur_passes, 1);

    let d1 = (d + 1) as i32;
    (0..=d as i32)
        .map(|delta| {
            // Offset with `delta` coordinates equal to delta - (d+1) and the
            // rest equal to delta; keys drop the last coordinate.
            let key: Vec<i32> =
                (0..d as i32).map(|i| if i < delta { delta - d1 } else { delta }).collect();
            table.find(&key).map_or(0.0, |v| grid[v as usize])
        })
        .collect()
}

impl<T: Scalar> GaussianFilter<T> for LatticeFilter<T> {
    fn point_count(&self) -> usize {
        self.count
    }

    fn apply(&self, values: &[T], channels: usize) -> Result<Vec<T>> {
        check_values(self.count, values, channels)?;
        Ok(self.filter(values, channels))
    }

    fn self_weight(&self, k: usize) -> T {
        self.self_weight[k]
    }
}

/// Relative L2 distance `|a - b| / |b|`.
pub fn relative_l2<T: Scalar>(approx: &[T], exact: &[T]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&a, &b) in approx.iter().zip(exact) {
        let (a, b) = (a.as_f64(), b.as_f64());
        num += (a - b) * (a - b);
        den += b * b;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
