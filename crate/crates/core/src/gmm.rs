//! Bivariate Gaussian mixtures.
//!
//! Components are parameterized by per-axis standard deviations and a
//! correlation coefficient, the natural output of a mixture-density head.
//! Component selection comes in two flavours (multinomial and stratified)
//! and sampling draws from the selected component through the lower
//! triangular square root of its covariance.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::ops::{Add, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the weight sum of a valid mixture.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Weight sums closer to 1 than this are left untouched.
const RENORM_FLOOR: f64 = 1e-12;
/// Weight sums further from 1 than this are a contract violation.
const RENORM_CEIL: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A position or offset in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const ORIGIN: Point2D = Point2D { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2D { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: Point2D) -> f64 {
        (*self - other).norm()
    }

    pub fn scale(&self, s: f64) -> Point2D {
        Point2D::new(self.x * s, self.y * s)
    }
}

impl Add for Point2D {
    type Output = Point2D;
    fn add(self, rhs: Point2D) -> Point2D {
        Point2D::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2D {
    type Output = Point2D;
    fn sub(self, rhs: Point2D) -> Point2D {
        Point2D::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Neg for Point2D {
    type Output = Point2D;
    fn neg(self) -> Point2D {
        Point2D::new(-self.x, -self.y)
    }
}

/// A bivariate normal distribution with correlated axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub mean: Point2D,
    pub std_x: f64,
    pub std_y: f64,
    pub corr: f64,
}

impl Gaussian2D {
    pub fn new(mean: Point2D, std_x: f64, std_y: f64, corr: f64) -> Result<Self> {
        let g = Gaussian2D {
            mean,
            std_x,
            std_y,
            corr,
        };
        g.validate()?;
        Ok(g)
    }

    /// Isotropic component with unit variance around `mean`.
    pub fn standard(mean: Point2D) -> Self {
        Gaussian2D {
            mean,
            std_x: 1.0,
            std_y: 1.0,
            corr: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(Error::invalid("mean", "non-finite coordinate"));
        }
        if !(self.std_x > 0.0 && self.std_x.is_finite()) {
            return Err(Error::invalid("std_x", format!("{} is not > 0", self.std_x)));
        }
        if !(self.std_y > 0.0 && self.std_y.is_finite()) {
            return Err(Error::invalid("std_y", format!("{} is not > 0", self.std_y)));
        }
        if !(self.corr > -1.0 && self.corr < 1.0) {
            return Err(Error::invalid("corr", format!("{} not in (-1, 1)", self.corr)));
        }
        Ok(())
    }

    /// Natural log of the density at `p`.
    pub fn log_density(&self, p: Point2D) -> f64 {
        let one_m_rho2 = 1.0 - self.corr * self.corr;
        let zx = (p.x - self.mean.x) / self.std_x;
        let zy = (p.y - self.mean.y) / self.std_y;
        let z = zx * zx + zy * zy - 2.0 * self.corr * zx * zy;
        -LN_2PI - self.std_x.ln() - self.std_y.ln() - 0.5 * one_m_rho2.ln() - z / (2.0 * one_m_rho2)
    }

    pub fn density(&self, p: Point2D) -> f64 {
        let one_m_rho2 = 1.0 - self.corr * self.corr;
        let zx = (p.x - self.mean.x) / self.std_x;
        let zy = (p.y - self.mean.y) / self.std_y;
        let z = zx * zx + zy * zy - 2.0 * self.corr * zx * zy;
        (-z / (2.0 * one_m_rho2)).exp() / (2.0 * PI * self.std_x * self.std_y * one_m_rho2.sqrt())
    }

    /// Draws one point using the Cholesky factor of the covariance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2D {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let x = self.mean.x + self.std_x * z1;
        let y = self.mean.y + self.std_y * (self.corr * z1 + (1.0 - self.corr * self.corr).sqrt() * z2);
        Point2D::new(x, y)
    }

    /// Square root of the largest covariance eigenvalue.
    pub fn max_axis_std(&self) -> f64 {
        let a = self.std_x * self.std_x;
        let c = self.std_y * self.std_y;
        let b = self.corr * self.std_x * self.std_y;
        let half_diff = 0.5 * (a - c);
        (0.5 * (a + c) + (half_diff * half_diff + b * b).sqrt()).sqrt()
    }

    pub fn translated(&self, by: Point2D) -> Gaussian2D {
        Gaussian2D {
            mean: self.mean + by,
            ..*self
        }
    }
}

/// A weighted set of bivariate Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture2D {
    components: Vec<Gaussian2D>,
    weights: Vec<f64>,
}

impl GaussianMixture2D {
    /// Builds a mixture, renormalizing weights that drifted from 1 by less than 1e-6.
    pub fn new(components: Vec<Gaussian2D>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyInput("mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        for c in &components {
            c.validate()?;
        }
        let weights = normalized_weights(weights)?;
        Ok(GaussianMixture2D { components, weights })
    }

    pub fn single(component: Gaussian2D) -> Result<Self> {
        Self::new(vec![component], vec![1.0])
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(components: Vec<Gaussian2D>, weights: Vec<f64>) -> Self {
        debug_assert_eq!(components.len(), weights.len());
        GaussianMixture2D { components, weights }
    }

    pub fn components(&self) -> &[Gaussian2D] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn density(&self, p: Point2D) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.density(p))
            .sum()
    }

    /// Log density via log-sum-exp over components.
    pub fn log_density(&self, p: Point2D) -> f64 {
        log_sum_exp(
            self.components
                .iter()
                .zip(&self.weights)
                .map(|(c, &w)| w.ln() + c.log_density(p)),
        )
    }

    /// Translates every component mean by `anchor`.
    pub fn shift_means(&self, anchor: Point2D) -> GaussianMixture2D {
        GaussianMixture2D {
            components: self.components.iter().map(|c| c.translated(anchor)).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Weighted mean of the component means.
    pub fn mean(&self) -> Point2D {
        self.components
            .iter()
            .zip(&self.weights)
            .fold(Point2D::ORIGIN, |acc, (c, &w)| acc + c.mean.scale(w))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        count: usize,
        strategy: SamplingStrategy,
        rng: &mut R,
    ) -> Vec<Point2D> {
        self.sample_indexed(count, strategy, rng)
            .into_iter()
            .map(|(_, p)| p)
            .collect()
    }

    /// Samples `count` points and reports the component each came from.
    pub fn sample_indexed<R: Rng + ?Sized>(
        &self,
        count: usize,
        strategy: SamplingStrategy,
        rng: &mut R,
    ) -> Vec<(usize, Point2D)> {
        let indices = strategy.select(&self.weights, count, rng);
        indices
            .into_iter()
            .map(|k| (k, self.components[k].sample(rng)))
            .collect()
    }
}

/// Density of `mix` at `p`.
pub fn density(mix: &GaussianMixture2D, p: Point2D) -> f64 {
    mix.density(p)
}

pub fn shift_means(mix: &GaussianMixture2D, anchor: Point2D) -> GaussianMixture2D {
    mix.shift_means(anchor)
}

/// Combines mixtures into one whose k-th component of member m carries weight
/// `weights[m] * pi[m][k]`. Components are laid out member by member.
pub fn aggregate(mixes: &[GaussianMixture2D], weights: &[f64]) -> Result<GaussianMixture2D> {
    if mixes.is_empty() {
        return Err(Error::EmptyInput("aggregate needs at least one mixture"));
    }
    if mixes.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} mixtures but {} weights",
            mixes.len(),
            weights.len()
        )));
    }
    let total: usize = mixes.iter().map(|m| m.len()).sum();
    let mut components = Vec::with_capacity(total);
    let mut out_weights = Vec::with_capacity(total);
    for (mix, &w) in mixes.iter().zip(weights) {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::invalid("weights", format!("{w} is not a valid weight")));
        }
        components.extend_from_slice(&mix.components);
        out_weights.extend(mix.weights.iter().map(|pi| w * pi));
    }
    let out_weights = normalized_weights(out_weights)?;
    Ok(GaussianMixture2D {
        components,
        weights: out_weights,
    })
}

/// How component indices are chosen when drawing from a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Multinomial,
    Stratified,
}

impl SamplingStrategy {
    pub fn select<R: Rng + ?Sized>(&self, weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
        match self {
            SamplingStrategy::Multinomial => select_multinomial(weights, count, rng),
            SamplingStrategy::Stratified => select_stratified(weights, count, rng),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SamplingStrategy::Multinomial => "multinomial",
            SamplingStrategy::Stratified => "stratified",
        }
    }
}

impl std::str::FromStr for SamplingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(SamplingStrategy::Multinomial),
            "stratified" => Ok(SamplingStrategy::Stratified),
            other => Err(Error::invalid("sampling", format!("unknown strategy `{other}`"))),
        }
    }
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Maps a point on the cumulative axis to its component, never picking a
/// zero-weight component.
fn invert_cumulative(cum: &[f64], weights: &[f64], v: f64) -> usize {
    let idx = cum.partition_point(|&c| c <= v);
    if idx < cum.len() {
        return idx;
    }
    // v reached the total through rounding; fall back to the last live component
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(cum.len() - 1)
}

/// `count` independent categorical draws.
pub fn select_multinomial<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let cum = cumulative(weights);
    let total = *cum.last().expect("weights must be non-empty");
    (0..count)
        .map(|_| {
            let u: f64 = rng.gen();
            invert_cumulative(&cum, weights, u * total)
        })
        .collect()
}

/// One uniform draw inside each of `count` equal bins of the cumulative
/// weight axis. The returned indices are non-decreasing.
pub fn select_stratified<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let cum = cumulative(weights);
    let total = *cum.last().expect("weights must be non-empty");
    let mut out = Vec::with_capacity(count);
    let mut k = 0usize;
    let n = count as f64;
    for j in 0..count {
        let u: f64 = rng.gen();
        let v = (j as f64 + u) / n * total;
        while k < cum.len() && cum[k] <= v {
            k += 1;
        }
        if k < cum.len() {
            out.push(k);
        } else {
            out.push(invert_cumulative(&cum, weights, v));
        }
    }
    out
}

/// Draws `count` points from `mix` with the given selection strategy.
pub fn sample<R: Rng + ?Sized>(
    mix: &GaussianMixture2D,
    count: usize,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Vec<Point2D> {
    mix.sample(count, strategy, rng)
}

/// Validates weights and renormalizes small floating-point drift.
pub fn normalized_weights(mut weights: Vec<f64>) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::EmptyInput("weights"));
    }
    if let Some(bad) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid("weights", format!("{bad} is not a valid weight")));
    }
    let sum: f64 = weights.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > RENORM_CEIL {
        return Err(Error::invalid("weights", format!("sum {sum} deviates from 1")));
    }
    if dev > RENORM_FLOOR {
        weights.iter_mut().for_each(|w| *w /= sum);
    }
    Ok(weights)
}

pub(crate) fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Spatial index for evaluating the density of a large mixture at many points.
///
/// Components further than `cutoff` standard deviations (along their widest
/// axis) from the query are skipped, so the result differs from the exact
/// density by a relative amount below `exp(-cutoff^2 / 2)`.
pub struct MixtureIndex {
    cell: f64,
    terms: Vec<ComponentTerm>,
    /// Index range into `terms` per grid cell.
    grid: HashMap<(i64, i64), (u32, u32)>,
    /// Components too wide for the grid, checked for every query.
    wide: Vec<ComponentTerm>,
}

#[derive(Clone, Copy)]
struct ComponentTerm {
    mean: Point2D,
    inv_sx: f64,
    inv_sy: f64,
    corr: f64,
    inv_two_one_m_rho2: f64,
    log_scale: f64,
}

impl ComponentTerm {
    #[inline]
    fn log_term(&self, p: Point2D) -> f64 {
        let zx = (p.x - self.mean.x) * self.inv_sx;
        let zy = (p.y - self.mean.y) * self.inv_sy;
        let z = zx * zx + zy * zy - 2.0 * self.corr * zx * zy;
        self.log_scale - z * self.inv_two_one_m_rho2
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

impl MixtureIndex {
    pub const DEFAULT_CUTOFF: f64 = 12.0;

    pub fn new(mix: &GaussianMixture2D, cutoff: f64) -> Self {
        let mut spreads: Vec<f64> = mix.components.iter().map(|c| c.max_axis_std()).collect();
        spreads.sort_by(f64::total_cmp);
        // size cells for the bulk of the components; the widest few are
        // kept out of the grid so they cannot inflate every cell
        let bulk = spreads[(spreads.len() * 95 / 100).min(spreads.len() - 1)];
        let cell = if bulk > 0.0 && (bulk * cutoff).is_finite() { bulk * cutoff } else { 1.0 };
        let mut keyed = Vec::with_capacity(mix.len());
        let mut wide = Vec::new();
        for (c, &w) in mix.components.iter().zip(&mix.weights) {
            if w <= 0.0 {
                continue;
            }
            let one_m_rho2 = 1.0 - c.corr * c.corr;
            let term = ComponentTerm {
                mean: c.mean,
                inv_sx: 1.0 / c.std_x,
                inv_sy: 1.0 / c.std_y,
                corr: c.corr,
                inv_two_one_m_rho2: 0.5 / one_m_rho2,
                log_scale: w.ln() - LN_2PI - c.std_x.ln() - c.std_y.ln() - 0.5 * one_m_rho2.ln(),
            };
            if c.max_axis_std() * cutoff > cell {
                wide.push(term);
            } else {
                keyed.push((cell_key(c.mean, cell), term));
            }
        }
        keyed.sort_by_key(|(k, _)| *k);
        let mut grid = HashMap::new();
        let mut start = 0;
        for i in 1..=keyed.len() {
            if i == keyed.len() || keyed[i].0 != keyed[start].0 {
                grid.insert(keyed[start].0, (start as u32, i as u32));
                start = i;
            }
        }
        MixtureIndex {
            cell,
            terms: keyed.into_iter().map(|(_, t)| t).collect(),
            grid,
            wide,
        }
    }

    /// Log density at `p`; `-inf` when no component is within the cutoff.
    pub fn log_density(&self, p: Point2D) -> f64 {
        // one pass in linear space; only an underflowing sum needs log-sum-exp
        let (cx, cy) = cell_key(p, self.cell);
        let mut sum = 0.0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(&(a, b)) = self.grid.get(&(cx + dx, cy + dy)) {
                    sum += self.terms[a as usize..b as usize].iter().map(|t| t.log_term(p).exp()).sum::<f64>();
                }
            }
        }
        sum += self.wide.iter().map(|t| t.log_term(p).exp()).sum::<f64>();
        if sum > f64::MIN_POSITIVE && sum.is_finite() {
            return sum.ln();
        }
        SCRATCH.with(|buf| {
            let mut buf = buf.borrow_mut();
            buf.clear();
            let (cx, cy) = cell_key(p, self.cell);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(&(a, b)) = self.grid.get(&(cx + dx, cy + dy)) {
                        buf.extend(self.terms[a as usize..b as usize].iter().map(|t| t.log_term(p)));
                    }
                }
            }
            buf.extend(self.wide.iter().map(|t| t.log_term(p)));
            let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return max;
            }
            max + buf.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
    }

    pub fn density(&self, p: Point2D) -> f64 {
        self.log_density(p).exp()
    }
}

fn cell_key(p: Point2D, cell: f64) -> (i64, i64) {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
}
