//! Open sets, their exhaustions by compactly contained subsets, the
//! confining potential, and hitting-time queries on sampled paths.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{FlowError, Result};
use crate::quadrature::norm;
use crate::sampling::RSequence;

/// A region of `R^d`: the whole space, an open ball, an open axis-aligned
/// box, or a finite union of those.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    Whole,
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Union(Vec<Region>),
}

/// Where a point sits relative to a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Location {
    Inside,
    Boundary,
    Outside,
}

/// Membership answer with a signed distance estimate to the boundary
/// (positive inside, `+inf` for the whole space).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub location: Location,
    pub margin: f64,
}

impl Membership {
    pub fn is_inside(&self) -> bool {
        self.location == Location::Inside
    }
}

impl Region {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        Region::Ball { center, radius }
    }

    pub fn centered_ball(dim: usize, radius: f64) -> Self {
        Region::Ball { center: vec![0.0; dim], radius }
    }

    pub fn cube(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Region::Box { lo, hi }
    }

    /// Dimension implied by the region, `None` for the whole space or an
    /// empty union.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Region::Whole => None,
            Region::Ball { center, .. } => Some(center.len()),
            Region::Box { lo, .. } => Some(lo.len()),
            Region::Union(parts) => parts.iter().find_map(Region::dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Whole => Ok(()),
            Region::Ball { center, radius } => {
                if center.is_empty() || !(*radius > 0.0) || !radius.is_finite() {
                    return Err(FlowError::RegionSyntax(format!("invalid ball radius {radius}")));
                }
                Ok(())
            }
            Region::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(FlowError::RegionSyntax("box corners differ in dimension".into()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(FlowError::RegionSyntax("box needs lo < hi on every axis".into()));
                }
                Ok(())
            }
            Region::Union(parts) => {
                if parts.is_empty() {
                    return Err(FlowError::RegionSyntax("empty union".into()));
                }
                let dim = self.dim();
                for p in parts {
                    p.validate()?;
                    if p.dim().is_some() && p.dim() != dim {
                        return Err(FlowError::RegionSyntax("union members differ in dimension".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Signed distance estimate to the boundary: positive inside, negative
    /// outside. Exact for balls and boxes; for unions it is the largest
    /// member margin.
    pub fn signed_margin(&self, x: &[f64]) -> f64 {
        match self {
            Region::Whole => f64::INFINITY,
            Region::Ball { center, radius } => {
                let r = center
                    .iter()
                    .zip(x)
                    .map(|(c, y)| (y - c) * (y - c))
                    .sum::<f64>()
                    .sqrt();
                radius - r
            }
            Region::Box { lo, hi } => {
                let mut inside = f64::INFINITY;
                let mut outside_sq = 0.0;
                let mut is_out = false;
                for ((l, h), y) in lo.iter().zip(hi).zip(x) {
                    let m = (y - l).min(h - y);
                    inside = inside.min(m);
                    if m < 0.0 {
                        is_out = true;
                        outside_sq += m * m;
                    }
                }
                if is_out {
                    -outside_sq.sqrt()
                } else {
                    inside
                }
            }
            Region::Union(parts) => parts
                .iter()
                .map(|p| p.signed_margin(x))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn contains(&self, x: &[f64]) -> Membership {
        let margin = self.signed_margin(x);
        let location = if margin > 0.0 {
            Location::Inside
        } else if margin == 0.0 {
            Location::Boundary
        } else {
            Location::Outside
        };
        Membership { location, margin }
    }

    /// Whether `x` lies in the open region.
    #[inline]
    pub fn includes(&self, x: &[f64]) -> bool {
        self.signed_margin(x) > 0.0
    }

    /// Distance from `x` to the complement of the region (0 outside).
    pub fn dist_to_complement(&self, x: &[f64]) -> f64 {
        self.signed_margin(x).max(0.0)
    }

    /// Axis-aligned bounding box, `None` for unbounded regions.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Region::Whole => None,
            Region::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Region::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            Region::Union(parts) => {
                let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
                for p in parts {
                    let (lo, hi) = p.bounding_box()?;
                    acc = Some(match acc {
                        None => (lo, hi),
                        Some((alo, ahi)) => (
                            alo.iter().zip(&lo).map(|(a, b)| a.min(*b)).collect(),
                            ahi.iter().zip(&hi).map(|(a, b)| a.max(*b)).collect(),
                        ),
                    });
                }
                acc
            }
        }
    }

    /// Lebesgue measure. Unions are assumed to have disjoint members.
    pub fn volume(&self) -> f64 {
        match self {
            Region::Whole => f64::INFINITY,
            Region::Ball { center, radius } => {
                crate::quadrature::unit_ball_volume(center.len()) * radius.powi(center.len() as i32)
            }
            Region::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
            Region::Union(parts) => parts.iter().map(Region::volume).sum(),
        }
    }

    /// Deterministic sample of points on the boundary, used to test nesting.
    pub fn boundary_samples(&self, count: usize) -> Vec<Vec<f64>> {
        match self {
            Region::Whole => Vec::new(),
            Region::Ball { center, radius } => {
                let d = center.len();
                let mut seq = RSequence::new(d);
                let mut out = Vec::with_capacity(count);
                while out.len() < count {
                    let u: Vec<f64> = seq.next_point().iter().map(|v| 2.0 * v - 1.0).collect();
                    let n = norm(&u);
                    if n < 1e-3 {
                        continue;
                    }
                    out.push(center.iter().zip(&u).map(|(c, v)| c + radius * v / n).collect());
                }
                out
            }
            Region::Box { lo, hi } => {
                let d = lo.len();
                let mut seq = RSequence::new(d);
                let mut out = Vec::with_capacity(count);
                for i in 0..count {
                    let u = seq.next_point();
                    let mut p: Vec<f64> = lo.iter().zip(hi).zip(&u).map(|((l, h), v)| l + (h - l) * v).collect();
                    let axis = i % d;
                    p[axis] = if (i / d) % 2 == 0 { lo[axis] } else { hi[axis] };
                    out.push(p);
                }
                out
            }
            Region::Union(parts) => {
                let per = count.div_ceil(parts.len().max(1));
                parts
                    .iter()
                    .flat_map(|p| p.boundary_samples(per))
                    .filter(|x| self.signed_margin(x) <= 1e-12)
                    .collect()
            }
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(v: &[f64]) -> String {
            let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            format!("[{}]", items.join(", "))
        }
        match self {
            Region::Whole => write!(f, "rspace"),
            Region::Ball { center, radius } => write!(f, "ball({}, {})", list(center), radius),
            Region::Box { lo, hi } => write!(f, "box({}, {})", list(lo), list(hi)),
            Region::Union(parts) => {
                let items: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                write!(f, "union[{}]", items.join(", "))
            }
        }
    }
}

impl FromStr for Region {
    type Err = FlowError;

    /// Parses `ball(center, radius)`, `box(lo, hi)`, `rspace` and
    /// `union[...]`, where points are written `[a, b, ...]`.
    fn from_str(s: &str) -> Result<Self> {
        let mut p = RegionParser { src: s.as_bytes(), pos: 0 };
        let r = p.region()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("trailing input"));
        }
        r.validate()?;
        Ok(r)
    }
}

struct RegionParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl RegionParser<'_> {
    fn error(&self, what: &str) -> FlowError {
        FlowError::RegionSyntax(format!(
            "{what} at column {} in `{}`",
            self.pos + 1,
            String::from_utf8_lossy(self.src)
        ))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphabetic() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).to_ascii_lowercase()
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && matches!(self.src[self.pos], b'0'..=b'9' | b'.' | b'-' | b'+' | b'e' | b'E') {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map_err(|_| {
            self.pos = start;
            self.error("expected a number")
        })
    }

    fn point(&mut self) -> Result<Vec<f64>> {
        let close = match self.peek() {
            Some(b'[') => b']',
            Some(b'(') => b')',
            _ => return Err(self.error("expected a point `[x1, x2, ...]`")),
        };
        self.pos += 1;
        let mut v = vec![self.number()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            v.push(self.number()?);
        }
        self.eat(close)?;
        Ok(v)
    }

    fn region(&mut self) -> Result<Region> {
        let name = self.ident();
        match name.as_str() {
            "rspace" | "whole" => Ok(Region::Whole),
            "ball" => {
                self.eat(b'(')?;
                let center = self.point()?;
                self.eat(b',')?;
                let radius = self.number()?;
                self.eat(b')')?;
                Ok(Region::Ball { center, radius })
            }
            "box" => {
                self.eat(b'(')?;
                let lo = self.point()?;
                self.eat(b',')?;
                let hi = self.point()?;
                self.eat(b')')?;
                Ok(Region::Box { lo, hi })
            }
            "union" => {
                self.eat(b'[')?;
                let mut parts = vec![self.region()?];
                while self.peek() == Some(b',') {
                    self.pos += 1;
                    parts.push(self.region()?);
                }
                self.eat(b']')?;
                Ok(Region::Union(parts))
            }
            "" => Err(self.error("expected a region")),
            other => Err(self.error(&format!("unknown region kind `{other}`"))),
        }
    }
}

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An open set `Ω` with a nested exhaustion `Ω_1 ⋐ Ω_2 ⋐ …`.
#[derive(Clone, Debug, Serialize)]
pub struct ExhaustionDomain {
    dim: usize,
    omega: Region,
    levels: Vec<Region>,
}

impl ExhaustionDomain {
    /// Builds a domain and checks nesting on sampled boundary points.
    pub fn new(dim: usize, omega: Region, levels: Vec<Region>) -> Result<Self> {
        omega.validate()?;
        if let Some(d) = omega.dim() {
            if d != dim {
                return Err(FlowError::Dimension { expected: dim, got: d });
            }
        }
        for (n, level) in levels.iter().enumerate() {
            level.validate()?;
            if level.bounding_box().is_none() {
                return Err(FlowError::Config(format!("exhaustion level {} is unbounded", n + 1)));
            }
            if level.dim() != Some(dim) {
                return Err(FlowError::Dimension { expected: dim, got: level.dim().unwrap_or(0) });
            }
            for x in level.boundary_samples(64) {
                if omega.signed_margin(&x) <= 0.0 {
                    return Err(FlowError::Config(format!(
                        "exhaustion level {} is not compactly contained in the domain",
                        n + 1
                    )));
                }
                if let Some(next) = levels.get(n + 1) {
                    if next.signed_margin(&x) <= 0.0 {
                        return Err(FlowError::Config(format!(
                            "exhaustion level {} is not compactly contained in level {}",
                            n + 1,
                            n + 2
                        )));
                    }
                }
            }
        }
        Ok(Self { dim, omega, levels })
    }

    /// `R^d` exhausted by the dyadic balls `B_{2^n}`, `n = 1..=levels`.
    pub fn whole_space(dim: usize, levels: usize) -> Self {
        let levels = (1..=levels)
            .map(|n| Region::centered_ball(dim, 2f64.powi(n as i32)))
            .collect();
        Self { dim, omega: Region::Whole, levels }
    }

    /// A ball exhausted by the concentric balls of radius `R (1 - 2^{-n})`.
    pub fn ball(center: Vec<f64>, radius: f64, levels: usize) -> Self {
        let dim = center.len();
        let lv = (1..=levels)
            .map(|n| Region::Ball { center: center.clone(), radius: radius * (1.0 - 2f64.powi(-(n as i32))) })
            .collect();
        Self { dim, omega: Region::Ball { center, radius }, levels: lv }
    }

    /// Default exhaustion for a region: dyadic balls for `R^d`, shrunken
    /// balls for a ball, and inset boxes for a box.
    pub fn with_default_exhaustion(dim: usize, omega: Region, levels: usize) -> Result<Self> {
        match &omega {
            Region::Whole => Ok(Self::whole_space(dim, levels)),
            Region::Ball { center, radius } => Ok(Self::ball(center.clone(), *radius, levels)),
            Region::Box { lo, hi } => {
                let width = lo.iter().zip(hi).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
                let lv = (1..=levels)
                    .map(|n| {
                        let inset = 0.5 * width * 2f64.powi(-(n as i32));
                        Region::Box {
                            lo: lo.iter().map(|a| a + inset).collect(),
                            hi: hi.iter().map(|b| b - inset).collect(),
                        }
                    })
                    .collect();
                Self::new(dim, omega, lv)
            }
            Region::Union(_) => Err(FlowError::Config("unions need an explicit exhaustion".into())),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn omega(&self) -> &Region {
        &self.omega
    }

    pub fn levels(&self) -> &[Region] {
        &self.levels
    }

    pub fn level(&self, n: usize) -> Option<&Region> {
        self.levels.get(n)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.omega.includes(x)
    }

    /// `V_Ω(x) = max{dist(x, R^d \ Ω)^{-1}, |x|}` without the membership
    /// check: returns `+inf` outside `Ω`.
    #[inline]
    pub fn potential_unchecked(&self, x: &[f64]) -> f64 {
        let dist = self.omega.signed_margin(x);
        if dist <= 0.0 {
            return f64::INFINITY;
        }
        (1.0 / dist).max(norm(x))
    }

    /// Confining potential; undefined outside `Ω`.
    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(FlowError::Dimension { expected: self.dim, got: x.len() });
        }
        if !self.contains(x) {
            return Err(FlowError::OutsideDomain { x: x.to_vec() });
        }
        Ok(self.potential_unchecked(x))
    }

    /// Smallest level `n` (0-based) such that the sampled potential just
    /// outside `Ω_n` exceeds `m`, probing `rings` shells between `Ω_n` and
    /// `Ω_{n+1}`.
    pub fn confinement_level(&self, m: f64, rings: usize) -> Option<usize> {
        'levels: for n in 0..self.levels.len() {
            let outer = self.levels.get(n + 1);
            for x in self.levels[n].boundary_samples(64) {
                let mut probes = vec![x.clone()];
                if let Some(outer) = outer {
                    for y in outer.boundary_samples(16) {
                        for j in 1..=rings {
                            let s = j as f64 / (rings + 1) as f64;
                            let p: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + s * (b - a)).collect();
                            if self.levels[n].signed_margin(&p) < 0.0 {
                                probes.push(p);
                            }
                        }
                    }
                }
                for p in probes {
                    if self.contains(&p) && self.potential_unchecked(&p) <= m {
                        continue 'levels;
                    }
                }
            }
            return Some(n);
        }
        None
    }
}

/// First exit of a trajectory from one exhaustion level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingRecord {
    /// 0-based exhaustion level index.
    pub level: usize,
    /// `None` means the path stayed inside within the horizon.
    pub hit_time: Option<f64>,
    pub exit_point: Option<Vec<f64>>,
}

impl HittingRecord {
    /// Hitting time as an extended real.
    pub fn time_or_inf(&self) -> f64 {
        self.hit_time.unwrap_or(f64::INFINITY)
    }
}

/// Borrowed view of time-ordered samples `(t, x, v)` of a path.
#[derive(Clone, Copy, Debug)]
pub struct PathSamples<'a> {
    pub dim: usize,
    pub times: &'a [f64],
    pub positions: &'a [f64],
    pub velocities: &'a [f64],
}

impl PathSamples<'_> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    /// Cubic Hermite interpolant on the step `[t_i, t_{i+1}]`.
    pub fn interpolate_step(&self, i: usize, t: f64, out: &mut [f64]) {
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        hermite(
            t0,
            t1,
            self.position(i),
            self.velocity(i),
            self.position(i + 1),
            self.velocity(i + 1),
            t,
            out,
        );
    }

    /// Interpolated position at `t`, `None` outside the sampled range.
    pub fn position_at(&self, t: f64) -> Option<Vec<f64>> {
        let n = self.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        let mut out = vec![0.0; self.dim];
        if n == 1 || t == self.times[n - 1] {
            out.copy_from_slice(self.position(n - 1));
            return Some(out);
        }
        let i = match self.times.binary_search_by(|a| a.partial_cmp(&t).unwrap()) {
            Ok(i) => {
                out.copy_from_slice(self.position(i));
                return Some(out);
            }
            Err(i) => i - 1,
        };
        self.interpolate_step(i, t, &mut out);
        Some(out)
    }

    /// Bisection on step `i` for the first time at which `outside` holds,
    /// assuming it fails at `t_i` and holds at `t_{i+1}`.
    pub fn bisect_step<F: Fn(&[f64]) -> bool>(&self, i: usize, tol: f64, outside: F) -> (f64, Vec<f64>) {
        let mut lo = self.times[i];
        let mut hi = self.times[i + 1];
        let mut buf = vec![0.0; self.dim];
        for _ in 0..200 {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            self.interpolate_step(i, mid, &mut buf);
            if outside(&buf) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if hi == self.times[i + 1] {
            buf.copy_from_slice(self.position(i + 1));
        } else {
            self.interpolate_step(i, hi, &mut buf);
        }
        (hi, buf)
    }
}

/// Cubic Hermite interpolation between two samples with known velocities.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn hermite(t0: f64, t1: f64, x0: &[f64], v0: &[f64], x1: &[f64], v1: &[f64], t: f64, out: &mut [f64]) {
    let h = t1 - t0;
    if h <= 0.0 {
        out.copy_from_slice(x1);
        return;
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for k in 0..out.len() {
        out[k] = h00 * x0[k] + h10 * h * v0[k] + h01 * x1[k] + h11 * h * v1[k];
    }
}

/// First time the sampled path leaves the open region (reaches its boundary
/// or beyond), refined by bisection on the bracketing step to `tol`.
/// A path starting outside hits at its start time.
pub fn first_hitting(path: &PathSamples<'_>, region: &Region, level: usize, tol: f64) -> Result<HittingRecord> {
    if path.is_empty() {
        return Err(FlowError::EmptyTrajectory);
    }
    if !region.includes(path.position(0)) {
        return Ok(HittingRecord {
            level,
            hit_time: Some(path.times[0]),
            exit_point: Some(path.position(0).to_vec()),
        });
    }
    for i in 0..path.len() - 1 {
        if !region.includes(path.position(i + 1)) {
            let (t, x) = path.bisect_step(i, tol, |y| !region.includes(y));
            return Ok(HittingRecord { level, hit_time: Some(t), exit_point: Some(x) });
        }
    }
    Ok(HittingRecord { level, hit_time: None, exit_point: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ball_membership_and_margins() {
        let b = Region::centered_ball(3, 2.0);
        let m = b.contains(&[1.0, 0.0, 0.0]);
        assert!(m.is_inside());
        assert_relative_eq!(m.margin, 1.0);
        let m = b.contains(&[2.0, 0.0, 0.0]);
        assert_eq!(m.location, Location::Boundary);
        assert_eq!(m.margin, 0.0);
        let w = Region::Whole.contains(&[1e300, -5.0]);
        assert!(w.is_inside());
        assert_eq!(w.margin, f64::INFINITY);
    }

    #[test]
    fn box_margin_is_exact_inside_and_outside() {
        let b = Region::cube(vec![0.0, 0.0], vec![2.0, 1.0]);
        assert_relative_eq!(b.signed_margin(&[0.5, 0.5]), 0.5);
        assert_relative_eq!(b.signed_margin(&[1.9, 0.5]), 0.1, epsilon = 1e-15);
        assert_relative_eq!(b.signed_margin(&[3.0, 2.0]), -(2f64).sqrt());
    }

    #[test]
    fn potential_examples() {
        let whole = ExhaustionDomain::whole_space(2, 4);
        assert_relative_eq!(whole.potential(&[3.0, 0.0]).unwrap(), 3.0);
        let ball = ExhaustionDomain::ball(vec![0.0, 0.0], 2.0, 4);
        assert_relative_eq!(ball.potential(&[0.0, 0.0]).unwrap(), 0.5);
        // dist = 0.1 -> 1/dist = 10 dominates |x| = 1.9
        assert_relative_eq!(ball.potential(&[1.9, 0.0]).unwrap(), 10.0, epsilon = 1e-12);
        assert!(matches!(ball.potential(&[2.5, 0.0]), Err(FlowError::OutsideDomain { .. })));
    }

    #[test]
    fn nesting_is_checked() {
        let bad = ExhaustionDomain::new(
            2,
            Region::Whole,
            vec![Region::centered_ball(2, 2.0), Region::centered_ball(2, 1.0)],
        );
        assert!(bad.is_err());
        let touching = ExhaustionDomain::new(2, Region::centered_ball(2, 1.0), vec![Region::centered_ball(2, 1.0)]);
        assert!(touching.is_err());
        let ok = ExhaustionDomain::new(
            2,
            Region::centered_ball(2, 1.0),
            vec![Region::centered_ball(2, 0.5), Region::cube(vec![-0.7, -0.7], vec![0.7, 0.7])],
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn confinement_level_grows_with_threshold() {
        let dom = ExhaustionDomain::ball(vec![0.0, 0.0], 1.0, 8);
        let l10 = dom.confinement_level(10.0, 4).unwrap();
        let l100 = dom.confinement_level(100.0, 4).unwrap();
        assert!(l100 > l10);
        let whole = ExhaustionDomain::whole_space(2, 8);
        assert_eq!(whole.confinement_level(3.0, 4), Some(1));
    }

    #[test]
    fn region_syntax_roundtrip() {
        let cases = [
            "rspace",
            "ball([0, 0], 2)",
            "box([-1, -1, 0], [1, 1, 2])",
            "union[ball([0, 0], 1), box([2, 2], [3, 3])]",
        ];
        for c in cases {
            let r: Region = c.parse().unwrap();
            let again: Region = r.to_string().parse().unwrap();
            assert_eq!(r, again);
        }
        assert!("ball((0, 0), -1)".parse::<Region>().is_err());
        assert!("sphere([0], 1)".parse::<Region>().is_err());
        assert!("box([0, 0], [1])".parse::<Region>().is_err());
    }

    fn exp_path(t_end: f64, steps: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut ts = Vec::new();
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for i in 0..=steps {
            let t = t_end * i as f64 / steps as f64;
            ts.push(t);
            xs.extend([t.exp(), 0.0]);
            vs.extend([t.exp(), 0.0]);
        }
        (ts, xs, vs)
    }

    #[test]
    fn hitting_of_exponential_flow() {
        let (ts, xs, vs) = exp_path(1.5, 30);
        let path = PathSamples { dim: 2, times: &ts, positions: &xs, velocities: &vs };
        let rec = first_hitting(&path, &Region::centered_ball(2, std::f64::consts::E), 0, 1e-12).unwrap();
        assert!((rec.hit_time.unwrap() - 1.0).abs() < 1e-6);
        let rec = first_hitting(&path, &Region::centered_ball(2, 10.0), 1, 1e-12).unwrap();
        assert_eq!(rec.hit_time, None);
        let rec = first_hitting(&path, &Region::centered_ball(2, 0.5), 2, 1e-12).unwrap();
        assert_eq!(rec.hit_time, Some(0.0));
        let empty = PathSamples { dim: 2, times: &[], positions: &[], velocities: &[] };
        assert!(matches!(first_hitting(&empty, &Region::Whole, 0, 1e-9), Err(FlowError::EmptyTrajectory)));
    }
}
