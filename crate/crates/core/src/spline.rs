//! B-spline and natural cubic spline bases.
//!
//! B-splines use a clamped knot vector (boundary knots repeated `degree + 1`
//! times) and are held constant outside `[lo, hi]`. Natural cubic splines
//! follow the usual construction: the cubic B-spline basis without its first
//! column, projected onto the subspace with zero second derivative at both
//! boundary knots. They extend linearly beyond the boundary, have dimension
//! `interior + 1` and contain no intercept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::householder_q;
use crate::prelude::*;

const MAX_DEGREE: usize = 5;
const MAX_ORDER: usize = MAX_DEGREE + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplineKind {
    Bspline,
    NaturalCubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplineBasisDef {
    kind: SplineKind,
    #[serde(default = "default_degree")]
    degree: usize,
    interior_knots: Vec<f64>,
    boundary: [f64; 2],
}

fn default_degree() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineBasisDef", into = "SplineBasisDef")]
pub struct SplineBasis {
    kind: SplineKind,
    degree: usize,
    interior_knots: Vec<f64>,
    boundary: [f64; 2],
    knots: Vec<f64>,
    /// Natural splines only: (n_bspline - 1) × dim projection, row-major.
    projection: Vec<f64>,
}

impl TryFrom<SplineBasisDef> for SplineBasis {
    type Error = Error;

    fn try_from(def: SplineBasisDef) -> Result<Self> {
        match def.kind {
            SplineKind::Bspline => {
                Self::bspline(def.degree, def.interior_knots, def.boundary[0], def.boundary[1])
            }
            SplineKind::NaturalCubic => {
                Self::natural_cubic(def.interior_knots, def.boundary[0], def.boundary[1])
            }
        }
    }
}

impl From<SplineBasis> for SplineBasisDef {
    fn from(b: SplineBasis) -> Self {
        Self {
            kind: b.kind,
            degree: b.degree,
            interior_knots: b.interior_knots,
            boundary: b.boundary,
        }
    }
}

fn check_knots(interior: &[f64], lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Knots(format!("boundary [{lo}, {hi}] must satisfy lo < hi")));
    }
    let mut previous = lo;
    for &k in interior {
        if !(k > previous) {
            return Err(Error::Knots(format!(
                "interior knots must be strictly increasing inside ({lo}, {hi})"
            )));
        }
        previous = k;
    }
    if !(hi > previous) {
        return Err(Error::Knots(format!("last interior knot {previous} must be below {hi}")));
    }
    Ok(())
}

fn clamped_knots(degree: usize, interior: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut knots = Vec::with_capacity(interior.len() + 2 * (degree + 1));
    knots.extend(core::iter::repeat(lo).take(degree + 1));
    knots.extend_from_slice(interior);
    knots.extend(core::iter::repeat(hi).take(degree + 1));
    knots
}

impl SplineBasis {
    pub fn bspline(degree: usize, interior_knots: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::Knots(format!("degree must be in 1..={MAX_DEGREE}, got {degree}")));
        }
        check_knots(&interior_knots, lo, hi)?;
        let knots = clamped_knots(degree, &interior_knots, lo, hi);
        Ok(Self {
            kind: SplineKind::Bspline,
            degree,
            interior_knots,
            boundary: [lo, hi],
            knots,
            projection: Vec::new(),
        })
    }

    pub fn natural_cubic(interior_knots: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        check_knots(&interior_knots, lo, hi)?;
        let knots = clamped_knots(3, &interior_knots, lo, hi);
        let mut basis = Self {
            kind: SplineKind::NaturalCubic,
            degree: 3,
            interior_knots,
            boundary: [lo, hi],
            knots,
            projection: Vec::new(),
        };
        // constraint rows: second derivatives at both boundaries, first column dropped
        let n_full = basis.n_bspline();
        let cols = n_full - 1;
        let mut constraint_t = vec![0.0; cols * 2];
        let mut full = vec![0.0; n_full];
        for (c, &x) in [lo, hi].iter().enumerate() {
            basis.bspline_derivative_into(x, 2, &mut full);
            for j in 0..cols {
                constraint_t[j * 2 + c] = full[j + 1];
            }
        }
        let q = householder_q(&constraint_t, cols, 2);
        let dim = cols - 2;
        let mut projection = vec![0.0; cols * dim];
        for j in 0..cols {
            for k in 0..dim {
                projection[j * dim + k] = q[j * cols + k + 2];
            }
        }
        basis.projection = projection;
        Ok(basis)
    }

    /// Interior knots at equally spaced quantiles of `values`.
    pub fn quantile_knots(values: &[f64], n_interior: usize) -> Vec<f64> {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut knots: Vec<f64> = (1..=n_interior)
            .map(|i| crate::stats::quantile_sorted(&sorted, i as f64 / (n_interior + 1) as f64))
            .collect();
        knots.dedup();
        knots
    }

    pub fn kind(&self) -> SplineKind {
        self.kind
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (f64, f64) {
        (self.boundary[0], self.boundary[1])
    }

    fn n_bspline(&self) -> usize {
        self.interior_knots.len() + self.degree + 1
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        match self.kind {
            SplineKind::Bspline => self.n_bspline(),
            SplineKind::NaturalCubic => self.interior_knots.len() + 1,
        }
    }

    fn find_span(&self, t: f64) -> usize {
        let n = self.n_bspline();
        let p = self.degree;
        if t >= self.knots[n] {
            return n - 1;
        }
        // last index i in [p, n-1] with knots[i] <= t
        let upper = self.knots[p + 1..n].partition_point(|&k| k <= t);
        p + upper
    }

    /// Nonzero B-spline functions and derivatives at `t ∈ [lo, hi]`:
    /// `ders[k][j]` is the k-th derivative of function `span - degree + j`.
    fn nonzero_derivatives(&self, t: f64, n_ders: usize) -> (usize, [[f64; MAX_ORDER]; 3]) {
        let p = self.degree;
        let u = &self.knots;
        let span = self.find_span(t);
        let mut ndu = [[0.0f64; MAX_ORDER]; MAX_ORDER];
        let mut left = [0.0f64; MAX_ORDER];
        let mut right = [0.0f64; MAX_ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = [[0.0f64; MAX_ORDER]; 3];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let n_ders = n_ders.min(p).min(2);
        if n_ders > 0 {
            let mut a = [[0.0f64; MAX_ORDER]; 2];
            for r in 0..=p {
                let (mut s1, mut s2) = (0usize, 1usize);
                a[0][0] = 1.0;
                for k in 1..=n_ders {
                    let mut d = 0.0;
                    let rk = r as isize - k as isize;
                    let pk = p - k;
                    if r >= k {
                        let rk = rk as usize;
                        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                        d = a[s2][0] * ndu[rk][pk];
                    }
                    let j1: usize = if rk >= -1 { 1 } else { (-rk) as usize };
                    let j2: usize = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                    for j in j1..=j2 {
                        let idx = (rk + j as isize) as usize;
                        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                        d += a[s2][j] * ndu[idx][pk];
                    }
                    if r <= pk {
                        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                        d += a[s2][k] * ndu[r][pk];
                    }
                    ders[k][r] = d;
                    core::mem::swap(&mut s1, &mut s2);
                }
            }
            let mut factor = p as f64;
            for k in 1..=n_ders {
                for j in 0..=p {
                    ders[k][j] *= factor;
                }
                factor *= (p - k) as f64;
            }
        }
        (span, ders)
    }

    /// Full clamped B-spline vector (all `n_bspline` functions) of the given
    /// derivative order at `t` inside the boundary.
    fn bspline_derivative_into(&self, t: f64, order: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if order > self.degree {
            return;
        }
        let (span, ders) = self.nonzero_derivatives(t, order);
        let first = span - self.degree;
        for j in 0..=self.degree {
            out[first + j] = ders[order][j];
        }
    }

    /// Basis values (`order = 0`) or derivatives (`order` 1 or 2) at `t`.
    pub fn derivative_into(&self, t: f64, order: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        let (lo, hi) = (self.boundary[0], self.boundary[1]);
        match self.kind {
            SplineKind::Bspline => {
                if (t < lo || t > hi) && order > 0 {
                    return;
                }
                self.bspline_derivative_into(t.clamp(lo, hi), order, out);
            }
            SplineKind::NaturalCubic => {
                if t < lo || t > hi {
                    let b = if t < lo { lo } else { hi };
                    match order {
                        0 => {
                            self.natural_into(b, 0, out, 1.0);
                            self.natural_into(b, 1, out, t - b);
                        }
                        1 => self.natural_into(b, 1, out, 1.0),
                        _ => {}
                    }
                } else if order <= 2 {
                    self.natural_into(t, order, out, 1.0);
                }
            }
        }
    }

    /// Adds `scale ·` natural basis derivatives at `t` (inside the boundary) to `out`.
    fn natural_into(&self, t: f64, order: usize, out: &mut [f64], scale: f64) {
        let dim = self.dim();
        let (span, ders) = self.nonzero_derivatives(t, order);
        let first = span - self.degree;
        for j in 0..=self.degree {
            let full = first + j;
            if full == 0 {
                continue;
            }
            let w = scale * ders[order][j];
            let row = &self.projection[(full - 1) * dim..full * dim];
            for (o, p) in out.iter_mut().zip(row) {
                *o += w * p;
            }
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self.kind {
            SplineKind::Bspline => {
                let x = t.clamp(self.boundary[0], self.boundary[1]);
                self.bspline_derivative_into(x, 0, out);
            }
            SplineKind::NaturalCubic => self.derivative_into(t, 0, out),
        }
    }

    /// `Σ_k coefs[k] · d^order B_k(t)` without materializing the basis.
    pub fn dot(&self, t: f64, coefs: &[f64], order: usize) -> f64 {
        debug_assert_eq!(coefs.len(), self.dim());
        let (lo, hi) = (self.boundary[0], self.boundary[1]);
        match self.kind {
            SplineKind::Bspline => {
                if (t < lo || t > hi) && order > 0 {
                    return 0.0;
                }
                let x = t.clamp(lo, hi);
                if order > self.degree {
                    return 0.0;
                }
                let (span, ders) = self.nonzero_derivatives(x, order);
                let first = span - self.degree;
                (0..=self.degree).map(|j| ders[order][j] * coefs[first + j]).sum()
            }
            SplineKind::NaturalCubic => {
                if t < lo || t > hi {
                    let b = if t < lo { lo } else { hi };
                    return match order {
                        0 => self.natural_dot(b, coefs, 0) + (t - b) * self.natural_dot(b, coefs, 1),
                        1 => self.natural_dot(b, coefs, 1),
                        _ => 0.0,
                    };
                }
                self.natural_dot(t, coefs, order)
            }
        }
    }

    fn natural_dot(&self, t: f64, coefs: &[f64], order: usize) -> f64 {
        // cubic pieces: the third derivative is not needed by any caller
        if order > 2 {
            return 0.0;
        }
        let dim = self.dim();
        let (span, ders) = self.nonzero_derivatives(t, order);
        let first = span - self.degree;
        let mut total = 0.0;
        for j in 0..=self.degree {
            let full = first + j;
            if full == 0 {
                continue;
            }
            let row = &self.projection[(full - 1) * dim..full * dim];
            let projected: f64 = row.iter().zip(coefs).map(|(p, c)| p * c).sum();
            total += ders[order][j] * projected;
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cox-de Boor recursion written directly from its definition.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, t: f64, last: bool) -> f64 {
        if p == 0 {
            let inside = knots[i] <= t && t < knots[i + 1];
            let at_end = last && t == knots[knots.len() - 1] && t == knots[i + 1] && knots[i] < knots[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t, last);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t, last);
        }
        v
    }

    fn cubic() -> SplineBasis {
        SplineBasis::bspline(3, vec![1.0, 2.5, 4.0, 7.0], 0.0, 10.0).unwrap()
    }

    #[test]
    fn rejects_malformed_knots() {
        assert!(SplineBasis::bspline(3, vec![2.0, 1.0], 0.0, 5.0).is_err());
        assert!(SplineBasis::bspline(3, vec![0.0, 1.0], 0.0, 5.0).is_err());
        assert!(SplineBasis::bspline(3, vec![1.0, 5.0], 0.0, 5.0).is_err());
        assert!(SplineBasis::natural_cubic(vec![1.0], 2.0, 2.0).is_err());
    }

    #[test]
    fn endpoint_values() {
        let b = cubic();
        let v = b.eval(0.0);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
        let v = b.eval(10.0);
        assert_eq!(*v.last().unwrap(), 1.0);
    }

    #[test]
    fn agrees_with_cox_de_boor() {
        let b = cubic();
        for step in 0..=200 {
            let t = 10.0 * step as f64 / 200.0;
            let v = b.eval(t);
            for (i, value) in v.iter().enumerate() {
                let oracle = cox_de_boor(&b.knots, i, 3, t, true);
                assert!((value - oracle).abs() < 1e-12, "t={t} i={i}: {value} vs {oracle}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = cubic();
        let coefs = [0.3, -1.0, 2.0, 0.5, 1.5, -0.7, 0.2, 1.1];
        for &t in &[0.3, 1.7, 3.3, 5.5, 8.9] {
            let h = 1e-5;
            let fd1 = (b.dot(t + h, &coefs, 0) - b.dot(t - h, &coefs, 0)) / (2.0 * h);
            assert!((b.dot(t, &coefs, 1) - fd1).abs() < 1e-7);
            let fd2 = (b.dot(t + h, &coefs, 1) - b.dot(t - h, &coefs, 1)) / (2.0 * h);
            assert!((b.dot(t, &coefs, 2) - fd2).abs() < 1e-6);
        }
    }

    #[test]
    fn natural_spline_has_zero_curvature_at_boundaries_and_is_linear_outside() {
        let b = SplineBasis::natural_cubic(vec![2.0, 5.0, 7.0], 0.0, 10.0).unwrap();
        assert_eq!(b.dim(), 4);
        let mut second = vec![0.0; 4];
        b.derivative_into(0.0, 2, &mut second);
        assert!(second.iter().all(|v| v.abs() < 1e-10));
        b.derivative_into(10.0, 2, &mut second);
        assert!(second.iter().all(|v| v.abs() < 1e-10));
        // no intercept: all functions vanish at the lower boundary
        assert!(b.eval(0.0).iter().all(|v| v.abs() < 1e-12));
        let coefs = [1.0, -2.0, 0.5, 3.0];
        let slope = b.dot(10.0, &coefs, 1);
        let extrapolated = b.dot(12.0, &coefs, 0);
        assert!((extrapolated - b.dot(10.0, &coefs, 0) - 2.0 * slope).abs() < 1e-10);
        // continuity of the value and first derivative at interior knots
        for &k in &[2.0, 5.0, 7.0] {
            let h = 1e-9;
            assert!((b.dot(k - h, &coefs, 0) - b.dot(k + h, &coefs, 0)).abs() < 1e-7);
            assert!((b.dot(k - h, &coefs, 1) - b.dot(k + h, &coefs, 1)).abs() < 1e-6);
        }
    }

    #[test]
    fn natural_spline_basis_is_linearly_independent() {
        let b = SplineBasis::natural_cubic(vec![2.0, 5.0, 7.0], 0.0, 10.0).unwrap();
        // Gram matrix over a grid is positive definite
        let dim = b.dim();
        let mut gram = vec![0.0; dim * dim];
        for step in 0..=100 {
            let v = b.eval(step as f64 / 10.0);
            for i in 0..dim {
                for j in 0..dim {
                    gram[i * dim + j] += v[i] * v[j];
                }
            }
        }
        assert!(crate::linalg::cholesky(&gram, dim).is_ok());
    }

    #[test]
    fn serde_roundtrip_rebuilds_caches() {
        let b = SplineBasis::natural_cubic(vec![2.0, 5.0], 0.0, 10.0).unwrap();
        let def: SplineBasisDef = b.clone().into();
        let back = SplineBasis::try_from(def).unwrap();
        assert_eq!(b, back);
    }

    proptest::proptest! {
        #[test]
        fn partition_of_unity_and_nonnegativity(t in 0.0f64..=10.0) {
            let v = cubic().eval(t);
            proptest::prop_assert!(v.iter().all(|&x| x >= -1e-15));
            proptest::prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
