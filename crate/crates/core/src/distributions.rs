//! Product type distributions on rectangular boxes.
//!
//! Each coordinate carries a one-dimensional family (uniform, beta,
//! exponential, power law). Unbounded families are truncated and
//! renormalized; the lost tail mass is kept as `deficit`.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta, beta_reg};

use crate::error::{Error, Result};

/// Axis-aligned box `[lows[i], highs[i]]` in `n` dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeBox {
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
}

impl TypeBox {
    pub fn new(lows: Vec<f64>, highs: Vec<f64>) -> Result<Self> {
        let b = TypeBox { lows, highs };
        b.validate()?;
        Ok(b)
    }

    /// The unit cube `[0,1]^n`.
    pub fn unit(n: usize) -> Self {
        TypeBox { lows: vec![0.0; n], highs: vec![1.0; n] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lows.is_empty() || self.lows.len() != self.highs.len() {
            return Err(Error::Invalid("box needs matching non-empty lows/highs".into()));
        }
        for (i, (&lo, &hi)) in self.lows.iter().zip(&self.highs).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Invalid(format!("box axis {i} is not finite")));
            }
            if lo < 0.0 {
                return Err(Error::Invalid(format!("box axis {i} has negative low {lo}")));
            }
            if lo >= hi {
                return Err(Error::Invalid(format!("box axis {i} is empty: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lows.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.highs[i] - self.lows[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    /// Membership with an absolute slack `tol` on every face.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lows.iter().zip(&self.highs))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }

    fn scale(&self) -> f64 {
        self.highs.iter().fold(1.0f64, |m, &h| m.max(h.abs()))
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "point has {} coordinates, box has {}",
                x.len(),
                self.dim()
            )));
        }
        if !self.contains(x, 1e-12 * self.scale()) {
            return Err(Error::Domain(format!("point {x:?} lies outside the box")));
        }
        Ok(())
    }
}

/// One-dimensional family before truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Family {
    Uniform { a: f64, b: f64 },
    Beta { a: f64, b: f64 },
    Exponential { lambda: f64 },
    #[serde(rename = "powerlaw")]
    PowerLaw { k: f64 },
}

impl Family {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Family::Uniform { a, b } => a.is_finite() && b.is_finite() && a >= 0.0 && a < b,
            Family::Beta { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            Family::Exponential { lambda } => lambda > 0.0 && lambda.is_finite(),
            Family::PowerLaw { k } => k > 1.0 && k.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid parameters for {self:?}")))
        }
    }

    /// Natural support of the untruncated family.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Family::Uniform { a, b } => (a, b),
            Family::Beta { .. } => (0.0, 1.0),
            Family::Exponential { .. } | Family::PowerLaw { .. } => (0.0, f64::INFINITY),
        }
    }

    fn raw_pdf(&self, z: f64, beta_norm: f64) -> f64 {
        match *self {
            Family::Uniform { a, b } => 1.0 / (b - a),
            Family::Beta { a, b } => z.powf(a - 1.0) * (1.0 - z).powf(b - 1.0) / beta_norm,
            Family::Exponential { lambda } => lambda * (-lambda * z).exp(),
            Family::PowerLaw { k } => (k - 1.0) * (1.0 + z).powf(-k),
        }
    }

    fn raw_derivative(&self, z: f64, beta_norm: f64) -> f64 {
        match *self {
            Family::Uniform { .. } => 0.0,
            Family::Beta { a, b } => {
                let mut d = 0.0;
                if a != 1.0 {
                    d += (a - 1.0) * z.powf(a - 2.0) * (1.0 - z).powf(b - 1.0);
                }
                if b != 1.0 {
                    d -= (b - 1.0) * z.powf(a - 1.0) * (1.0 - z).powf(b - 2.0);
                }
                d / beta_norm
            }
            Family::Exponential { lambda } => -lambda * lambda * (-lambda * z).exp(),
            Family::PowerLaw { k } => -k * (k - 1.0) * (1.0 + z).powf(-k - 1.0),
        }
    }

    /// Untruncated survival function `1 - F(z)`.
    fn raw_survival(&self, z: f64) -> f64 {
        match *self {
            Family::Uniform { a, b } => ((b - z) / (b - a)).clamp(0.0, 1.0),
            Family::Beta { a, b } => {
                if z <= 0.0 {
                    1.0
                } else if z >= 1.0 {
                    0.0
                } else {
                    beta_reg(b, a, 1.0 - z)
                }
            }
            Family::Exponential { lambda } => {
                if z == f64::INFINITY {
                    0.0
                } else {
                    (-lambda * z.max(0.0)).exp()
                }
            }
            Family::PowerLaw { k } => {
                if z == f64::INFINITY {
                    0.0
                } else {
                    (1.0 + z.max(0.0)).powf(1.0 - k)
                }
            }
        }
    }

    /// Truncation point with tail mass at most `5e-7`, so a two-item product
    /// loses less than `1e-6`.
    pub fn default_truncation(&self) -> f64 {
        match *self {
            Family::Uniform { b, .. } => b,
            Family::Beta { .. } => 1.0,
            Family::Exponential { lambda } => 15.0 / lambda,
            Family::PowerLaw { k } => 1.05 * 2e6f64.powf(1.0 / (k - 1.0)) - 1.0,
        }
    }
}

/// A family restricted (and renormalized) to `[low, high]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalDensity {
    family: Family,
    low: f64,
    high: f64,
    /// Untruncated probability of `[low, high]`.
    mass: f64,
    beta_norm: f64,
}

impl MarginalDensity {
    pub fn new(family: Family) -> Result<Self> {
        family.validate()?;
        let (low, high) = family.support();
        Self::build(family, low, high)
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(Family::Uniform { a, b })
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        Self::new(Family::Beta { a, b })
    }

    /// Untruncated exponential; truncate before building a product density.
    pub fn exponential(lambda: f64) -> Result<Self> {
        Self::new(Family::Exponential { lambda })
    }

    /// Untruncated power law with density `(k-1)/(1+z)^k`.
    pub fn power_law(k: f64) -> Result<Self> {
        Self::new(Family::PowerLaw { k })
    }

    fn build(family: Family, low: f64, high: f64) -> Result<Self> {
        let beta_norm = match family {
            Family::Beta { a, b } => beta(a, b),
            _ => 1.0,
        };
        let mass = family.raw_survival(low) - family.raw_survival(high);
        if !(mass > 0.0) {
            return Err(Error::Invalid(format!("interval [{low}, {high}] carries no mass")));
        }
        Ok(MarginalDensity { family, low, high, mass, beta_norm })
    }

    /// Restrict to `[low, high]` inside the natural support and renormalize.
    pub fn truncated(&self, low: f64, high: f64) -> Result<Self> {
        let (s_lo, s_hi) = self.family.support();
        if !(low >= s_lo - 1e-15 && high <= s_hi && low < high) {
            return Err(Error::Invalid(format!(
                "truncation [{low}, {high}] not inside support [{s_lo}, {s_hi}]"
            )));
        }
        Self::build(self.family, low.max(s_lo), high)
    }

    /// Truncate an unbounded family at its default point; bounded ones are returned unchanged.
    pub fn with_default_truncation(&self) -> Result<Self> {
        if self.high.is_finite() {
            Ok(self.clone())
        } else {
            self.truncated(self.low, self.family.default_truncation())
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn is_bounded(&self) -> bool {
        self.high.is_finite()
    }

    /// Probability of the untruncated family outside `[low, high]`.
    pub fn deficit(&self) -> f64 {
        1.0 - self.mass
    }

    /// Density; zero outside `[low, high]`.
    pub fn pdf(&self, z: f64) -> f64 {
        if z < self.low || z > self.high {
            return 0.0;
        }
        self.family.raw_pdf(z, self.beta_norm) / self.mass
    }

    /// First derivative of the density.
    pub fn derivative(&self, z: f64) -> Result<f64> {
        let d = self.derivative_unchecked(z);
        if d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Singularity(format!("density derivative undefined at {z}")))
        }
    }

    pub(crate) fn derivative_unchecked(&self, z: f64) -> f64 {
        if z < self.low || z > self.high {
            return 0.0;
        }
        self.family.raw_derivative(z, self.beta_norm) / self.mass
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z <= self.low {
            return 0.0;
        }
        if z >= self.high {
            return 1.0;
        }
        ((self.family.raw_survival(self.low) - self.family.raw_survival(z)) / self.mass)
            .clamp(0.0, 1.0)
    }

    /// `1 - F(z)`, computed without cancellation in the upper tail.
    pub fn survival(&self, z: f64) -> f64 {
        if z <= self.low {
            return 1.0;
        }
        if z >= self.high {
            return 0.0;
        }
        ((self.family.raw_survival(z) - self.family.raw_survival(self.high)) / self.mass)
            .clamp(0.0, 1.0)
    }

    /// Myerson virtual value `z - (1 - F(z)) / f(z)`.
    pub fn virtual_value(&self, z: f64) -> Result<f64> {
        let f = self.pdf(z);
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::Singularity(format!("density is {f} at {z}")));
        }
        Ok(z - self.survival(z) / f)
    }
}

/// Independent product of marginals on a box.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductDensity {
    bx: TypeBox,
    marginals: Vec<MarginalDensity>,
}

impl ProductDensity {
    /// Box taken from the marginals; unbounded ones get their default truncation.
    pub fn new(marginals: Vec<MarginalDensity>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Invalid("need at least one marginal".into()));
        }
        let marginals = marginals
            .iter()
            .map(|m| m.with_default_truncation())
            .collect::<Result<Vec<_>>>()?;
        let bx = TypeBox::new(
            marginals.iter().map(|m| m.low).collect(),
            marginals.iter().map(|m| m.high).collect(),
        )?;
        Ok(ProductDensity { bx, marginals })
    }

    /// Marginals truncated to the given box.
    pub fn with_box(marginals: Vec<MarginalDensity>, bx: TypeBox) -> Result<Self> {
        bx.validate()?;
        if marginals.len() != bx.dim() {
            return Err(Error::Invalid("marginal count differs from box dimension".into()));
        }
        let marginals = marginals
            .iter()
            .zip(bx.lows.iter().zip(&bx.highs))
            .map(|(m, (&lo, &hi))| {
                if m.low == lo && m.high == hi {
                    Ok(m.clone())
                } else {
                    m.truncated(lo, hi)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductDensity { bx, marginals })
    }

    /// Uniform density on `[lows, highs]`.
    pub fn uniform_box(lows: &[f64], highs: &[f64]) -> Result<Self> {
        let ms = lows
            .iter()
            .zip(highs)
            .map(|(&a, &b)| MarginalDensity::uniform(a, b))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ms)
    }

    pub fn type_box(&self) -> &TypeBox {
        &self.bx
    }

    pub fn marginals(&self) -> &[MarginalDensity] {
        &self.marginals
    }

    pub fn dim(&self) -> usize {
        self.bx.dim()
    }

    /// Joint density `prod f_i(x_i)`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.bx.check_point(x)?;
        Ok(self.density_unchecked(x))
    }

    pub(crate) fn density_unchecked(&self, x: &[f64]) -> f64 {
        self.marginals.iter().zip(x).map(|(m, &z)| m.pdf(z)).product()
    }

    /// Gradient of the joint density.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.bx.check_point(x)?;
        let g = self.gradient_unchecked(x);
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::Singularity(format!("density gradient undefined at {x:?}")))
        }
    }

    pub(crate) fn gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let pdfs: Vec<f64> = self.marginals.iter().zip(x).map(|(m, &z)| m.pdf(z)).collect();
        (0..n)
            .map(|i| {
                let others: f64 = (0..n).filter(|&j| j != i).map(|j| pdfs[j]).product();
                self.marginals[i].derivative_unchecked(x[i]) * others
            })
            .collect()
    }

    /// Total probability lost to truncation (`1 - prod mass_i`).
    pub fn truncation_deficit(&self) -> f64 {
        1.0 - self.marginals.iter().map(|m| m.mass).product::<f64>()
    }
}

/// Marginal as it appears in instance files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum MarginalSpec {
    Uniform { a: f64, b: f64 },
    Beta { a: f64, b: f64 },
    Exponential {
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncation: Option<f64>,
    },
    #[serde(rename = "powerlaw")]
    PowerLaw {
        k: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncation: Option<f64>,
    },
}

impl MarginalSpec {
    pub fn build(&self) -> Result<MarginalDensity> {
        match *self {
            MarginalSpec::Uniform { a, b } => MarginalDensity::uniform(a, b),
            MarginalSpec::Beta { a, b } => MarginalDensity::beta(a, b),
            MarginalSpec::Exponential { lambda, truncation } => {
                let m = MarginalDensity::exponential(lambda)?;
                match truncation {
                    Some(t) => m.truncated(0.0, t),
                    None => m.with_default_truncation(),
                }
            }
            MarginalSpec::PowerLaw { k, truncation } => {
                let m = MarginalDensity::power_law(k)?;
                match truncation {
                    Some(t) => m.truncated(0.0, t),
                    None => m.with_default_truncation(),
                }
            }
        }
    }
}

/// JSON form: `{"marginals":[{"family":"beta","a":1,"b":2}], "box":{"lows":[..],"highs":[..]}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub marginals: Vec<MarginalSpec>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub type_box: Option<TypeBox>,
}

impl DistributionSpec {
    pub fn build(&self) -> Result<ProductDensity> {
        let ms = self.marginals.iter().map(|m| m.build()).collect::<Result<Vec<_>>>()?;
        match &self.type_box {
            Some(b) => ProductDensity::with_box(ms, b.clone()),
            None => ProductDensity::new(ms),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn density_examples() {
        let u = ProductDensity::uniform_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(close(u.density(&[0.3, 0.7]).unwrap(), 1.0, 1e-15));
        let b = ProductDensity::new(vec![MarginalDensity::beta(1.0, 2.0).unwrap(); 2]).unwrap();
        assert!(close(b.density(&[0.0, 0.0]).unwrap(), 4.0, 1e-12));
        let r = ProductDensity::uniform_box(&[4.0, 4.0], &[16.0, 7.0]).unwrap();
        assert!(close(r.density(&[10.0, 5.5]).unwrap(), 1.0 / 36.0, 1e-14));
        assert!(matches!(u.density(&[1.5, 0.2]), Err(Error::Domain(_))));
    }

    #[test]
    fn gradient_examples() {
        let u = ProductDensity::uniform_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(u.gradient(&[0.2, 0.9]).unwrap(), vec![0.0, 0.0]);
        let b = ProductDensity::new(vec![MarginalDensity::beta(1.0, 2.0).unwrap(); 2]).unwrap();
        let g = b.gradient(&[0.5, 0.5]).unwrap();
        assert!(close(g[0], -2.0, 1e-12) && close(g[1], -2.0, 1e-12));
        let e = MarginalDensity::exponential(1.7).unwrap();
        assert!(close(e.derivative(0.8).unwrap(), -1.7 * e.pdf(0.8), 1e-14));
        let sharp = ProductDensity::new(vec![MarginalDensity::beta(0.5, 2.0).unwrap()]).unwrap();
        assert!(matches!(sharp.gradient(&[0.0]), Err(Error::Singularity(_))));
    }

    #[test]
    fn virtual_value_examples() {
        let u = MarginalDensity::uniform(0.0, 1.0).unwrap();
        assert!(close(u.virtual_value(0.5).unwrap(), 0.0, 1e-15));
        assert!(close(u.virtual_value(1.0).unwrap(), 1.0, 1e-15));
        let e = MarginalDensity::exponential(1.0).unwrap();
        assert!(close(e.virtual_value(2.0).unwrap(), 1.0, 1e-12));
        let b = MarginalDensity::beta(2.0, 2.0).unwrap();
        assert!(matches!(b.virtual_value(0.0), Err(Error::Singularity(_))));
    }

    #[test]
    fn truncation_renormalizes() {
        for m in [
            MarginalDensity::exponential(2.0).unwrap(),
            MarginalDensity::power_law(6.0).unwrap(),
            MarginalDensity::power_law(7.0).unwrap(),
        ] {
            let t = m.with_default_truncation().unwrap();
            assert!(t.deficit() <= 5e-7 && t.deficit() > 0.0);
            assert_eq!(t.cdf(t.low()), 0.0);
            assert_eq!(t.cdf(t.high()), 1.0);
            assert!((t.cdf(t.high() * (1.0 - 1e-15)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cdf_matches_integrated_pdf() {
        for m in [
            MarginalDensity::beta(1.0, 2.0).unwrap(),
            MarginalDensity::beta(2.5, 1.5).unwrap(),
            MarginalDensity::exponential(1.3).unwrap().truncated(0.0, 5.0).unwrap(),
            MarginalDensity::power_law(6.0).unwrap().truncated(0.0, 10.0).unwrap(),
        ] {
            let z = m.low() + 0.37 * (m.high() - m.low());
            // Composite Simpson oracle.
            let n = 20_000;
            let h = (z - m.low()) / n as f64;
            let mut s = m.pdf(m.low()) + m.pdf(z);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * m.pdf(m.low() + i as f64 * h);
            }
            assert!(close(m.cdf(z), s * h / 3.0, 1e-8), "{:?}", m.family());
        }
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"marginals":[{"family":"beta","a":1,"b":2},{"family":"exponential","lambda":2}]}"#;
        let spec: DistributionSpec = serde_json::from_str(json).unwrap();
        let d = spec.build().unwrap();
        assert_eq!(d.type_box().highs, vec![1.0, 7.5]);
        let back: DistributionSpec =
            serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"marginals":[{"family":"uniform","a":1,"b":0}]}"#;
        let spec: DistributionSpec = serde_json::from_str(bad).unwrap();
        assert!(spec.build().is_err());
    }
}
