//! Uniform hypercube instances `[c, c+1]ⁿ` and the matching map used to
//! show that grand bundling stops being optimal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::exclusion::find_critical_price;
use super::region_parts;
use crate::distributions::ProductDensity;
use crate::error::{Error, Result};
use crate::measure::{build_transformed, QuadConfig, TransformedMeasure};
use crate::region::Region;

/// Uniform values on `[c, c+1]ⁿ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HypercubeInstance {
    pub n: usize,
    pub c: f64,
}

impl HypercubeInstance {
    pub fn new(n: usize, c: f64) -> Result<Self> {
        if n == 0 || !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Invalid(format!("hypercube needs n >= 1 and c >= 0 (got n = {n}, c = {c})")));
        }
        Ok(HypercubeInstance { n, c })
    }

    pub fn density(&self) -> Result<ProductDensity> {
        ProductDensity::uniform_box(&vec![self.c; self.n], &vec![self.c + 1.0; self.n])
    }

    pub fn measure(&self) -> Result<TransformedMeasure> {
        Ok(build_transformed(&self.density()?))
    }

    /// `ρ = (c+1)/c`, infinite at `c = 0`.
    pub fn rho(&self) -> f64 {
        (self.c + 1.0) / self.c
    }

    /// `Z(h) = {Σ(xᵢ - c) <= h}`, a price of `h + nc` for the bundle.
    pub fn z(&self, h: f64) -> Region {
        Region::sum_at_most(self.n, h + self.n as f64 * self.c)
    }

    /// `μ₋(Z(h))` by quadrature.
    pub fn mu_minus(&self, h: f64) -> Result<f64> {
        let q = QuadConfig::for_dim(self.n);
        Ok(region_parts(&self.measure()?, &self.z(h), &q)?.1)
    }

    /// Closed form of `μ₋(Z(1))`.
    pub fn mu_minus_formula(&self) -> f64 {
        let n = self.n as f64;
        (n + 1.0) / factorial(self.n) + n * self.c / factorial(self.n - 1)
    }

    /// `h*` with `μ(Z(h*)) = 0`, searched on `(0, n)`.
    pub fn critical_h(&self) -> Result<f64> {
        let mu = self.measure()?;
        let fam = |h: f64| Ok(self.z(h));
        find_critical_price(&mu, &fam, (1e-9, self.n as f64 * (1.0 - 1e-9)), 1e-10)
    }

    /// Bundle price `h* + nc`.
    pub fn critical_price(&self) -> Result<f64> {
        Ok(self.critical_h()? + self.n as f64 * self.c)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// True iff `(n+1)/n! + nc/(n-1)! < 1`, which rules out grand bundling.
pub fn notbundling_bound(n: usize, c: f64) -> bool {
    n >= 1 && HypercubeInstance { n, c }.mu_minus_formula() < 1.0
}

/// Largest last coordinate allowed in the matching domain.
pub fn matching_domain_bound(rho: f64, n: usize) -> f64 {
    1.0 - ((rho - 1.0) / rho).powf(1.0 / (n as f64 - 1.0))
}

fn check_matching_args(rho: f64, n: usize) -> Result<()> {
    if n < 2 || !(rho > 1.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("matching map needs n >= 2 and finite rho > 1 (got n = {n}, rho = {rho})")));
    }
    Ok(())
}

const DOMAIN_TOL: f64 = 1e-12;

/// `1 = x₁ >= … >= xₙ` with `xₙ` at most the domain bound.
pub fn in_matching_domain(x: &[f64], rho: f64, n: usize) -> bool {
    x.len() == n
        && (x[0] - 1.0).abs() <= DOMAIN_TOL
        && x.windows(2).all(|w| w[1] <= w[0] + DOMAIN_TOL)
        && x[n - 1] >= -DOMAIN_TOL
        && x[n - 1] <= matching_domain_bound(rho, n) + DOMAIN_TOL
}

/// `1 >= y₁ >= … >= y_{n-1} >= yₙ = 0`.
pub fn in_matching_image(y: &[f64], n: usize) -> bool {
    y.len() == n
        && y[0] <= 1.0 + DOMAIN_TOL
        && y.windows(2).all(|w| w[1] <= w[0] + DOMAIN_TOL)
        && y[n - 1].abs() <= DOMAIN_TOL
}

/// The map from the face `{x₁ = 1}` piece `A` onto the face `{yₙ = 0}` piece
/// `B` that scales surface measure by `ρ` and never increases a coordinate.
pub fn hypercube_phi(x: &[f64], rho: f64, n: usize) -> Result<Vec<f64>> {
    check_matching_args(rho, n)?;
    if !in_matching_domain(x, rho, n) {
        return Err(Error::Domain(format!("{x:?} lies outside the matching domain")));
    }
    let m = (n - 1) as f64;
    let a = 1.0 - x[n - 1];
    let y1 = (1.0 - rho * (1.0 - a.powf(m))).max(0.0).powf(1.0 / m);
    let mut y = vec![0.0; n];
    y[0] = y1;
    for i in 1..n - 1 {
        y[i] = (x[i] - x[n - 1]) / a * y1;
    }
    Ok(y)
}

/// Inverse of [`hypercube_phi`].
pub fn hypercube_phi_inverse(y: &[f64], rho: f64, n: usize) -> Result<Vec<f64>> {
    check_matching_args(rho, n)?;
    if !in_matching_image(y, n) {
        return Err(Error::Domain(format!("{y:?} lies outside the matching image")));
    }
    let m = (n - 1) as f64;
    let y1 = y[0].max(0.0);
    let xn = 1.0 - (1.0 - (1.0 - y1.powf(m)) / rho).powf(1.0 / m);
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    x[n - 1] = xn;
    for i in 1..n - 1 {
        // At y₁ = 0 the whole fibre collapses; pick the diagonal point.
        x[i] = if y1 > 0.0 { xn + y[i] * (1.0 - xn) / y1 } else { xn };
    }
    Ok(x)
}

/// The map in face coordinates: `w = (xₙ, x₂, …, x_{n-1}) ↦ (y₁, …, y_{n-1})`.
pub fn phi_reduced(w: &[f64], rho: f64, n: usize) -> Result<Vec<f64>> {
    let mut x = vec![1.0];
    x.extend_from_slice(&w[1..]);
    x.push(w[0]);
    let y = hypercube_phi(&x, rho, n)?;
    Ok(y[..n - 1].to_vec())
}

/// Analytic Jacobian of [`phi_reduced`] (row = output, column = input).
pub fn phi_reduced_jacobian(w: &[f64], rho: f64, n: usize) -> Result<Vec<Vec<f64>>> {
    let y = phi_reduced(w, rho, n)?;
    let m = n - 1;
    let s = w[0];
    let a = 1.0 - s;
    let y1 = y[0];
    let dy1 = -rho * a.powi(m as i32 - 1) / y1.powi(m as i32 - 1);
    let mut j = vec![vec![0.0; m]; m];
    j[0][0] = dy1;
    for i in 1..m {
        let xi = w[i];
        j[i][0] = -y1 / a + (xi - s) * dy1 / a + (xi - s) * y1 / (a * a);
        j[i][i] = y1 / a;
    }
    Ok(j)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs())).unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

/// Richardson-extrapolated central-difference Jacobian of [`phi_reduced`].
pub fn phi_reduced_jacobian_fd(w: &[f64], rho: f64, n: usize, h: f64) -> Result<Vec<Vec<f64>>> {
    let m = n - 1;
    let central = |c: usize, h: f64| -> Result<Vec<f64>> {
        let mut wp = w.to_vec();
        let mut wm = w.to_vec();
        wp[c] += h;
        wm[c] -= h;
        let (yp, ym) = (phi_reduced(&wp, rho, n)?, phi_reduced(&wm, rho, n)?);
        Ok((0..m).map(|r| (yp[r] - ym[r]) / (2.0 * h)).collect())
    };
    let mut j = vec![vec![0.0; m]; m];
    for c in 0..m {
        // Richardson step: cancels the h^2 term of the central difference.
        let (coarse, fine) = (central(c, h)?, central(c, 0.5 * h)?);
        for r in 0..m {
            j[r][c] = (4.0 * fine[r] - coarse[r]) / 3.0;
        }
    }
    Ok(j)
}

/// Lower bound on `xₙ` implied by `φ₁(x) <= ε`.
pub fn phi_epsilon_bound(eps: f64, rho: f64, n: usize) -> f64 {
    let m = (n - 1) as f64;
    1.0 - ((eps.powf(m) + rho - 1.0) / rho).powf(1.0 / m)
}

/// Uniform sample of the matching domain (in full coordinates).
pub fn sample_matching_domain(rho: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let b = matching_domain_bound(rho, n);
    loop {
        let mut t: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>()).collect();
        t.sort_by(|a, b| b.total_cmp(a));
        if t[n - 2] <= b {
            let mut x = vec![1.0];
            x.extend(t);
            return x;
        }
    }
}

/// Monte Carlo evidence that the matching map scales surface measure by `ρ`.
#[derive(Clone, Debug, Serialize)]
pub struct MatchingMonteCarlo {
    pub samples: usize,
    /// Estimated `area(B) / area(A)` from uniform samples of the unit face.
    pub area_ratio: f64,
    /// Largest `|P(φ(X)₁ <= t) - t^{n-1}|` over test levels, `X` uniform on `A`.
    pub pushforward_deviation: f64,
    /// Largest `|φ⁻¹(φ(x)) - x|` seen.
    pub roundtrip_error: f64,
}

pub fn matching_monte_carlo(rho: f64, n: usize, samples: usize, seed: u64) -> Result<MatchingMonteCarlo> {
    check_matching_args(rho, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = matching_domain_bound(rho, n);
    let (mut in_a, mut in_b) = (0usize, 0usize);
    for _ in 0..samples {
        let t: Vec<f64> = (0..n - 1).map(|_| rng.gen::<f64>()).collect();
        let ordered = t.windows(2).all(|w| w[1] <= w[0]);
        if ordered {
            in_b += 1;
            if t[n - 2] <= b {
                in_a += 1;
            }
        }
    }
    let levels = [0.25, 0.5, 0.75];
    let mut below = [0usize; 3];
    let mut roundtrip: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_matching_domain(rho, n, &mut rng);
        let y = hypercube_phi(&x, rho, n)?;
        for (k, &t) in levels.iter().enumerate() {
            if y[0] <= t {
                below[k] += 1;
            }
        }
        if y[0] > 1e-6 {
            let back = hypercube_phi_inverse(&y, rho, n)?;
            roundtrip = roundtrip.max(back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    let dev = levels
        .iter()
        .zip(below)
        .map(|(&t, c)| (c as f64 / samples as f64 - t.powi(n as i32 - 1)).abs())
        .fold(0.0, f64::max);
    Ok(MatchingMonteCarlo {
        samples,
        area_ratio: in_b as f64 / in_a.max(1) as f64,
        pushforward_deviation: dev,
        roundtrip_error: roundtrip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_examples() {
        assert_eq!(hypercube_phi(&[1.0, 0.0], 2.0, 2).unwrap(), vec![1.0, 0.0]);
        let y = hypercube_phi(&[1.0, 0.5], 2.0, 2).unwrap();
        assert!(y[0].abs() < 1e-12 && y[1] == 0.0);
        assert!(matches!(hypercube_phi(&[1.0, 0.6], 2.0, 2), Err(Error::Domain(_))));
        assert!(matches!(hypercube_phi(&[0.9, 0.1], 2.0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn bound_examples() {
        assert!(notbundling_bound(3, 0.0));
        assert!(!notbundling_bound(2, 0.0));
        assert!(notbundling_bound(4, 1.0));
        assert!((HypercubeInstance::new(4, 1.0).unwrap().mu_minus_formula() - 0.875).abs() < 1e-15);
    }

    #[test]
    fn jacobian_is_minus_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=4 {
            for rho in [1.5, 2.0, 11.0] {
                for _ in 0..20 {
                    let x = sample_matching_domain(rho, n, &mut rng);
                    let mut w = vec![x[n - 1]];
                    w.extend_from_slice(&x[1..n - 1]);
                    let d = determinant(phi_reduced_jacobian(&w, rho, n).unwrap());
                    assert!((d + rho).abs() < 1e-9 * rho, "n={n} rho={rho} det={d}");
                }
            }
        }
    }

    #[test]
    fn volumes_match() {
        let mc = matching_monte_carlo(2.0, 3, 200_000, 1).unwrap();
        assert!((mc.area_ratio / 2.0 - 1.0).abs() < 0.02, "{mc:?}");
        assert!(mc.pushforward_deviation < 0.01);
        assert!(mc.roundtrip_error < 1e-9);
    }

    #[test]
    fn mu_minus_two_dims() {
        let h = HypercubeInstance::new(2, 1.0).unwrap();
        assert!((h.mu_minus(1.0).unwrap() - h.mu_minus_formula()).abs() < 1e-9);
    }
}
