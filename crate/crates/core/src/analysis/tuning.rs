//! Step size, scaling rate and quantization level selection.

use std::fmt::Write as _;

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::codec::bits_per_scalar;
use crate::error::{Error, Result};
use crate::linalg::norm_inf;
use crate::problems::{AggregativeProblem, RegularityConstants};

fn check_kappa(kappa: f64) -> Result<()> {
    if (0.0..1.0).contains(&kappa) {
        Ok(())
    } else {
        Err(Error::Domain(format!("kappa must lie in [0, 1), got {kappa}")))
    }
}

/// Closed-form step-size bound
/// `mu (1-k)^2 / (l3 (mu + l1 + l2 l3) ((1-k)(l1 + l2 + l2 l3) + 2 l2 l3))`.
pub fn alpha_upper_bound(c: &RegularityConstants, kappa: f64) -> Result<f64> {
    c.validate()?;
    check_kappa(kappa)?;
    let RegularityConstants { mu, l1, l2, l3 } = *c;
    let gap = 1.0 - kappa;
    Ok(mu * gap * gap / (l3 * (mu + l1 + l2 * l3) * (gap * (l1 + l2 + l2 * l3) + 2.0 * l2 * l3)))
}

/// The exact positive root of `det(I - H(alpha)) = 0`.
///
/// Expanding the determinant gives `alpha (mu (1-k)^2 - alpha D)` with `D`
/// below, so `H(alpha)` has spectral radius below one exactly for
/// `alpha < mu (1-k)^2 / D`. This is generally smaller than
/// [`alpha_upper_bound`].
pub fn alpha_stability_threshold(c: &RegularityConstants, kappa: f64) -> Result<f64> {
    c.validate()?;
    check_kappa(kappa)?;
    let RegularityConstants { mu, l1, l2, l3 } = *c;
    let k = kappa;
    let d = l3
        * (l1 * l1 * l3 + l1 * l1 + 3.0 * l1 * l2 * l3 * l3 + 4.0 * l1 * l2 * l3 + l1 * l2 + l1 * mu
            + 3.0 * l2 * l3 * mu
            + l2 * mu
            - k * (l1 * l1 * l3
                + l1 * l1
                + l1 * l2 * l3 * l3
                + 2.0 * l1 * l2 * l3
                + l1 * l2
                + l1 * mu
                + l2 * l3 * mu
                + l2 * mu));
    Ok(mu * (1.0 - k) * (1.0 - k) / d)
}

/// The 3x3 error-coupling matrix.
pub fn build_h(alpha: f64, c: &RegularityConstants, kappa: f64) -> Result<Matrix3<f64>> {
    c.validate()?;
    check_kappa(kappa)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("alpha must be nonnegative, got {alpha}")));
    }
    let RegularityConstants { mu, l1, l2, l3 } = *c;
    let a = alpha;
    Ok(Matrix3::new(
        1.0 - mu * a,
        a * l1,
        a * l3,
        a * l1 * l3 * (1.0 + l3),
        kappa + a * l1 * l3,
        a * l3 * l3,
        a * l1 * l2 * (1.0 + l3).powi(2),
        a * l1 * l2 * (1.0 + l3) + 2.0 * l2,
        kappa + a * l2 * l3 * (1.0 + l3),
    ))
}

fn char_poly(h: &Matrix3<f64>) -> [f64; 3] {
    // lambda^3 + a lambda^2 + b lambda + c
    let tr = h.trace();
    let minors = h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)] + h[(0, 0)] * h[(2, 2)]
        - h[(0, 2)] * h[(2, 0)]
        + h[(1, 1)] * h[(2, 2)]
        - h[(1, 2)] * h[(2, 1)];
    [-tr, minors, -h.determinant()]
}

/// Eigenvalues of a 3x3 matrix from its characteristic cubic (Cardano),
/// each refined by a few Newton steps.
pub fn eigenvalues(h: &Matrix3<f64>) -> [Complex64; 3] {
    let [a, b, c] = char_poly(h);
    let p = b - a * a / 3.0;
    let q = 2.0 * a.powi(3) / 27.0 - a * b / 3.0 + c;
    let shift = Complex64::new(-a / 3.0, 0.0);
    let disc = Complex64::new(q * q / 4.0 + p.powi(3) / 27.0, 0.0).sqrt();
    let mut u = (Complex64::new(-q / 2.0, 0.0) + disc).cbrt();
    if u.norm() < 1e-300 {
        u = (Complex64::new(-q / 2.0, 0.0) - disc).cbrt();
    }
    let omega = Complex64::new(-0.5, 3f64.sqrt() / 2.0);
    let mut roots = [Complex64::new(0.0, 0.0); 3];
    let mut w = Complex64::new(1.0, 0.0);
    for root in roots.iter_mut() {
        let uk = u * w;
        let t = if uk.norm() < 1e-300 {
            Complex64::new(0.0, 0.0)
        } else {
            uk - p / (3.0 * uk)
        };
        *root = t + shift;
        w *= omega;
    }
    let poly = |z: Complex64| ((z + a) * z + b) * z + c;
    let deriv = |z: Complex64| (3.0 * z + 2.0 * a) * z + b;
    for root in roots.iter_mut() {
        for _ in 0..3 {
            let d = deriv(*root);
            if d.norm() == 0.0 {
                break;
            }
            let next = *root - poly(*root) / d;
            if poly(next).norm() < poly(*root).norm() {
                *root = next;
            } else {
                break;
            }
        }
    }
    roots
}

/// Largest eigenvalue modulus via the closed-form cubic.
pub fn spectral_radius(h: &Matrix3<f64>) -> f64 {
    eigenvalues(h).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Independent estimate `lim ||H^(2^m)||^(1/2^m)` by normalized repeated
/// squaring.
pub fn spectral_radius_power(h: &Matrix3<f64>) -> f64 {
    let n0 = h.norm();
    if n0 == 0.0 {
        return 0.0;
    }
    let mut a = h / n0;
    let mut log_scale = n0.ln();
    let mut rho = n0;
    for m in 1..=60 {
        a = a * a;
        let n = a.norm();
        if n == 0.0 {
            return 0.0;
        }
        a /= n;
        log_scale = 2.0 * log_scale + n.ln();
        let next = (log_scale / 2f64.powi(m)).exp();
        if (next - rho).abs() <= 1e-16 * next {
            return next;
        }
        rho = next;
    }
    rho
}

pub fn spectral_norm3(h: &Matrix3<f64>) -> f64 {
    h.singular_values().max()
}

/// `gamma = rho + margin (1 - rho)`.
pub fn choose_gamma(rho_h: f64, margin: f64) -> Result<f64> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::Parameter(format!("margin must lie in (0, 1), got {margin}")));
    }
    if !(rho_h >= 0.0) {
        return Err(Error::Domain(format!("spectral radius must be nonnegative, got {rho_h}")));
    }
    if rho_h >= 1.0 {
        return Err(Error::Untunable { rho_h });
    }
    Ok(rho_h + margin * (1.0 - rho_h))
}

/// Midpoint of the admissible interval `(0, min(gamma - rho, 2 ||H||))`.
pub fn default_epsilon(gamma: f64, rho_h: f64, h_norm: f64) -> f64 {
    f64::min(gamma - rho_h, 2.0 * h_norm) / 2.0
}

/// `3 sqrt(3) max{4 ||H||^2 / eps^2, eps^2 / (4 ||H||^2)}`.
pub fn c3_constant(h_norm: f64, epsilon: f64) -> f64 {
    let ratio = 4.0 * h_norm * h_norm / (epsilon * epsilon);
    3.0 * 3f64.sqrt() * f64::max(ratio, 1.0 / ratio)
}

pub fn zeta_constant(alpha: f64, c: &RegularityConstants) -> f64 {
    let RegularityConstants { l1, l2, l3, .. } = *c;
    let a = alpha;
    let t1 = a * l1 * l2 * (1.0 + l3) + a * l1 * l3 * (1.0 + l3);
    let t2 = l2 + a * l1 * l2 + a * l1 * l3 + 2.0;
    let t3 = a * l3 * l2 + a * l3 * l3 + 2.0;
    t1.max(t2).max(t3)
}

/// `2 (l2 + 1) sqrt(N r) l0`.
pub fn big_c1(l2: f64, n_agents: usize, dim_agg: usize, l0: f64) -> f64 {
    2.0 * (l2 + 1.0) * ((n_agents * dim_agg) as f64).sqrt() * l0
}

/// Smallest `L >= 1` with `L >= max{(zeta C0 + 3 C1) / (l0 gamma), sqrt(4 c1^2 + 4 c2^2) / l0}`.
pub fn level_bound(l0: f64, gamma: f64, zeta: f64, c0_big: f64, c1_big: f64, c1: f64, c2: f64) -> Result<u64> {
    let need = f64::max(
        (zeta * c0_big + 3.0 * c1_big) / (l0 * gamma),
        (4.0 * c1 * c1 + 4.0 * c2 * c2).sqrt() / l0,
    );
    if !need.is_finite() || need < 0.0 {
        return Err(Error::Domain(format!("level bound is not finite ({need})")));
    }
    let levels = need.ceil();
    if levels >= u64::MAX as f64 / 4.0 {
        return Err(Error::Domain(format!("level bound {levels:e} is not representable")));
    }
    Ok((levels as u64).max(1))
}

pub fn bandwidth_bits(levels: u64) -> Result<u32> {
    if levels == 0 {
        return Err(Error::Parameter("L must be at least 1".into()));
    }
    Ok(bits_per_scalar(levels))
}

/// `(||x0 - x*||_inf, ||chi(0)||_inf, ||y(0)||_inf)` under the standard
/// tracker initialization.
pub fn initial_bounds(p: &dyn AggregativeProblem, x0: &[f64], x_star: &[f64]) -> Result<(f64, f64, f64)> {
    let (n, dx) = (p.n_agents(), p.dim_x());
    for v in [x0, x_star] {
        if v.len() != n * dx {
            return Err(Error::Shape {
                expected: n * dx,
                actual: v.len(),
            });
        }
    }
    let c0 = norm_inf(&crate::linalg::sub(x0, x_star));
    let (mut c1, mut c2) = (0.0f64, 0.0f64);
    for i in 0..n {
        let xi = &x0[i * dx..(i + 1) * dx];
        let g = p.aggregate_map(i, xi);
        c2 = c2.max(norm_inf(&p.grad_chi(i, xi, &g)));
        c1 = c1.max(norm_inf(&g));
    }
    Ok((c0, c1, c2))
}

/// Everything [`tune`] needs. `None` fields are resolved automatically.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningInputs {
    pub constants: RegularityConstants,
    pub kappa: f64,
    pub n_agents: usize,
    pub dim_x: usize,
    pub dim_agg: usize,
    pub l0: f64,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub levels: Option<u64>,
    pub margin: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Derived constants of one tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    pub mu: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub kappa: f64,
    pub n_agents: usize,
    pub dim_x: usize,
    pub dim_agg: usize,
    /// Closed-form step-size bound.
    pub alpha_max: f64,
    /// Exact root of `det(I - H(alpha))`.
    pub alpha_stability: f64,
    pub alpha: f64,
    pub h: Matrix3<f64>,
    pub h_norm: f64,
    pub rho_h: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub l0: f64,
    pub c3: f64,
    pub zeta: f64,
    pub big_c0: f64,
    pub big_c1: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// `None` when the bound overflows; only allowed with a fixed level.
    pub l_min: Option<u64>,
    /// Level actually used (equal to `l_min` unless fixed by the caller).
    pub levels: u64,
    pub bandwidth_bits: u32,
}

/// Automatic step size: 90% of the smallest of the closed-form bound, the
/// exact stability threshold and `1 / l1`.
pub fn auto_alpha(c: &RegularityConstants, kappa: f64) -> Result<f64> {
    let bound = alpha_upper_bound(c, kappa)?;
    let exact = alpha_stability_threshold(c, kappa)?;
    Ok(0.9 * bound.min(exact).min(1.0 / c.l1))
}

pub fn tune(inp: &TuningInputs) -> Result<TuningReport> {
    let c = inp.constants;
    c.validate()?;
    check_kappa(inp.kappa)?;
    if !(inp.l0 > 0.0 && inp.l0.is_finite()) {
        return Err(Error::Domain(format!("l0 must be positive, got {}", inp.l0)));
    }
    let alpha_max = alpha_upper_bound(&c, inp.kappa)?;
    let alpha_stability = alpha_stability_threshold(&c, inp.kappa)?;
    let alpha = match inp.alpha {
        Some(a) if a > 0.0 && a.is_finite() => a,
        Some(a) => return Err(Error::Domain(format!("alpha must be positive, got {a}"))),
        None => auto_alpha(&c, inp.kappa)?,
    };
    let h = build_h(alpha, &c, inp.kappa)?;
    let rho_h = spectral_radius(&h);
    if rho_h >= 1.0 {
        return Err(Error::Untunable { rho_h });
    }
    let gamma = match inp.gamma {
        Some(g) if g > rho_h && g < 1.0 => g,
        Some(g) => {
            return Err(Error::Domain(format!(
                "gamma = {g} must lie in (rho(H), 1) = ({rho_h}, 1)"
            )))
        }
        None => choose_gamma(rho_h, inp.margin)?,
    };
    let h_norm = spectral_norm3(&h);
    let epsilon = default_epsilon(gamma, rho_h, h_norm);
    let c3 = c3_constant(h_norm, epsilon);
    let zeta = zeta_constant(alpha, &c);
    let (n, dx, r) = (inp.n_agents as f64, inp.dim_x as f64, inp.dim_agg as f64);
    let big_c1 = big_c1(c.l2, inp.n_agents, inp.dim_agg, inp.l0);
    let gap = gamma - rho_h - epsilon;
    if !(gap > 0.0) {
        return Err(Error::InfeasibleEpsilon { gap });
    }
    let big_c0 = c3 * (n * dx * inp.c0 * inp.c0 + 4.0 * n * r * (inp.c1 * inp.c1 + inp.c2 * inp.c2)).sqrt()
        + c3 * big_c1 / gap;
    let bound = level_bound(inp.l0, gamma, zeta, big_c0, big_c1, inp.c1, inp.c2);
    let (l_min, levels) = match (bound, inp.levels) {
        (Ok(l), fixed) => (Some(l), fixed.unwrap_or(l)),
        (Err(_), Some(fixed)) => (None, fixed),
        (Err(e), None) => return Err(e),
    };
    Ok(TuningReport {
        mu: c.mu,
        l1: c.l1,
        l2: c.l2,
        l3: c.l3,
        kappa: inp.kappa,
        n_agents: inp.n_agents,
        dim_x: inp.dim_x,
        dim_agg: inp.dim_agg,
        alpha_max,
        alpha_stability,
        alpha,
        h,
        h_norm,
        rho_h,
        epsilon,
        gamma,
        l0: inp.l0,
        c3,
        zeta,
        big_c0,
        big_c1,
        c0: inp.c0,
        c1: inp.c1,
        c2: inp.c2,
        l_min,
        levels,
        bandwidth_bits: bandwidth_bits(levels)?,
    })
}

impl TuningReport {
    pub fn constants(&self) -> RegularityConstants {
        RegularityConstants {
            mu: self.mu,
            l1: self.l1,
            l2: self.l2,
            l3: self.l3,
        }
    }

    /// One `name = value` line per field; reals at 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut real = |name: &str, v: f64| writeln!(out, "{name} = {v:.16e}").unwrap();
        real("mu", self.mu);
        real("l1", self.l1);
        real("l2", self.l2);
        real("l3", self.l3);
        real("kappa", self.kappa);
        real("alpha_max", self.alpha_max);
        real("alpha_stability", self.alpha_stability);
        real("alpha", self.alpha);
        for i in 0..3 {
            for j in 0..3 {
                real(&format!("h_{}{}", i + 1, j + 1), self.h[(i, j)]);
            }
        }
        real("h_norm", self.h_norm);
        real("rho_h", self.rho_h);
        real("epsilon", self.epsilon);
        real("gamma", self.gamma);
        real("l0", self.l0);
        real("c3", self.c3);
        real("zeta", self.zeta);
        real("C0", self.big_c0);
        real("C1", self.big_c1);
        real("c0", self.c0);
        real("c1", self.c1);
        real("c2", self.c2);
        writeln!(out, "n_agents = {}", self.n_agents).unwrap();
        writeln!(out, "dim_x = {}", self.dim_x).unwrap();
        writeln!(out, "dim_agg = {}", self.dim_agg).unwrap();
        match self.l_min {
            Some(l) => writeln!(out, "L_min = {l}").unwrap(),
            None => writeln!(out, "L_min = unrepresentable").unwrap(),
        }
        writeln!(out, "L = {}", self.levels).unwrap();
        writeln!(out, "bandwidth_bits = {}", self.bandwidth_bits).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("report line {}: expected name = value", idx + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k).ok_or_else(|| Error::Parse(format!("report is missing `{k}`")))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("`{k}` is not a number")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("`{k}` is not an integer")))
        };
        let mut h = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] = real(&format!("h_{}{}", i + 1, j + 1))?;
            }
        }
        Ok(Self {
            mu: real("mu")?,
            l1: real("l1")?,
            l2: real("l2")?,
            l3: real("l3")?,
            kappa: real("kappa")?,
            n_agents: int("n_agents")? as usize,
            dim_x: int("dim_x")? as usize,
            dim_agg: int("dim_agg")? as usize,
            alpha_max: real("alpha_max")?,
            alpha_stability: real("alpha_stability")?,
            alpha: real("alpha")?,
            h,
            h_norm: real("h_norm")?,
            rho_h: real("rho_h")?,
            epsilon: real("epsilon")?,
            gamma: real("gamma")?,
            l0: real("l0")?,
            c3: real("c3")?,
            zeta: real("zeta")?,
            big_c0: real("C0")?,
            big_c1: real("C1")?,
            c0: real("c0")?,
            c1: real("c1")?,
            c2: real("c2")?,
            l_min: match map.get("L_min").map(String::as_str) {
                Some("unrepresentable") => None,
                _ => Some(int("L_min")?),
            },
            levels: int("L")?,
            bandwidth_bits: int("bandwidth_bits")? as u32,
        })
    }
}
