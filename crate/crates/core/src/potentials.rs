//! Bulk potentials, proliferation laws, mobilities and the checks that a
//! given choice satisfies the standing structural assumptions.
//!
//! Polynomials are stored lowest degree first throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PotentialError {
    #[error("truncation cutoff must exceed 1 (got {0})")]
    Cutoff(f64),
    #[error("truncation needs a base potential with growth exponent above 2 (got {0})")]
    Growth(f64),
    #[error("the lambda part must be at most quadratic so that its second derivative is bounded")]
    LambdaDegree,
}

/// Value and first two derivatives of a scalar function at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            value: self.value + o.value,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
        }
    }
}

pub(crate) fn poly_jet(coefficients: &[f64], s: f64) -> Jet {
    let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &c in coefficients.iter().rev() {
        d2 = d2 * s + 2.0 * d1;
        d1 = d1 * s + v;
        v = v * s + c;
    }
    Jet { value: v, d1, d2 }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialFamily {
    /// `psi(s) = (s^2 - 1)^2 / 4`, split as `psi0 = (s^2-1)^2/4 + s^2`, `lambda = -s^2`.
    QuarticDoubleWell,
    CustomPolynomial { psi0: Vec<f64>, lambda: Vec<f64> },
    /// `psi0` of `base` replaced outside `[-cutoff, cutoff]` by its
    /// second-order Taylor polynomial at the nearer endpoint.
    Truncated { cutoff: f64, base: Box<PotentialFamily> },
}

const QUARTIC_PSI0: [f64; 5] = [0.25, 0.0, 0.5, 0.0, 0.25];
const QUARTIC_LAMBDA: [f64; 3] = [0.0, 0.0, -1.0];

impl PotentialFamily {
    pub fn psi0(&self, s: f64) -> Jet {
        match self {
            Self::QuarticDoubleWell => poly_jet(&QUARTIC_PSI0, s),
            Self::CustomPolynomial { psi0, .. } => poly_jet(psi0, s),
            Self::Truncated { cutoff, base } => {
                if s.abs() <= *cutoff {
                    base.psi0(s)
                } else {
                    let anchor = cutoff.copysign(s);
                    let j = base.psi0(anchor);
                    let ds = s - anchor;
                    Jet {
                        value: j.value + j.d1 * ds + 0.5 * j.d2 * ds * ds,
                        d1: j.d1 + j.d2 * ds,
                        d2: j.d2,
                    }
                }
            }
        }
    }

    pub fn lambda(&self, s: f64) -> Jet {
        match self {
            Self::QuarticDoubleWell => poly_jet(&QUARTIC_LAMBDA, s),
            Self::CustomPolynomial { lambda, .. } => poly_jet(lambda, s),
            Self::Truncated { base, .. } => base.lambda(s),
        }
    }

    pub fn eval(&self, s: f64) -> Jet {
        self.psi0(s) + self.lambda(s)
    }

    /// Degree of `psi'` when it is a polynomial; `None` after truncation.
    pub fn derivative_degree(&self) -> Option<usize> {
        match self {
            Self::QuarticDoubleWell => Some(3),
            Self::CustomPolynomial { psi0, lambda } => {
                let deg = |c: &[f64]| c.iter().rposition(|v| *v != 0.0).unwrap_or(0);
                Some(deg(psi0).max(deg(lambda)).saturating_sub(1))
            }
            Self::Truncated { .. } => None,
        }
    }
}

/// A potential together with the constants it is claimed to satisfy.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub rho: f64,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub r1: f64,
    /// `None` means "use the smallest admissible value".
    pub r2: Option<f64>,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self::quartic()
    }
}

impl PotentialSpec {
    pub fn quartic() -> Self {
        Self {
            family: PotentialFamily::QuarticDoubleWell,
            rho: 4.0,
            c1: 1.0,
            c2: 3.0,
            alpha: 2.0,
            r1: 2.5,
            r2: None,
        }
    }

    pub fn custom(psi0: Vec<f64>, lambda: Vec<f64>) -> Result<Self, PotentialError> {
        if lambda.iter().skip(3).any(|c| *c != 0.0) {
            return Err(PotentialError::LambdaDegree);
        }
        let lambda_d2 = poly_jet(&lambda, 0.0).d2.abs();
        let family = PotentialFamily::CustomPolynomial { psi0, lambda };
        let (c1, c2) = fit_growth_constants(&family, 4.0, 10.0);
        Ok(Self {
            family,
            rho: 4.0,
            c1,
            c2,
            alpha: lambda_d2,
            r1: 2.5,
            r2: None,
        })
    }

    pub fn eval(&self, s: f64) -> Jet {
        self.family.eval(s)
    }
}

pub fn psi_eval(spec: &PotentialSpec, s: f64) -> (f64, f64, f64) {
    let j = spec.eval(s);
    (j.value, j.d1, j.d2)
}

/// Best constants `c1, c2` in `c1 (1 + |s|^(rho-2)) <= psi0'' <= c2 (1 + |s|^(rho-2))`
/// over a uniform sample of `[-half_width, half_width]`.
fn fit_growth_constants(family: &PotentialFamily, rho: f64, half_width: f64) -> (f64, f64) {
    let n = 4001;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let s = -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64;
        let r = family.psi0(s).d2 / (1.0 + s.abs().powf(rho - 2.0));
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

/// The quadratic-growth approximation used for growth exponents above 4.
pub fn truncate_potential(spec: &PotentialSpec, cutoff: f64) -> Result<PotentialSpec, PotentialError> {
    if !(cutoff > 1.0) {
        return Err(PotentialError::Cutoff(cutoff));
    }
    if !(spec.rho > 2.0) {
        return Err(PotentialError::Growth(spec.rho));
    }
    let family = PotentialFamily::Truncated {
        cutoff,
        base: Box::new(spec.family.clone()),
    };
    let (c1, c2) = fit_growth_constants(&family, 2.0, 10.0 * cutoff);
    Ok(PotentialSpec {
        family,
        rho: 2.0,
        c1,
        c2,
        alpha: spec.alpha,
        r1: spec.r1,
        r2: None,
    })
}

/// Empirical constants of the truncation comparison bounds on a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationConstants {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k4: f64,
    pub k5: f64,
    /// `max |psi_m(s)| / (1 + s^2)`.
    pub quadratic_growth: f64,
}

pub fn truncation_constants(
    base: &PotentialSpec,
    truncated: &PotentialSpec,
    half_width: f64,
    points: usize,
) -> TruncationConstants {
    let ratio = |num: f64, den: f64| {
        if (num.abs() - den.abs()).abs() <= 1e-12 * (1.0 + den.abs()) {
            1.0
        } else if den.abs() < 1e-300 {
            f64::INFINITY
        } else {
            num.abs() / den.abs()
        }
    };
    let mut out = TruncationConstants {
        k0: 0.0,
        k1: 0.0,
        k2: 0.0,
        k4: f64::NEG_INFINITY,
        k5: f64::NEG_INFINITY,
        quadratic_growth: 0.0,
    };
    for i in 0..points {
        let s = -half_width + 2.0 * half_width * i as f64 / (points - 1) as f64;
        let p = base.eval(s);
        let m = truncated.eval(s);
        out.k0 = out.k0.max(ratio(m.value, p.value));
        out.k1 = out.k1.max(ratio(m.d1, p.d1));
        out.k2 = out.k2.max(ratio(m.d2, p.d2));
        out.k4 = out.k4.max(truncated.r1 * s * s - m.value);
        out.k5 = out.k5.max(-m.d2);
        out.quadratic_growth = out.quadratic_growth.max(m.value.abs() / (1.0 + s * s));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProliferationMode {
    P1,
    P2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProliferationFamily {
    Constant { p0: f64 },
    /// `p(s) = delta + p0 / (1 + s^2)`.
    RationalBump { p0: f64, delta: f64 },
    /// Clipped below at zero.
    Polynomial { coefficients: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProliferationSpec {
    pub family: ProliferationFamily,
    pub q: f64,
    pub mode: ProliferationMode,
    pub c3: Option<f64>,
    pub c4: Option<f64>,
}

impl Default for ProliferationSpec {
    fn default() -> Self {
        Self::constant(0.5)
    }
}

impl ProliferationSpec {
    pub fn constant(p0: f64) -> Self {
        Self {
            family: ProliferationFamily::Constant { p0 },
            q: 1.0,
            mode: ProliferationMode::P2,
            c3: None,
            c4: None,
        }
    }

    /// `(p(s), p'(s))`.
    pub fn eval(&self, s: f64) -> (f64, f64) {
        match &self.family {
            ProliferationFamily::Constant { p0 } => (*p0, 0.0),
            ProliferationFamily::RationalBump { p0, delta } => {
                let d = 1.0 + s * s;
                (delta + p0 / d, -2.0 * p0 * s / (d * d))
            }
            ProliferationFamily::Polynomial { coefficients } => {
                let j = poly_jet(coefficients, s);
                if j.value > 0.0 {
                    (j.value, j.d1)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        match &self.family {
            ProliferationFamily::Constant { p0 } => *p0 == 0.0,
            ProliferationFamily::RationalBump { p0, delta } => *p0 == 0.0 && *delta == 0.0,
            ProliferationFamily::Polynomial { coefficients } => coefficients.iter().all(|c| *c == 0.0),
        }
    }

    /// Polynomial degree of `p`, `None` for non-polynomial families.
    pub fn degree(&self) -> Option<usize> {
        match &self.family {
            ProliferationFamily::Constant { .. } => Some(0),
            ProliferationFamily::RationalBump { .. } => None,
            ProliferationFamily::Polynomial { coefficients } => {
                Some(coefficients.iter().rposition(|v| *v != 0.0).unwrap_or(0))
            }
        }
    }
}

pub fn p_eval(spec: &ProliferationSpec, s: f64) -> (f64, f64) {
    spec.eval(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityShape {
    /// `1 / (1 + exp(-s))`
    Logistic,
    /// `1 / (1 + s^2)`
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MobilitySpec {
    #[default]
    Unit,
    /// `m0 + (m1 - m0) * shape(s)`
    Bounded { m0: f64, m1: f64, shape: MobilityShape },
}

impl MobilitySpec {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Self::Unit => 1.0,
            Self::Bounded { m0, m1, shape } => {
                let w = match shape {
                    MobilityShape::Logistic => 1.0 / (1.0 + (-s).exp()),
                    MobilityShape::Bump => 1.0 / (1.0 + s * s),
                };
                m0 + (m1 - m0) * w
            }
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Self::Unit)
    }

    /// Upper bound used for the implicit shift.
    pub fn upper(&self) -> f64 {
        match *self {
            Self::Unit => 1.0,
            Self::Bounded { m0, m1, .. } => m0.max(m1),
        }
    }
}

pub fn mobility_eval(spec: &MobilitySpec, s: f64) -> f64 {
    spec.eval(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingOptions {
    pub half_width: f64,
    pub points: usize,
    pub random_points: usize,
    pub seed: u64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            half_width: 10.0,
            points: 20001,
            random_points: 1000,
            seed: 0,
        }
    }
}

impl SamplingOptions {
    pub fn samples(&self) -> Vec<f64> {
        let w = self.half_width;
        let mut out: Vec<f64> = (0..self.points)
            .map(|i| -w + 2.0 * w * i as f64 / (self.points.max(2) - 1) as f64)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        out.extend((0..self.random_points).map(|_| rng.gen_range(-w..=w)));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Smallest `R2` with `psi(s) >= R1 s^2 - R2` on the sample.
    pub minimal_r2: f64,
    /// `R1 - 2 chi_phi^2 / chi_sigma`; must be positive.
    pub chemotaxis_gap: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One-line summary suitable for output headers.
    pub fn summary(&self) -> String {
        if self.passed() {
            "assumptions: ok".to_string()
        } else {
            let names: Vec<_> = self.failures().map(|c| c.name).collect();
            format!("assumptions-violated: {}", names.join(", "))
        }
    }
}

/// Smallest `R2` such that `psi(s) >= r1 s^2 - R2` on `[-w, w]`:
/// dense scan followed by golden-section refinement of the best cell.
pub fn minimal_r2(spec: &PotentialSpec, r1: f64, half_width: f64) -> f64 {
    let g = |s: f64| r1 * s * s - spec.eval(s).value;
    let n = 20001;
    let step = 2.0 * half_width / (n - 1) as f64;
    let (mut best_s, mut best) = (0.0, f64::NEG_INFINITY);
    for i in 0..n {
        let s = -half_width + step * i as f64;
        let v = g(s);
        if v > best {
            best = v;
            best_s = s;
        }
    }
    let (mut a, mut b) = ((best_s - step).max(-half_width), (best_s + step).min(half_width));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = b - inv_phi * (b - a);
        let x2 = a + inv_phi * (b - a);
        if g(x1) > g(x2) {
            b = x2;
        } else {
            a = x1;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    best.max(g(0.5 * (a + b)))
}

fn check(name: &'static str, passed: bool, detail: String) -> AssumptionCheck {
    AssumptionCheck { name, passed, detail }
}

pub fn validate_assumptions(
    chi_phi: f64,
    chi_sigma: f64,
    psi: &PotentialSpec,
    p: &ProliferationSpec,
    mobility_m: &MobilitySpec,
    mobility_n: &MobilitySpec,
    sampling: &SamplingOptions,
) -> AssumptionReport {
    let samples = sampling.samples();
    let mut checks = Vec::new();

    checks.push(check(
        "A1",
        chi_sigma > 0.0 && chi_phi >= 0.0,
        format!("chi_phi = {chi_phi}, chi_sigma = {chi_sigma}"),
    ));

    checks.push(check(
        "psi-rho",
        (2.0..6.0).contains(&psi.rho),
        format!("rho = {}", psi.rho),
    ));

    let tol = 1e-12;
    let mut worst = None;
    for &s in &samples {
        let growth = 1.0 + s.abs().powf(psi.rho - 2.0);
        let d2 = psi.family.psi0(s).d2;
        let lo = psi.c1 * growth;
        let hi = psi.c2 * growth;
        if d2 < lo - tol * lo.abs() || d2 > hi + tol * hi.abs() {
            worst = Some(s);
            break;
        }
    }
    checks.push(check(
        "psi0-growth",
        worst.is_none() && psi.c1 > 0.0,
        match worst {
            Some(s) => format!("bracket fails at s = {s}"),
            None => format!("c1 = {}, c2 = {}", psi.c1, psi.c2),
        },
    ));

    let lambda_max = samples
        .iter()
        .map(|&s| psi.family.lambda(s).d2.abs())
        .fold(0.0, f64::max);
    checks.push(check(
        "lambda-curvature",
        lambda_max <= psi.alpha * (1.0 + tol),
        format!("max |lambda''| = {lambda_max}, alpha = {}", psi.alpha),
    ));

    let min_r2 = minimal_r2(psi, psi.r1, sampling.half_width);
    let coercive = match psi.r2 {
        Some(r2) => r2 >= min_r2 - 1e-12 * (1.0 + min_r2.abs()),
        None => min_r2.is_finite(),
    };
    checks.push(check(
        "psi-coercivity",
        coercive,
        format!("R1 = {}, minimal R2 = {min_r2}", psi.r1),
    ));

    let gap = if chi_sigma > 0.0 {
        psi.r1 - 2.0 * chi_phi * chi_phi / chi_sigma
    } else {
        f64::NEG_INFINITY
    };
    checks.push(check(
        "chemotaxis-gap",
        gap > 0.0,
        format!("R1 - 2 chi_phi^2 / chi_sigma = {gap}"),
    ));

    let values: Vec<(f64, f64, f64)> = samples.iter().map(|&s| (s, p.eval(s).0, p.eval(s).1)).collect();
    let nonneg = values.iter().all(|v| v.1 >= 0.0 && v.1.is_finite());
    checks.push(check("p-nonnegative", nonneg, String::new()));
    match p.mode {
        ProliferationMode::P1 => {
            checks.push(check("p-q-range", (1.0..9.0).contains(&p.q), format!("q = {}", p.q)));
            let c3 = values
                .iter()
                .map(|(s, v, _)| v / (1.0 + s.abs().powf(p.q)))
                .fold(0.0, f64::max);
            let ok = p.c3.is_none_or(|given| c3 <= given * (1.0 + tol));
            checks.push(check("p-growth", ok, format!("required c3 = {c3}")));
        }
        ProliferationMode::P2 => {
            checks.push(check("p-q-range", (1.0..=4.0).contains(&p.q), format!("q = {}", p.q)));
            let positive = values.iter().all(|v| v.1 > 0.0);
            checks.push(check("p-positive", positive, String::new()));
            let c4 = values
                .iter()
                .map(|(s, _, d)| d.abs() / (1.0 + s.abs().powf(p.q - 1.0)))
                .fold(0.0, f64::max);
            let ok = c4.is_finite() && p.c4.is_none_or(|given| c4 <= given * (1.0 + tol));
            checks.push(check("p-lipschitz", ok, format!("required c4 = {c4}")));
        }
    }

    for (name, m) in [("mobility-m", mobility_m), ("mobility-n", mobility_n)] {
        let ok = match *m {
            MobilitySpec::Unit => true,
            MobilitySpec::Bounded { m0, m1, .. } => {
                let (lo, hi) = (m0.min(m1), m0.max(m1));
                lo > 0.0 && samples.iter().all(|&s| {
                    let v = m.eval(s);
                    v >= lo * (1.0 - tol) && v <= hi * (1.0 + tol)
                })
            }
        };
        checks.push(check(name, ok, format!("{m:?}")));
    }

    AssumptionReport {
        checks,
        minimal_r2: min_r2,
        chemotaxis_gap: gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quartic() -> PotentialSpec {
        PotentialSpec::quartic()
    }

    #[test]
    fn quartic_values() {
        assert_eq!(psi_eval(&quartic(), 1.0), (0.0, 0.0, 2.0));
        assert_eq!(psi_eval(&quartic(), 0.0), (0.25, 0.0, -1.0));
        // (s^2-1)^2/4, s^3 - s, 3 s^2 - 1 at s = 2
        assert_eq!(psi_eval(&quartic(), 2.0), (2.25, 6.0, 11.0));
    }

    #[test]
    fn quartic_split_satisfies_growth_bracket() {
        let spec = quartic();
        for i in 0..=2000 {
            let s = -10.0 + 0.01 * i as f64;
            let d2 = spec.family.psi0(s).d2;
            assert!((d2 - (3.0 * s * s + 1.0)).abs() < 1e-10);
            assert!(d2 >= spec.c1 * (1.0 + s * s) - 1e-12);
            assert!(d2 <= spec.c2 * (1.0 + s * s) + 1e-12);
            assert_eq!(spec.family.lambda(s).d2, -2.0);
        }
    }

    #[test]
    fn truncation_examples() {
        let base = quartic();
        let t = truncate_potential(&base, 2.0).unwrap();
        assert_eq!(t.eval(1.5), base.eval(1.5));
        let p0 = base.family.psi0(2.0);
        let expected = p0.value + p0.d1 + 0.5 * p0.d2 + base.family.lambda(3.0).value;
        assert!((t.eval(3.0).value - expected).abs() < 1e-12);
        assert!((t.eval(3.0).value - 13.75).abs() < 1e-12);
        for m in [5.0, 6.0, 10.0, 50.0] {
            let tm = truncate_potential(&base, m).unwrap();
            assert_eq!(tm.eval(5.0), base.eval(5.0));
        }
        assert_eq!(truncate_potential(&base, 1.0), Err(PotentialError::Cutoff(1.0)));
        let mut flat = base.clone();
        flat.rho = 2.0;
        assert_eq!(truncate_potential(&flat, 3.0), Err(PotentialError::Growth(2.0)));
    }

    #[test]
    fn truncation_has_quadratic_growth_and_uniform_constants() {
        let base = quartic();
        let mut k = Vec::new();
        for m in [2.0, 4.0, 8.0] {
            let t = truncate_potential(&base, m).unwrap();
            let c = truncation_constants(&base, &t, 100.0, 200_001);
            assert!(c.quadratic_growth.is_finite());
            assert!(c.k0.is_finite() && c.k1.is_finite() && c.k2.is_finite());
            assert!(c.k0 <= 1.0 + 1e-12 && c.k1 <= 1.0 + 1e-12);
            k.push(c);
        }
        let k4 = k.iter().map(|c| c.k4).fold(f64::NEG_INFINITY, f64::max);
        let k5 = k.iter().map(|c| c.k5).fold(f64::NEG_INFINITY, f64::max);
        assert!(k4.is_finite() && k4 < 20.0, "k4 = {k4}");
        assert!(k5 <= 1.0 + 1e-12, "k5 = {k5}");
    }

    #[test]
    fn proliferation_and_mobility_examples() {
        assert_eq!(ProliferationSpec::constant(0.5).eval(3.7), (0.5, 0.0));
        let bump = ProliferationSpec {
            family: ProliferationFamily::RationalBump { p0: 1.0, delta: 0.01 },
            ..ProliferationSpec::default()
        };
        assert_eq!(bump.eval(0.0), (1.01, 0.0));
        assert_eq!(mobility_eval(&MobilitySpec::Unit, -7.0), 1.0);
        let clipped = ProliferationSpec {
            family: ProliferationFamily::Polynomial {
                coefficients: vec![-1.0, 0.0, 1.0],
            },
            ..ProliferationSpec::default()
        };
        assert_eq!(clipped.eval(0.5), (0.0, 0.0));
        assert_eq!(clipped.eval(2.0), (3.0, 4.0));
    }

    #[test]
    fn validation_examples() {
        let sampling = SamplingOptions::default();
        let p = ProliferationSpec::default();
        let unit = MobilitySpec::Unit;
        let r = validate_assumptions(1.0, 1.0, &quartic(), &p, &unit, &unit, &sampling);
        assert!(r.passed(), "{:?}", r.failures().collect::<Vec<_>>());
        assert!((r.minimal_r2 - 8.75).abs() < 1e-10, "{}", r.minimal_r2);

        let r = validate_assumptions(2.0, 1.0, &quartic(), &p, &unit, &unit, &sampling);
        assert!(!r.passed());
        assert_eq!(r.failures().map(|c| c.name).collect::<Vec<_>>(), ["chemotaxis-gap"]);
        assert!((r.chemotaxis_gap - (2.5 - 8.0)).abs() < 1e-15);

        let mut spec = quartic();
        spec.r1 = 0.1;
        let r = validate_assumptions(0.0, 3.0, &spec, &p, &unit, &unit, &sampling);
        assert!(r.checks.iter().find(|c| c.name == "chemotaxis-gap").unwrap().passed);
    }

    #[test]
    fn validation_flags_bad_specs() {
        let sampling = SamplingOptions::default();
        let unit = MobilitySpec::Unit;
        let mut p = ProliferationSpec::constant(0.0);
        let r = validate_assumptions(0.0, 1.0, &quartic(), &p, &unit, &unit, &sampling);
        assert!(r.failures().any(|c| c.name == "p-positive"));
        p.mode = ProliferationMode::P1;
        p.q = 9.5;
        let r = validate_assumptions(0.0, 1.0, &quartic(), &p, &unit, &unit, &sampling);
        assert!(r.failures().any(|c| c.name == "p-q-range"));
        let bad_m = MobilitySpec::Bounded {
            m0: 0.0,
            m1: 1.0,
            shape: MobilityShape::Bump,
        };
        let r = validate_assumptions(0.0, 1.0, &quartic(), &ProliferationSpec::default(), &bad_m, &unit, &sampling);
        assert!(r.failures().any(|c| c.name == "mobility-m"));
        let mut spec = quartic();
        spec.r2 = Some(1.0);
        let r = validate_assumptions(0.0, 1.0, &spec, &ProliferationSpec::default(), &unit, &unit, &sampling);
        assert!(r.failures().any(|c| c.name == "psi-coercivity"));
    }

    #[test]
    fn report_is_deterministic() {
        let s = SamplingOptions { seed: 9, ..Default::default() };
        let unit = MobilitySpec::Unit;
        let a = validate_assumptions(0.5, 1.0, &quartic(), &ProliferationSpec::default(), &unit, &unit, &s);
        let b = validate_assumptions(0.5, 1.0, &quartic(), &ProliferationSpec::default(), &unit, &unit, &s);
        assert_eq!(a, b);
    }

    fn central(f: impl Fn(f64) -> f64, s: f64, h: f64) -> f64 {
        (f(s + h) - f(s - h)) / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn derivatives_match_finite_differences(s in -5.0f64..5.0) {
            let h = 1e-4;
            let spec = quartic();
            let tr = truncate_potential(&spec, 2.0).unwrap();
            for sp in [&spec, &tr] {
                let fd1 = central(|x| sp.eval(x).value, s, h);
                let fd2 = central(|x| sp.eval(x).d1, s, h);
                let scale = 1.0 + s.abs().powi(3);
                prop_assert!((fd1 - sp.eval(s).d1).abs() < 1e-6 * scale);
                // psi_m'' jumps only in its third derivative, so a
                // centred difference straddling the cutoff is still O(h).
                prop_assert!((fd2 - sp.eval(s).d2).abs() < 1e-3 * scale);
            }
            let j = spec.eval(s);
            let split = spec.family.psi0(s) + spec.family.lambda(s);
            prop_assert!((j.value - split.value).abs() <= 1e-12 * (1.0 + j.value.abs()));

            let bump = ProliferationSpec {
                family: ProliferationFamily::RationalBump { p0: 1.0, delta: 0.01 },
                ..ProliferationSpec::default()
            };
            let fd = central(|x| bump.eval(x).0, s, h);
            prop_assert!((fd - bump.eval(s).1).abs() < 1e-7);
        }
    }
}
