//! Branching mechanisms ψ and competition mechanisms g.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// One atom of the Lévy measure: jumps of `size` arriving at `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64)", into = "(f64, f64)")]
pub struct Jump {
    pub size: f64,
    pub rate: f64,
}

impl From<(f64, f64)> for Jump {
    fn from((size, rate): (f64, f64)) -> Self {
        Jump { size, rate }
    }
}

impl From<Jump> for (f64, f64) {
    fn from(j: Jump) -> Self {
        (j.size, j.rate)
    }
}

#[derive(Deserialize)]
struct RawMechanism {
    alpha: f64,
    sigma: f64,
    #[serde(default)]
    jumps: Vec<Jump>,
}

/// ψ(λ) = αλ + ½σ²λ² + Σ wᵢ(e^{−λrᵢ} − 1 + λrᵢ) for a finite atomic Lévy measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMechanism")]
pub struct BranchingMechanism {
    alpha: f64,
    sigma: f64,
    jumps: Vec<Jump>,
}

impl TryFrom<RawMechanism> for BranchingMechanism {
    type Error = Error;

    fn try_from(raw: RawMechanism) -> Result<Self> {
        BranchingMechanism::new(raw.alpha, raw.sigma, raw.jumps)
    }
}

impl BranchingMechanism {
    pub fn new(alpha: f64, sigma: f64, jumps: Vec<Jump>) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(domain(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(domain(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        for j in &jumps {
            if !(j.size.is_finite() && j.size > 0.0 && j.rate.is_finite() && j.rate > 0.0) {
                return Err(domain(format!(
                    "jump atoms need size > 0 and rate > 0, got ({}, {})",
                    j.size, j.rate
                )));
            }
        }
        Ok(BranchingMechanism { alpha, sigma, jumps })
    }

    /// Brownian mechanism αλ + ½σ²λ².
    pub fn brownian(alpha: f64, sigma: f64) -> Result<Self> {
        Self::new(alpha, sigma, Vec::new())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// Σ wᵢ rᵢ, the compensator rate of the jump part per unit mass.
    pub fn jump_compensator(&self) -> f64 {
        self.jumps.iter().map(|j| j.rate * j.size).sum()
    }

    pub fn psi(&self, lambda: f64) -> Result<f64> {
        if !(lambda >= 0.0) {
            return Err(domain(format!("psi needs lambda >= 0, got {lambda}")));
        }
        Ok(self.psi_unchecked(lambda))
    }

    fn psi_unchecked(&self, lambda: f64) -> f64 {
        let jump: f64 = self
            .jumps
            .iter()
            .map(|j| j.rate * ((-lambda * j.size).exp_m1() + lambda * j.size))
            .sum();
        self.alpha * lambda + 0.5 * self.sigma * self.sigma * lambda * lambda + jump
    }

    /// ψ_θ(λ) = ψ(λ) + θλ.
    pub fn psi_theta(&self, theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(domain(format!("theta must be finite and >= 0, got {theta}")));
        }
        Ok(BranchingMechanism {
            alpha: self.alpha + theta,
            ..self.clone()
        })
    }

    /// Grey's condition ∫₁^∞ dλ/ψ(λ) < ∞. With finitely many atoms ψ grows quadratically iff σ > 0.
    pub fn grey_holds(&self) -> bool {
        self.sigma > 0.0
    }

    /// Simpson quadrature of ∫₁^Λ dλ/ψ(λ) in the variable ln λ.
    pub fn grey_integral(&self, upper: f64) -> f64 {
        if upper <= 1.0 {
            return 0.0;
        }
        let n = 2 * (200.0 * upper.ln()).ceil().max(50.0) as usize;
        let h = upper.ln() / n as f64;
        let f = |y: f64| {
            let lambda = y.exp();
            lambda / self.psi_unchecked(lambda)
        };
        let mut acc = f(0.0) + f(upper.ln());
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    /// u_t(θ) solving ∂u/∂t = −ψ(u), u₀ = θ, by classical RK4. `dt` defaults to 1e-4·t.
    pub fn solve_u(&self, theta: f64, t: f64, dt: Option<f64>) -> Result<f64> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(domain(format!("solve_u needs theta > 0, got {theta}")));
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(domain(format!("solve_u needs t >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(theta);
        }
        let dt = dt.unwrap_or(1e-4 * t);
        if !(dt > 0.0) {
            return Err(domain(format!("solve_u needs dt > 0, got {dt}")));
        }
        let n = (t / dt).ceil() as usize;
        let h = t / n as f64;
        let f = |u: f64| -self.psi_unchecked(u.max(0.0));
        let mut u = theta;
        for step in 0..n {
            let k1 = f(u);
            let k2 = f(u + 0.5 * h * k1);
            let k3 = f(u + 0.5 * h * k2);
            let k4 = f(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !u.is_finite() {
                return Err(Error::Numerical {
                    step,
                    msg: "non-finite value in RK4 integration of u".into(),
                });
            }
        }
        Ok(u.clamp(f64::MIN_POSITIVE, theta))
    }

    /// E[Y_t] = x·e^{−αt}; the jump part of ψ is compensated so ψ'(0+) = α.
    pub fn csbp_mean(&self, x: f64, t: f64) -> f64 {
        x * (-self.alpha * t).exp()
    }
}

#[derive(Deserialize)]
struct RawCompetition {
    g_knots: Vec<(f64, f64)>,
}

/// Piecewise-linear nondecreasing g through knots starting at x = 0. Beyond the last
/// knot the last segment's slope continues; a single knot means g is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCompetition")]
pub struct CompetitionMechanism {
    g_knots: Vec<(f64, f64)>,
    #[serde(skip)]
    slopes: Vec<f64>,
    #[serde(skip)]
    primitive: Vec<f64>,
}

impl TryFrom<RawCompetition> for CompetitionMechanism {
    type Error = Error;

    fn try_from(raw: RawCompetition) -> Result<Self> {
        CompetitionMechanism::new(raw.g_knots)
    }
}

impl CompetitionMechanism {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(domain("competition needs at least one knot"));
        }
        if knots[0].0 != 0.0 {
            return Err(domain(format!("first knot must sit at x = 0, got {}", knots[0].0)));
        }
        for &(x, y) in &knots {
            if !(x.is_finite() && y.is_finite()) {
                return Err(domain("knots must be finite"));
            }
        }
        if knots[0].1 < 0.0 {
            return Err(domain(format!("g(0) must be >= 0, got {}", knots[0].1)));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(domain("knot abscissae must be strictly increasing"));
            }
            if w[1].1 < w[0].1 {
                return Err(domain("g must be nondecreasing across knots"));
            }
        }
        let slope = |a: (f64, f64), b: (f64, f64)| (b.1 - a.1) / (b.0 - a.0);
        // Drop interior knots where the slope does not change.
        let mut kept: Vec<(f64, f64)> = vec![knots[0]];
        for i in 1..knots.len() {
            let last = *kept.last().unwrap();
            let s_in = slope(last, knots[i]);
            let collinear = match knots.get(i + 1) {
                Some(&next) => s_in == slope(knots[i], next),
                None => s_in == 0.0 && kept.len() == 1,
            };
            if !collinear {
                kept.push(knots[i]);
            }
        }
        let mut slopes: Vec<f64> = kept.windows(2).map(|w| slope(w[0], w[1])).collect();
        // Slope used past the last knot.
        slopes.push(slopes.last().copied().unwrap_or(0.0));
        let mut primitive = vec![0.0; kept.len()];
        for i in 1..kept.len() {
            let h = kept[i].0 - kept[i - 1].0;
            primitive[i] = primitive[i - 1] + h * (kept[i - 1].1 + 0.5 * slopes[i - 1] * h);
        }
        Ok(CompetitionMechanism {
            g_knots: kept,
            slopes,
            primitive,
        })
    }

    /// g ≡ θ.
    pub fn constant(theta: f64) -> Result<Self> {
        Self::new(vec![(0.0, theta)])
    }

    /// g(x) = slope·x.
    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(vec![(0.0, 0.0), (1.0, slope)])
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.g_knots
    }

    pub fn is_constant(&self) -> bool {
        self.g_knots.len() == 1
    }

    fn segment(&self, x: f64) -> usize {
        self.g_knots.partition_point(|&(k, _)| k <= x).saturating_sub(1)
    }

    pub fn g(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(domain(format!("g needs x >= 0, got {x}")));
        }
        Ok(self.g_unchecked(x))
    }

    /// g without the domain check; negative input is treated as 0.
    pub fn g_unchecked(&self, x: f64) -> f64 {
        let x = x.max(0.0);
        let i = self.segment(x);
        let (xi, yi) = self.g_knots[i];
        let v = yi + self.slopes[i] * (x - xi);
        match self.g_knots.get(i + 1) {
            Some(&(_, next)) => v.clamp(yi, next),
            None => v.max(yi),
        }
    }

    pub fn big_g(&self, z: f64) -> Result<f64> {
        if !(z >= 0.0) {
            return Err(domain(format!("G needs z >= 0, got {z}")));
        }
        Ok(self.big_g_unchecked(z))
    }

    /// G(z) = ∫₀ᶻ g, exact for piecewise-linear g. Negative input is treated as 0.
    pub fn big_g_unchecked(&self, z: f64) -> f64 {
        let z = z.max(0.0);
        let i = self.segment(z);
        let (xi, yi) = self.g_knots[i];
        let h = z - xi;
        self.primitive[i] + h * (yi + 0.5 * self.slopes[i] * h)
    }

    /// Largest slope among segments meeting [0, m].
    pub fn lipschitz(&self, m: f64) -> f64 {
        let last = self.segment(m.max(0.0));
        self.slopes[..=last].iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn jumpy() -> BranchingMechanism {
        BranchingMechanism::new(1.0, 0.0, vec![Jump { size: 1.0, rate: 2.0 }]).unwrap()
    }

    #[test]
    fn psi_examples() {
        let quad = BranchingMechanism::brownian(0.0, 2f64.sqrt()).unwrap();
        assert_abs_diff_eq!(quad.psi(2.0).unwrap(), 4.0, epsilon = 1e-12);
        assert_eq!(jumpy().psi(0.0).unwrap(), 0.0);
        // α + w(e^{-r} - 1 + r) with α = 1, w = 2, r = 1
        let oracle = 1.0 + 2.0 * ((-1f64).exp() - 1.0 + 1.0);
        assert_abs_diff_eq!(jumpy().psi(1.0).unwrap(), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle, 1.73576, epsilon = 1e-5);
        assert!(matches!(quad.psi(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn psi_theta_examples() {
        let quad = BranchingMechanism::brownian(0.0, 2f64.sqrt()).unwrap();
        assert_eq!(quad.psi_theta(0.0).unwrap(), quad);
        assert_abs_diff_eq!(quad.psi_theta(1.0).unwrap().psi(2.0).unwrap(), 6.0, epsilon = 1e-12);
        let m = BranchingMechanism::new(1.0, 1.0, vec![Jump { size: 1.0, rate: 1.0 }]).unwrap();
        let mt = m.psi_theta(2.0).unwrap();
        assert_eq!(mt.alpha(), 3.0);
        assert_abs_diff_eq!(mt.psi(1.0).unwrap(), m.psi(1.0).unwrap() + 2.0, epsilon = 1e-12);
        assert!(m.psi_theta(-0.5).is_err());
    }

    #[test]
    fn grey_condition() {
        assert!(BranchingMechanism::brownian(0.0, 2f64.sqrt()).unwrap().grey_holds());
        assert!(BranchingMechanism::brownian(5.0, 0.01).unwrap().grey_holds());
        let m = jumpy();
        assert!(!m.grey_holds());
        // Linear growth: the truncated integral keeps growing like ln Λ.
        let a = m.grey_integral(1e2);
        let b = m.grey_integral(1e4);
        let c = m.grey_integral(1e6);
        assert!(b - a > 1.0 && c - b > 1.0);
        assert_abs_diff_eq!((c - b) / (b - a), 1.0, epsilon = 0.05);
        // ∫₁^∞ dλ/λ² = 1
        let quad = BranchingMechanism::brownian(0.0, 2f64.sqrt()).unwrap();
        assert_abs_diff_eq!(quad.grey_integral(1e6), 1.0 - 1e-6, epsilon = 1e-6);
    }

    #[test]
    fn solve_u_oracles() {
        let quad = BranchingMechanism::brownian(0.0, 2f64.sqrt()).unwrap();
        assert_eq!(quad.solve_u(1.0, 0.0, None).unwrap(), 1.0);
        // θ/(1 + θt)
        assert_abs_diff_eq!(quad.solve_u(1.0, 1.0, None).unwrap(), 0.5, epsilon = 1e-6);
        // θe^{-αt}
        let lin = BranchingMechanism::brownian(1.0, 0.0).unwrap();
        assert_abs_diff_eq!(lin.solve_u(2.0, 1.0, None).unwrap(), 2.0 * (-1f64).exp(), epsilon = 1e-6);
        assert!(quad.solve_u(0.0, 1.0, None).is_err());
        assert!(quad.solve_u(1.0, -1.0, None).is_err());
    }

    #[test]
    fn csbp_mean_examples() {
        let crit = BranchingMechanism::brownian(0.0, 1.0).unwrap();
        assert_eq!(crit.csbp_mean(1.0, 7.0), 1.0);
        assert_eq!(crit.csbp_mean(0.0, 3.0), 0.0);
        let sub = BranchingMechanism::new(1.0, 0.5, vec![Jump { size: 0.5, rate: 1.0 }]).unwrap();
        let mean = sub.csbp_mean(2.0, 1.0);
        assert_abs_diff_eq!(mean, 2.0 * (-1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(mean, finite_difference_mean(&sub, 2.0, 1.0), epsilon = 1e-4 * mean);
    }

    /// −∂θ e^{−x u_t(θ)} at θ → 0⁺ by a central difference around a small θ.
    /// −d/dθ E e^{−θY_t} at θ = 0, by central differences at θ₀ and 2θ₀
    /// extrapolated linearly to 0.
    fn finite_difference_mean(m: &BranchingMechanism, x: f64, t: f64) -> f64 {
        let f = |th: f64| (-x * m.solve_u(th, t, Some(1e-3)).unwrap()).exp();
        let d = |t0: f64| -(f(t0 + 0.5 * t0) - f(t0 - 0.5 * t0)) / t0;
        2.0 * d(1e-5) - d(2e-5)
    }

    #[test]
    fn competition_examples() {
        let logistic = CompetitionMechanism::linear(2.0).unwrap();
        assert_abs_diff_eq!(logistic.big_g(3.0).unwrap(), 9.0, epsilon = 1e-12);
        assert_eq!(logistic.g(3.0).unwrap(), 6.0);
        let theta = CompetitionMechanism::constant(1.7).unwrap();
        for z in [0.0, 0.3, 2.5, 11.0] {
            assert_eq!(theta.big_g(z).unwrap(), 1.7 * z);
        }
        let kinked = CompetitionMechanism::new(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 2.0)]).unwrap();
        assert_abs_diff_eq!(kinked.big_g(2.0).unwrap(), trapezoid(&kinked, 2.0), epsilon = 1e-8);
        assert_abs_diff_eq!(kinked.big_g(2.0).unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(kinked.g(5.0).unwrap(), 2.0);
        assert_eq!(kinked.lipschitz(0.5), 2.0);
        assert_eq!(kinked.big_g(0.0).unwrap(), 0.0);
        assert!(kinked.g(-1.0).is_err());
        assert!(kinked.big_g(-1.0).is_err());
    }

    #[test]
    fn collinear_knots_collapse() {
        let flat = CompetitionMechanism::new(vec![(0.0, 0.5), (1.0, 0.5), (3.0, 0.5)]).unwrap();
        assert!(flat.is_constant());
        let lin = CompetitionMechanism::new(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 4.0)]).unwrap();
        assert_eq!(lin.knots().len(), 2);
        assert!(CompetitionMechanism::new(vec![(0.0, 1.0), (1.0, 0.5)]).is_err());
        assert!(CompetitionMechanism::new(vec![(0.5, 1.0)]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m: BranchingMechanism =
            serde_json::from_str(r#"{"alpha":0.5,"sigma":1.0,"jumps":[[0.5,2.0]]}"#).unwrap();
        assert_eq!(m.jumps(), &[Jump { size: 0.5, rate: 2.0 }]);
        let back: BranchingMechanism = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        let c: CompetitionMechanism = serde_json::from_str(r#"{"g_knots":[[0,0],[1,2]]}"#).unwrap();
        assert_eq!(c.big_g(3.0).unwrap(), 9.0);
        assert!(serde_json::from_str::<BranchingMechanism>(r#"{"alpha":-1,"sigma":1}"#).is_err());
    }

    fn trapezoid(c: &CompetitionMechanism, z: f64) -> f64 {
        let n = 200_000;
        let h = z / n as f64;
        (0..n)
            .map(|i| 0.5 * h * (c.g_unchecked(i as f64 * h) + c.g_unchecked((i + 1) as f64 * h)))
            .sum()
    }

    fn arb_mechanism() -> impl Strategy<Value = BranchingMechanism> {
        (0.0..2.0f64, 0.0..2.0f64, prop::collection::vec((0.05..2.0f64, 0.05..3.0f64), 0..3))
            .prop_map(|(a, s, j)| {
                BranchingMechanism::new(a, s, j.into_iter().map(Jump::from).collect()).unwrap()
            })
    }

    fn arb_competition() -> impl Strategy<Value = CompetitionMechanism> {
        (0.0..1.0f64, prop::collection::vec((0.05..1.0f64, 0.0..2.0f64), 0..5)).prop_map(|(g0, steps)| {
            let mut knots = vec![(0.0, g0)];
            for (dx, dy) in steps {
                let &(x, y) = knots.last().unwrap();
                knots.push((x + dx, y + dy));
            }
            CompetitionMechanism::new(knots).unwrap()
        })
    }

    proptest! {
        #[test]
        fn psi_is_convex(m in arb_mechanism(), l1 in 0.0..20.0f64, l2 in 0.0..20.0f64, t in 0.0..1.0f64) {
            let lhs = m.psi(t * l1 + (1.0 - t) * l2).unwrap();
            let rhs = t * m.psi(l1).unwrap() + (1.0 - t) * m.psi(l2).unwrap();
            prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
            prop_assert!(m.psi(l1).unwrap() >= 0.0);
        }

        #[test]
        fn psi_theta_adds_linear_term(m in arb_mechanism(), th in 0.0..5.0f64, l in 0.0..20.0f64) {
            let d = m.psi_theta(th).unwrap().psi(l).unwrap() - m.psi(l).unwrap();
            prop_assert!((d - th * l).abs() <= 1e-12 * (1.0 + m.psi(l).unwrap() + th * l));
        }

        #[test]
        fn solve_u_semigroup(m in arb_mechanism(), th in 0.1..5.0f64, s in 0.0..1.5f64, t in 0.0..1.5f64) {
            let dt = Some(1e-3);
            let whole = m.solve_u(th, s + t, dt).unwrap();
            let split = m.solve_u(m.solve_u(th, t, dt).unwrap(), s, dt).unwrap();
            prop_assert!((whole - split).abs() <= 1e-8 * (1.0 + th));
            prop_assert!(whole > 0.0 && whole <= th);
        }

        #[test]
        fn primitive_derivative_is_g(c in arb_competition(), z in 0.01..6.0f64) {
            let h = 1e-6;
            let d = (c.big_g_unchecked(z + h) - c.big_g_unchecked(z - h)) / (2.0 * h);
            let g_mid = 0.5 * (c.g_unchecked(z - h) + c.g_unchecked(z + h));
            prop_assert!((d - g_mid).abs() <= 1e-5 * (1.0 + g_mid));
        }

        #[test]
        fn primitive_convex_nondecreasing(c in arb_competition(), a in 0.0..6.0f64, b in 0.0..6.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.big_g_unchecked(lo) <= c.big_g_unchecked(hi));
            prop_assert!(c.g_unchecked(lo) <= c.g_unchecked(hi));
            let mid = 0.5 * (lo + hi);
            let chord = 0.5 * (c.big_g_unchecked(lo) + c.big_g_unchecked(hi));
            prop_assert!(c.big_g_unchecked(mid) <= chord + 1e-12 * (1.0 + chord));
        }

        #[test]
        fn mean_matches_laplace_derivative(m in arb_mechanism(), x in 0.1..3.0f64, t in 0.0..2.0f64) {
            let mean = m.csbp_mean(x, t);
            let fd = finite_difference_mean(&m, x, t);
            prop_assert!((mean - fd).abs() <= 1e-4 * mean);
        }
    }
}
