//! Symmetric, unit-variance increment laws.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One atom of a discrete noise law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub value: f64,
    pub prob: f64,
}

/// Component of a Gaussian mixture: weight, mean, standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    Gaussian,
    Rademacher,
    Bimodal { sigma_b: f64 },
    ThreePoint { a: f64 },
    GaussianMixture { components: Vec<MixtureComponent> },
}

/// Config-level name of a noise law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian,
    Rademacher,
    Bimodal(f64),
    ThreePoint(f64),
}

#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    kind: NoiseKind,
    mu4: f64,
    mu6: f64,
    atoms: Option<Vec<Atom>>,
    // cumulative probabilities of `atoms`, for inverse-CDF selection
    cum: Vec<f64>,
    components: Vec<MixtureComponent>,
}

fn mixture_moments(components: &[MixtureComponent]) -> (f64, f64, f64) {
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    let mut m6 = 0.0;
    for c in components {
        let (m, s2) = (c.mean, c.sd * c.sd);
        let mm = m * m;
        m2 += c.weight * (mm + s2);
        m4 += c.weight * (mm * mm + 6.0 * mm * s2 + 3.0 * s2 * s2);
        m6 += c.weight * (mm * mm * mm + 15.0 * mm * mm * s2 + 45.0 * mm * s2 * s2 + 15.0 * s2 * s2 * s2);
    }
    (m2, m4, m6)
}

impl NoiseDistribution {
    fn continuous(kind: NoiseKind, components: Vec<MixtureComponent>, mu4: f64, mu6: f64) -> Self {
        NoiseDistribution {
            kind,
            mu4,
            mu6,
            atoms: None,
            cum: Vec::new(),
            components,
        }
    }

    fn discrete(kind: NoiseKind, atoms: Vec<Atom>) -> Self {
        let mu4 = atoms.iter().map(|a| a.prob * a.value.powi(4)).sum();
        let mu6 = atoms.iter().map(|a| a.prob * a.value.powi(6)).sum();
        let mut acc = 0.0;
        let cum = atoms
            .iter()
            .map(|a| {
                acc += a.prob;
                acc
            })
            .collect();
        NoiseDistribution {
            kind,
            mu4,
            mu6,
            atoms: Some(atoms),
            cum,
            components: Vec::new(),
        }
    }

    pub fn gaussian() -> Self {
        let c = vec![MixtureComponent {
            weight: 1.0,
            mean: 0.0,
            sd: 1.0,
        }];
        Self::continuous(NoiseKind::Gaussian, c, 3.0, 15.0)
    }

    pub fn rademacher() -> Self {
        Self::discrete(
            NoiseKind::Rademacher,
            vec![
                Atom { value: -1.0, prob: 0.5 },
                Atom { value: 1.0, prob: 0.5 },
            ],
        )
    }

    /// Even mixture of `N(±√(1−σ_b²), σ_b²)`.
    pub fn bimodal(sigma_b: f64) -> Result<Self> {
        if !(sigma_b > 0.0 && sigma_b < 1.0) {
            return Err(invalid(format!("bimodal noise needs sigma_b in (0, 1), got {sigma_b}")));
        }
        let s2 = sigma_b * sigma_b;
        let m = (1.0 - s2).sqrt();
        let components = vec![
            MixtureComponent { weight: 0.5, mean: -m, sd: sigma_b },
            MixtureComponent { weight: 0.5, mean: m, sd: sigma_b },
        ];
        let mu4 = 1.0 + 4.0 * s2 - 2.0 * s2 * s2;
        let mu6 = 1.0 + 12.0 * s2 + 18.0 * s2 * s2 - 16.0 * s2 * s2 * s2;
        Ok(Self::continuous(NoiseKind::Bimodal { sigma_b }, components, mu4, mu6))
    }

    /// Atoms `0` and `±√a` with `P(±√a) = 1/(2a)`.
    pub fn three_point(a: f64) -> Result<Self> {
        if !(a > 1.0 && a.is_finite()) {
            return Err(invalid(format!("three-point noise needs a > 1, got {a}")));
        }
        let r = a.sqrt();
        let p = 0.5 / a;
        let atoms = vec![
            Atom { value: -r, prob: p },
            Atom { value: 0.0, prob: 1.0 - 1.0 / a },
            Atom { value: r, prob: p },
        ];
        let mut noise = Self::discrete(NoiseKind::ThreePoint { a }, atoms);
        noise.mu4 = a;
        noise.mu6 = a * a;
        Ok(noise)
    }

    /// A symmetric Gaussian mixture with unit variance.
    pub fn gaussian_mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("mixture needs at least one component"));
        }
        if components.iter().any(|c| !(c.weight > 0.0 && c.sd > 0.0 && c.mean.is_finite())) {
            return Err(invalid("mixture components need positive weight and sd"));
        }
        let wsum: f64 = components.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {wsum}")));
        }
        // symmetric: every component has a mirror with equal weight and sd
        for c in &components {
            let mirrored = components.iter().any(|d| {
                (d.mean + c.mean).abs() < 1e-12
                    && (d.weight - c.weight).abs() < 1e-12
                    && (d.sd - c.sd).abs() < 1e-12
            });
            if !mirrored {
                return Err(invalid(format!("mixture is not symmetric at mean {}", c.mean)));
            }
        }
        let (m2, m4, m6) = mixture_moments(&components);
        if (m2 - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture variance is {m2}, expected 1")));
        }
        Ok(Self::continuous(
            NoiseKind::GaussianMixture {
                components: components.clone(),
            },
            components,
            m4,
            m6,
        ))
    }

    pub fn from_spec(spec: NoiseSpec) -> Result<Self> {
        match spec {
            NoiseSpec::Gaussian => Ok(Self::gaussian()),
            NoiseSpec::Rademacher => Ok(Self::rademacher()),
            NoiseSpec::Bimodal(s) => Self::bimodal(s),
            NoiseSpec::ThreePoint(a) => Self::three_point(a),
        }
    }

    pub fn kind(&self) -> &NoiseKind {
        &self.kind
    }

    pub fn name(&self) -> String {
        match &self.kind {
            NoiseKind::Gaussian => "gaussian".into(),
            NoiseKind::Rademacher => "rademacher".into(),
            NoiseKind::Bimodal { sigma_b } => format!("bimodal({sigma_b})"),
            NoiseKind::ThreePoint { a } => format!("three_point({a})"),
            NoiseKind::GaussianMixture { .. } => "gaussian_mixture".into(),
        }
    }

    pub fn mu4(&self) -> f64 {
        self.mu4
    }

    pub fn mu6(&self) -> f64 {
        self.mu6
    }

    pub fn atoms(&self) -> Option<&[Atom]> {
        self.atoms.as_deref()
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, NoiseKind::Gaussian)
    }

    /// Gaussian components for the continuous kinds (empty for discrete).
    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Discrete laws give chains confined to a lattice through the start.
    pub fn is_irreducible(&self) -> bool {
        self.atoms.is_none()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            NoiseKind::Gaussian => rng.sample(StandardNormal),
            NoiseKind::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseKind::ThreePoint { .. } => {
                let atoms = self.atoms.as_ref().expect("discrete kind has atoms");
                let u: f64 = rng.random();
                self.atom_at(u, atoms)
            }
            NoiseKind::Bimodal { .. } | NoiseKind::GaussianMixture { .. } => {
                let u: f64 = rng.random();
                let z: f64 = rng.sample(StandardNormal);
                let mut acc = 0.0;
                let last = self.components.len() - 1;
                for (k, c) in self.components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc || k == last {
                        return c.mean + c.sd * z;
                    }
                }
                unreachable!()
            }
        }
    }

    fn atom_at(&self, u: f64, atoms: &[Atom]) -> f64 {
        let k = self.cum.iter().position(|&c| u < c).unwrap_or(atoms.len() - 1);
        atoms[k].value
    }

    /// Log density for continuous kinds; log probability of an exact atom
    /// match (or `-inf`) for discrete kinds.
    pub fn log_density(&self, z: f64) -> f64 {
        match &self.atoms {
            Some(atoms) => atoms
                .iter()
                .find(|a| a.value == z)
                .map_or(f64::NEG_INFINITY, |a| a.prob.ln()),
            None => {
                let ln_root_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
                let terms: Vec<f64> = self
                    .components
                    .iter()
                    .map(|c| {
                        let u = (z - c.mean) / c.sd;
                        c.weight.ln() - c.sd.ln() - ln_root_2pi - 0.5 * u * u
                    })
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_real_line;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all() -> Vec<NoiseDistribution> {
        vec![
            NoiseDistribution::gaussian(),
            NoiseDistribution::rademacher(),
            NoiseDistribution::bimodal(0.1).unwrap(),
            NoiseDistribution::bimodal(0.6).unwrap(),
            NoiseDistribution::three_point(2.0).unwrap(),
            NoiseDistribution::three_point(1.1).unwrap(),
        ]
    }

    #[test]
    fn gaussian_moments() {
        let g = NoiseDistribution::gaussian();
        assert_eq!(g.mu4(), 3.0);
        assert_eq!(g.mu6(), 15.0);
    }

    #[test]
    fn rademacher_attains_jensen_bound() {
        let r = NoiseDistribution::rademacher();
        assert_eq!(r.mu4(), 1.0);
        assert_eq!(r.mu6(), 1.0);
        let atoms = r.atoms().unwrap();
        assert_eq!(atoms.len(), 2);
        assert!(atoms.iter().all(|a| a.prob == 0.5 && a.value.abs() == 1.0));
    }

    #[test]
    fn bimodal_sixth_moment() {
        let b = NoiseDistribution::bimodal(0.1).unwrap();
        assert!((b.mu6() - 1.121784).abs() < 1e-12);
        assert!(((15.0 / b.mu6()).powf(1.0 / 3.0) - 2.37).abs() < 0.005);
        let tiny = NoiseDistribution::bimodal(1e-4).unwrap();
        assert!(tiny.mu6() > 1.0 && tiny.mu6() < 1.0 + 1e-6);
        assert!(NoiseDistribution::bimodal(0.0).is_err());
        assert!(NoiseDistribution::bimodal(1.0).is_err());
    }

    #[test]
    fn bimodal_moments_against_quadrature() {
        for s in [0.05, 0.1, 0.3] {
            let b = NoiseDistribution::bimodal(s).unwrap();
            let m = |k: i32| {
                integrate_real_line(|z| z.powi(k) * b.log_density(z).exp(), 0.0, 1e-12).unwrap()
            };
            assert!((m(0) - 1.0).abs() < 1e-8);
            assert!((m(2) - 1.0).abs() < 1e-8);
            assert!((m(4) - b.mu4()).abs() < 1e-8, "mu4 at {s}: {} vs {}", m(4), b.mu4());
            assert!((m(6) - b.mu6()).abs() < 1e-8, "mu6 at {s}: {} vs {}", m(6), b.mu6());
        }
    }

    #[test]
    fn three_point_atoms() {
        let t = NoiseDistribution::three_point(2.0).unwrap();
        let atoms = t.atoms().unwrap();
        let r2 = 2f64.sqrt();
        assert_eq!(atoms[0], Atom { value: -r2, prob: 0.25 });
        assert_eq!(atoms[1], Atom { value: 0.0, prob: 0.5 });
        assert_eq!(atoms[2], Atom { value: r2, prob: 0.25 });
        let sum = |k: i32| atoms.iter().map(|a| a.prob * a.value.powi(k)).sum::<f64>();
        assert!((sum(2) - 1.0).abs() < 1e-15);
        assert!((sum(4) - 2.0).abs() < 1e-14);
        assert!((sum(6) - 4.0).abs() < 1e-14);
        assert_eq!(t.mu6(), t.mu4() * t.mu4());
        assert!(NoiseDistribution::three_point(1.0).is_err());
        for a in [1.01, 1.5, 7.0] {
            let t = NoiseDistribution::three_point(a).unwrap();
            let m2: f64 = t.atoms().unwrap().iter().map(|x| x.prob * x.value * x.value).sum();
            assert!((m2 - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn moment_feasibility() {
        for n in all() {
            assert!(n.mu4() >= 1.0 - 1e-15, "{}", n.name());
            assert!(n.mu4() <= n.mu6().sqrt() + 1e-12, "{}", n.name());
        }
    }

    #[test]
    fn log_density_symmetric() {
        let g = NoiseDistribution::gaussian();
        assert!((g.log_density(0.0) + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        let b = NoiseDistribution::bimodal(0.1).unwrap();
        assert_eq!(b.log_density(0.77), b.log_density(-0.77));
        let r = NoiseDistribution::rademacher();
        assert_eq!(r.log_density(1.0), 0.5f64.ln());
        assert_eq!(r.log_density(0.5), f64::NEG_INFINITY);
    }

    #[test]
    fn mixture_validation() {
        let ok = NoiseDistribution::gaussian_mixture(vec![
            MixtureComponent { weight: 0.5, mean: 0.6, sd: 0.8 },
            MixtureComponent { weight: 0.5, mean: -0.6, sd: 0.8 },
        ])
        .unwrap();
        assert!((ok.mu4() - NoiseDistribution::bimodal(0.8).unwrap().mu4()).abs() < 1e-12);
        let asym = NoiseDistribution::gaussian_mixture(vec![
            MixtureComponent { weight: 0.5, mean: 0.6, sd: 0.8 },
            MixtureComponent { weight: 0.5, mean: -0.5, sd: 0.8 },
        ]);
        assert!(asym.is_err());
    }

    #[test]
    fn empirical_moments() {
        let n = 1_000_000;
        for noise in all() {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let mut s = [0.0f64; 4];
            let mut s8 = 0.0;
            let mut s12 = 0.0;
            for _ in 0..n {
                let z = noise.sample(&mut rng);
                let z2 = z * z;
                s[0] += z * z2;
                s[1] += z2;
                s[2] += z2 * z2;
                s[3] += z2 * z2 * z2;
                s8 += z2 * z2 * z2 * z2;
                s12 += z2 * z2 * z2 * z2 * z2 * z2;
            }
            let nf = n as f64;
            let m2 = s[1] / nf;
            let m4 = s[2] / nf;
            let m6 = s[3] / nf;
            let skew = (s[0] / nf) / m2.powf(1.5);
            assert!(skew.abs() < 0.02, "{} skew {skew}", noise.name());
            assert!((m2 - 1.0).abs() < 0.005, "{} var {m2}", noise.name());
            let se4 = ((s8 / nf - m4 * m4) / nf).sqrt();
            let se6 = ((s12 / nf - m6 * m6) / nf).sqrt();
            assert!((m4 - noise.mu4()).abs() <= 3.0 * se4 + 1e-12, "{} mu4 {m4}", noise.name());
            assert!((m6 - noise.mu6()).abs() <= 3.0 * se6 + 1e-12, "{} mu6 {m6}", noise.name());
        }
    }
}
