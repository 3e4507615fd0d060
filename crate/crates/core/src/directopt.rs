//! Direct optimization: derivative-free coordinate descent on the
//! coefficients `rho` of a natural-image basis, minimizing the feature
//! distance `||phi(mean + U rho) - y||^2` with HOG recomputed in the loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::ImageBasis;
use crate::hog::{compute_hog, HogConfig, HogDescriptor};
use crate::raster::{Image, Inversion};

#[derive(Debug, Clone, PartialEq)]
pub struct DirectConfig {
    pub restarts: usize,
    /// Coordinate passes per restart.
    pub sweeps: usize,
    /// Step multipliers tried in both directions, relative to each
    /// coordinate's current step size.
    pub step_grid: Vec<f64>,
    pub seed: u64,
    /// Initial `rho_j` is `init_scale * scale_j * N(0, 1)`, where `scale_j`
    /// is the basis vector's natural scale.
    pub init_scale: f64,
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            sweeps: 30,
            step_grid: vec![1.0, 0.5, 0.25, 0.1],
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl DirectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.sweeps == 0 {
            return Err(Error::Config(
                "restarts and sweeps must be at least 1".into(),
            ));
        }
        if self.step_grid.is_empty() || self.step_grid.iter().any(|m| !(*m > 0.0) || !m.is_finite())
        {
            return Err(Error::Config(
                "step grid must hold positive finite multipliers".into(),
            ));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::Config(format!(
                "invalid init_scale {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DirectResult {
    pub inversion: Inversion,
    pub rho: Vec<f64>,
    /// Objective of the returned image.
    pub objective: f64,
    /// Final objective of every restart.
    pub restart_objectives: Vec<f64>,
    /// Per restart: the objective at initialization and after each sweep.
    pub histories: Vec<Vec<f64>>,
}

struct Objective<'a> {
    y: &'a HogDescriptor,
    hog: &'a HogConfig,
    width: usize,
    height: usize,
}

impl Objective<'_> {
    fn eval(&self, pixels: Vec<f64>) -> Result<f64> {
        let img = Image::new(self.width, self.height, 1, pixels)?;
        let phi = compute_hog(&img, self.hog)?;
        let v: f64 = phi
            .data()
            .iter()
            .zip(self.y.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if !v.is_finite() {
            return Err(Error::Numerical("non-finite feature objective".into()));
        }
        Ok(v)
    }
}

struct Restart {
    rho: Vec<f64>,
    objective: f64,
    history: Vec<f64>,
}

fn run_restart(
    basis: &ImageBasis,
    f: &Objective<'_>,
    config: &DirectConfig,
    restart: usize,
) -> Result<Restart> {
    let n = basis.count();
    let seed = config.seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho: Vec<f64> = (0..n)
        .map(|j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.init_scale * basis.scale(j) * z
        })
        .collect();
    let mut pixels = basis.synthesize(&rho)?.into_data();
    let mut objective = f.eval(pixels.clone())?;
    let mut steps: Vec<f64> = (0..n).map(|j| basis.scale(j).max(1e-12)).collect();
    let mut history = vec![objective];
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..config.sweeps {
        if objective == 0.0 {
            history.push(objective);
            continue;
        }
        order.shuffle(&mut rng);
        for &j in &order {
            let mut best: Option<(f64, f64, Vec<f64>)> = None;
            for &m in &config.step_grid {
                for delta in [m * steps[j], -m * steps[j]] {
                    let mut candidate = pixels.clone();
                    basis.add_column(j, delta, &mut candidate);
                    let value = f.eval(candidate.clone())?;
                    let bar = best.as_ref().map_or(objective, |b| b.0);
                    if value < bar {
                        best = Some((value, delta, candidate));
                    }
                }
            }
            match best {
                Some((value, delta, candidate)) => {
                    rho[j] += delta;
                    pixels = candidate;
                    objective = value;
                }
                None => steps[j] *= 0.5,
            }
        }
        history.push(objective);
    }
    Ok(Restart {
        rho,
        objective,
        history,
    })
}

/// Invert `y` by coordinate descent over `basis` coefficients with random
/// restarts run in parallel; the best restart (ties broken by index) wins.
pub fn direct_invert(
    basis: &ImageBasis,
    y: &HogDescriptor,
    config: &DirectConfig,
    hog: &HogConfig,
) -> Result<DirectResult> {
    config.validate()?;
    hog.validate()?;
    if y.depth != hog.depth() || y.cell_size != hog.cell_size {
        return Err(Error::Dimension(format!(
            "descriptor depth {} / cell size {} does not match the HOG configuration",
            y.depth, y.cell_size
        )));
    }
    let (width, height) = y.pixel_geometry();
    if (basis.width, basis.height) != (width, height) {
        return Err(Error::Dimension(format!(
            "basis covers {}x{} pixels, the descriptor needs {width}x{height}",
            basis.width, basis.height
        )));
    }
    let f = Objective {
        y,
        hog,
        width,
        height,
    };
    let runs: Vec<Result<Restart>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(basis, &f, config, r))
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    for (r, run) in runs.iter().enumerate() {
        log::debug!("direct restart {r}: objective {:.6}", run.objective);
    }
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let restart_objectives = runs.iter().map(|r| r.objective).collect();
    let histories = runs.iter().map(|r| r.history.clone()).collect();
    let winner = &runs[best];
    let raw = basis.synthesize(&winner.rho)?;
    Ok(DirectResult {
        inversion: Inversion::new(raw),
        rho: winner.rho.clone(),
        objective: winner.objective,
        restart_objectives,
        histories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::basis_from_covariance;
    use nalgebra::DMatrix;

    /// 8x8-pixel patches with exponential correlation, translated over a
    /// 2x2-cell template (32x32 pixels).
    fn basis() -> ImageBasis {
        let p = 8;
        let sigma = DMatrix::from_fn(p * p, p * p, |a, b| {
            let (ax, ay) = ((a % p) as f64, (a / p) as f64);
            let (bx, by) = ((b % p) as f64, (b / p) as f64);
            0.04 * (-((ax - bx).powi(2) + (ay - by).powi(2)).sqrt() / 3.0).exp()
        });
        basis_from_covariance(&sigma, p, 4, (32, 32), 8, 0.5).unwrap()
    }

    fn quick(seed: u64, init_scale: f64, restarts: usize, sweeps: usize) -> DirectConfig {
        DirectConfig {
            restarts,
            sweeps,
            seed,
            init_scale,
            ..Default::default()
        }
    }

    #[test]
    fn objective_never_increases() {
        let b = basis();
        let hog = HogConfig::default();
        let target = b
            .synthesize(
                &(0..b.count())
                    .map(|j| ((j * 7) % 5) as f64 * 0.02 - 0.04)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
        let y = compute_hog(&target, &hog).unwrap();
        let out = direct_invert(&b, &y, &quick(3, 0.5, 2, 4), &hog).unwrap();
        for h in &out.histories {
            assert_eq!(h.len(), 5);
            for w in h.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
        let min = out
            .restart_objectives
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.objective, min);
    }

    #[test]
    fn zero_start_on_mean_target_stays_at_zero() {
        let b = basis();
        let hog = HogConfig::default();
        let y = compute_hog(&Image::filled(32, 32, 1, 0.5), &hog).unwrap();
        let out = direct_invert(&b, &y, &quick(0, 0.0, 1, 2), &hog).unwrap();
        assert_eq!(out.histories[0], vec![0.0; 3]);
        assert!(out.rho.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn representable_target_is_mostly_recovered() {
        let b = basis();
        let hog = HogConfig::default();
        let mut rho = vec![0.0; b.count()];
        rho[0] = 0.5 * b.scale(0);
        let y = compute_hog(&b.synthesize(&rho).unwrap(), &hog).unwrap();
        let mut good = 0;
        for seed in 0..10 {
            let out = direct_invert(&b, &y, &quick(seed, 0.1, 1, 6), &hog).unwrap();
            let h = &out.histories[0];
            if *h.last().unwrap() <= 0.25 * h[0] {
                good += 1;
            }
        }
        assert!(
            good >= 8,
            "{good}/10 seeds reached a quarter of the initial objective"
        );
    }

    #[test]
    fn deterministic_and_in_span() {
        let b = basis();
        let hog = HogConfig::default();
        let target = Image::from_fn(32, 32, |x, y| {
            0.5 + 0.1 * ((x as f64 / 5.0).sin() * (y as f64 / 7.0).cos())
        });
        let y = compute_hog(&target, &hog).unwrap();
        let cfg = quick(11, 0.2, 2, 2);
        let a = direct_invert(&b, &y, &cfg, &hog).unwrap();
        let c = direct_invert(&b, &y, &cfg, &hog).unwrap();
        assert_eq!(a.inversion, c.inversion);
        assert_eq!(a.rho, c.rho);
        // raw - mean lies in the span of the basis.
        let u = b.to_matrix();
        let r = nalgebra::DVector::from_iterator(
            b.dim(),
            a.inversion.raw.data().iter().map(|v| v - b.mean),
        );
        let coef = u.clone().svd(true, true).solve(&r, 1e-12).unwrap();
        assert!((&u * coef - r).amax() <= 1e-9);
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let b = basis();
        let hog = HogConfig::default();
        let y = HogDescriptor::zeros(3, 3, 31, 8);
        assert!(matches!(
            direct_invert(&b, &y, &quick(0, 0.1, 1, 1), &hog),
            Err(Error::Dimension(_))
        ));
        let bad = DirectConfig {
            restarts: 0,
            ..Default::default()
        };
        assert!(matches!(
            direct_invert(&b, &HogDescriptor::zeros(2, 2, 31, 8), &bad, &hog),
            Err(Error::Config(_))
        ));
    }
}
