//! Progressive embedding schedule.
//!
//! Timesteps count down from `T` to `1`. For `r > 0` the optimized
//! conditioning is active on the first `rT` timesteps of sampling (the
//! largest `t`), with weight ramping linearly from 1 at `t = T` to 0 at
//! `t = T(1 - r)`. For `r < 0` the ramp is mirrored onto the last `|r|T`
//! timesteps: weight 0 at `t = T|r|` rising to 1 as `t -> 0`.

use serde::{Deserialize, Serialize};

use crate::adengine::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: u32,
    pub ratio: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            ratio: 0.4,
        }
    }
}

impl ScheduleConfig {
    pub fn new(timesteps: u32, ratio: f64) -> Result<Self> {
        let cfg = Self { timesteps, ratio };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::Config("schedule.timesteps must be at least 1".into()));
        }
        if !(self.ratio.abs() <= 1.0) {
            return Err(Error::Config(format!(
                "schedule.ratio must lie in [-1, 1], got {}",
                self.ratio
            )));
        }
        Ok(())
    }
}

/// Blend weight of the optimized conditioning at timestep `t`.
pub fn alpha(t: u32, cfg: &ScheduleConfig) -> Result<f64> {
    let total = cfg.timesteps;
    if t < 1 || t > total {
        return Err(Error::Invalid(format!("timestep {t} outside [1, {total}]")));
    }
    let r = cfg.ratio;
    if r == 0.0 {
        return Ok(0.0);
    }
    let (t, big_t) = (t as f64, total as f64);
    if r > 0.0 {
        let active = r * big_t;
        // both spellings of the boundary count as inside the zero region
        if t <= big_t * (1.0 - r) || t <= big_t - active {
            return Ok(0.0);
        }
        if t == big_t {
            return Ok(1.0);
        }
        Ok(((t - big_t + active) / active).clamp(0.0, 1.0))
    } else {
        let active = -r * big_t;
        if t >= active {
            return Ok(0.0);
        }
        Ok(((active - t) / active).clamp(0.0, 1.0))
    }
}

/// `y*_t = alpha_t * y' + (1 - alpha_t) * y`, exact at both endpoints and
/// clamped onto the segment `[y, y']` componentwise.
pub fn blend(y: &Tensor, y_prime: &Tensor, t: u32, cfg: &ScheduleConfig) -> Result<Tensor> {
    if y.shape() != y_prime.shape() {
        return Err(Error::ShapeMismatch {
            kind: "blend",
            lhs: y.shape().to_vec(),
            rhs: y_prime.shape().to_vec(),
        });
    }
    let a = alpha(t, cfg)?;
    Ok(blend_with(y, y_prime, a))
}

pub(crate) fn blend_with(y: &Tensor, y_prime: &Tensor, a: f64) -> Tensor {
    if a == 0.0 {
        return y.clone();
    }
    if a == 1.0 {
        return y_prime.clone();
    }
    y.zip(y_prime, |u, w| {
        let mixed = u + a * (w - u);
        mixed.clamp(u.min(w), u.max(w))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(t: u32, r: f64) -> ScheduleConfig {
        ScheduleConfig::new(t, r).unwrap()
    }

    #[test]
    fn anchor_values() {
        let c = cfg(1000, 0.4);
        assert_eq!(alpha(1000, &c).unwrap(), 1.0);
        assert_eq!(alpha(600, &c).unwrap(), 0.0);
        assert_eq!(alpha(800, &c).unwrap(), 0.5);
        assert_eq!(alpha(601, &c).unwrap(), 1.0 / 400.0);
    }

    #[test]
    fn zero_ratio_is_off() {
        let c = cfg(50, 0.0);
        assert!((1..=50).all(|t| alpha(t, &c).unwrap() == 0.0));
    }

    #[test]
    fn out_of_range_timestep_rejected() {
        let c = cfg(10, 0.5);
        assert!(alpha(0, &c).is_err());
        assert!(alpha(11, &c).is_err());
        assert!(ScheduleConfig::new(0, 0.5).is_err());
        assert!(ScheduleConfig::new(10, 1.5).is_err());
    }

    #[test]
    fn negative_ratio_mirrors() {
        let c = cfg(1000, -0.4);
        assert_eq!(alpha(400, &c).unwrap(), 0.0);
        assert_eq!(alpha(1000, &c).unwrap(), 0.0);
        assert_eq!(alpha(200, &c).unwrap(), 0.5);
        assert_eq!(alpha(1, &c).unwrap(), 399.0 / 400.0);
    }

    #[test]
    fn blend_endpoints_exact() {
        let y = Tensor::vector(vec![0.1, -0.3, 1e-20]).unwrap();
        let yp = Tensor::vector(vec![0.7, 0.3, 5.0]).unwrap();
        let c = cfg(1000, 0.4);
        assert_eq!(blend(&y, &yp, 100, &c).unwrap(), y);
        assert_eq!(blend(&y, &yp, 1000, &c).unwrap(), yp);
        assert!(blend(&y, &Tensor::vector(vec![1.0]).unwrap(), 1000, &c).is_err());
    }

    proptest! {
        #[test]
        fn positive_ratio_shape(total in 1u32..2000, pct in 1u32..=100) {
            let r = pct as f64 / 100.0;
            let c = cfg(total, r);
            let alphas: Vec<f64> = (1..=total).map(|t| alpha(t, &c).unwrap()).collect();
            prop_assert_eq!(*alphas.last().unwrap(), 1.0);
            prop_assert!(alphas.windows(2).all(|w| w[0] <= w[1]));
            for (i, &a) in alphas.iter().enumerate() {
                let t = (i + 1) as f64;
                if t <= total as f64 * (1.0 - r) {
                    prop_assert_eq!(a, 0.0);
                }
                prop_assert!((0.0..=1.0).contains(&a));
            }
            let active = alphas.iter().filter(|&&a| a > 0.0).count();
            prop_assert_eq!(active as f64, (r * total as f64).ceil());
        }

        #[test]
        fn negative_ratio_shape(total in 1u32..2000, pct in 1u32..=100) {
            let r = -(pct as f64) / 100.0;
            let c = cfg(total, r);
            let alphas: Vec<f64> = (1..=total).map(|t| alpha(t, &c).unwrap()).collect();
            prop_assert!(alphas.windows(2).all(|w| w[0] >= w[1]));
            for (i, &a) in alphas.iter().enumerate() {
                if (i + 1) as f64 > total as f64 * -r {
                    prop_assert_eq!(a, 0.0);
                }
            }
        }

        #[test]
        fn blend_stays_on_segment(
            y in proptest::collection::vec(-10.0f64..10.0, 1..8),
            seed in 0u64..1000,
            t in 1u32..=100,
        ) {
            let mut s = crate::rng::Stream::new(seed, 0);
            let yp: Vec<f64> = y.iter().map(|v| v + s.normal()).collect();
            let (y, yp) = (Tensor::vector(y).unwrap(), Tensor::vector(yp).unwrap());
            let c = cfg(100, 0.5);
            let b = blend(&y, &yp, t, &c).unwrap();
            for i in 0..y.len() {
                let (lo, hi) = (y.data()[i].min(yp.data()[i]), y.data()[i].max(yp.data()[i]));
                prop_assert!(lo <= b.data()[i] && b.data()[i] <= hi);
            }
            prop_assert_eq!(blend(&y, &y, t, &c).unwrap(), y.clone());
        }
    }
}
