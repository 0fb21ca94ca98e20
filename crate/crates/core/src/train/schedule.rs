//! Learning-rate schedules, stepped once per epoch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine annealing from `lr_max` at `t = 0` to `lr_min` at `t = total`.
pub fn cosine_lr(t: usize, total: usize, lr_min: f64, lr_max: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidConfig("cosine schedule needs at least one epoch".into()));
    }
    if t > total {
        return Err(Error::InvalidConfig(format!("epoch {t} is past the schedule length {total}")));
    }
    if t == 0 {
        return Ok(lr_max);
    }
    if t == total {
        return Ok(lr_min);
    }
    let phase = t as f64 * std::f64::consts::PI / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

/// `lr_max * gamma^k` where `k` counts the milestones `<= t`.
pub fn step_lr(t: usize, milestones: &[usize], gamma: f64, lr_max: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= t).count();
    lr_max * gamma.powi(passed as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum Schedule {
    #[default]
    Cosine,
    Step { milestones: Vec<usize>, gamma: f64 },
}


impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if let Schedule::Step { milestones, gamma } = self {
            if milestones.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidConfig(format!("milestones {milestones:?} must be sorted")));
            }
            if gamma.is_nan() || *gamma <= 0.0 {
                return Err(Error::InvalidConfig(format!("gamma {gamma} must be positive")));
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize, total: usize, lr_min: f64, lr_max: f64) -> Result<f64> {
        match self {
            Schedule::Cosine => cosine_lr(epoch, total, lr_min, lr_max),
            Schedule::Step { milestones, gamma } => Ok(step_lr(epoch, milestones, *gamma, lr_max)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 0.0, 1e-4).unwrap(), 1e-4);
        assert_eq!(cosine_lr(100, 100, 1e-6, 1e-4).unwrap(), 1e-6);
        let mid = cosine_lr(50, 100, 1e-6, 1e-4).unwrap();
        assert!((mid - (1e-6 + 1e-4) / 2.0).abs() < 1e-18);
        assert!(cosine_lr(101, 100, 0.0, 1.0).is_err());
        assert!(cosine_lr(0, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn cosine_is_non_increasing() {
        let lrs: Vec<f64> = (0..=37).map(|t| cosine_lr(t, 37, 0.01, 0.5).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn step_schedule() {
        assert_eq!(step_lr(3, &[5, 10], 0.1, 1.0), 1.0);
        assert!((step_lr(7, &[5, 10], 0.1, 1.0) - 0.1).abs() < 1e-15);
        assert!((step_lr(10, &[5, 10], 0.1, 1.0) - 0.01).abs() < 1e-15);
        for t in 0..20 {
            assert_eq!(step_lr(t, &[2, 4, 8], 1.0, 0.3), 0.3);
        }
        assert!(Schedule::Step { milestones: vec![5, 2], gamma: 0.1 }.validate().is_err());
    }
}
