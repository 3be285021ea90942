//! Local learner and training-time cost model.
//!
//! Functional behavior comes from a small logistic classifier that any
//! desk machine trains in milliseconds; timing behavior comes from a
//! per-device cost model. The defaults encode three calibration anchors:
//! gateway training 60% faster than cloud at the 0.97 target, every device
//! at least 60% faster when the target drops to 0.85, and constrained
//! devices 90% faster at 0.70.

mod data;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::DeviceClass;

pub use data::{make_dataset, make_dataset_dim, SyntheticDataset, DEFAULT_DIM};
pub use train::{
    accuracy_on, holdout_split, log_loss, train_toy, TrainOutcome, DEFAULT_MAX_EPOCHS,
    DEFAULT_STEP_SIZE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainerError {
    #[error("dataset needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dataset contains a single class; two are required")]
    SingleClass,
    #[error("no base time configured for device class {0}")]
    MissingDevice(DeviceClass),
    #[error("accuracy multiplier for {0} must be in (0, 1]")]
    BadMultiplier(f64),
}

/// Hardware description of one federation device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_class: DeviceClass,
    pub cpu_clock_ghz: f64,
    pub memory_gb: f64,
    pub storage_gb: f64,
    pub bandwidth_mbps: f64,
    pub constrained: bool,
}

impl DeviceProfile {
    /// Testbed defaults for the given class.
    pub fn table_default(class: DeviceClass) -> Self {
        let (cpu_clock_ghz, memory_gb, storage_gb) = match class {
            DeviceClass::M5aXlarge => (2.5, 32.0, 120.0),
            DeviceClass::C5Large => (3.6, 8.0, 120.0),
            DeviceClass::EsLarge => (3.6, 8.0, 120.0),
            DeviceClass::EsMedium => (3.6, 4.0, 120.0),
            DeviceClass::Egs => (3.5, 32.0, 1000.0),
            DeviceClass::Njn => (1.43, 4.0, 64.0),
            DeviceClass::Rpi4 => (1.5, 4.0, 64.0),
        };
        DeviceProfile {
            device_class: class,
            cpu_clock_ghz,
            memory_gb,
            storage_gb,
            bandwidth_mbps: class.bandwidth_mbps(),
            constrained: class.constrained(),
        }
    }
}

/// Accuracy multipliers for one device tier, relative to the 0.97 target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMultipliers {
    /// Multiplier at target accuracy 0.85.
    pub at_085: f64,
    /// Multiplier at target accuracy 0.70.
    pub at_070: f64,
}

/// Training-time model: per-device base time at the 0.97 target, scaled by
/// a tier-specific multiplier for lower targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Virtual ms to reach 0.97 holdout accuracy, per device class. The
    /// absolute values are synthetic; only the ratios between them are
    /// calibrated.
    pub base_ms: BTreeMap<DeviceClass, f64>,
    pub standard: AccuracyMultipliers,
    pub constrained: AccuracyMultipliers,
    /// Base times already include the trained-model transfer overhead;
    /// when false, callers add transfer time themselves.
    pub includes_transfer: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        let base_ms = BTreeMap::from([
            (DeviceClass::M5aXlarge, 1000.0),
            (DeviceClass::C5Large, 900.0),
            (DeviceClass::EsLarge, 850.0),
            (DeviceClass::EsMedium, 950.0),
            (DeviceClass::Egs, 400.0),
            (DeviceClass::Njn, 700.0),
            (DeviceClass::Rpi4, 1800.0),
        ]);
        CostModel {
            base_ms,
            standard: AccuracyMultipliers {
                at_085: 0.38,
                at_070: 0.18,
            },
            constrained: AccuracyMultipliers {
                at_085: 0.35,
                at_070: 0.10,
            },
            includes_transfer: true,
        }
    }
}

impl CostModel {
    /// Virtual training time for `device` to reach `target_accuracy`.
    ///
    /// Target 0.97 costs the device's base time; 0.85 and 0.70 use the
    /// tier multipliers; targets in between are log-linearly interpolated;
    /// targets outside [0.70, 0.97] clamp to the nearest anchor.
    pub fn estimate_time(
        &self,
        device: &DeviceProfile,
        target_accuracy: f64,
    ) -> Result<f64, TrainerError> {
        let base = *self
            .base_ms
            .get(&device.device_class)
            .ok_or(TrainerError::MissingDevice(device.device_class))?;
        let tier = if device.constrained {
            self.constrained
        } else {
            self.standard
        };
        for m in [tier.at_085, tier.at_070] {
            if !(m > 0.0 && m <= 1.0) {
                return Err(TrainerError::BadMultiplier(m));
            }
        }
        Ok(base * multiplier(tier, target_accuracy))
    }
}

/// Piecewise log-linear multiplier through (0.70, m70), (0.85, m85),
/// (0.97, 1.0), clamped outside.
fn multiplier(tier: AccuracyMultipliers, target: f64) -> f64 {
    let interp = |t: f64, lo: f64, hi: f64, m_lo: f64, m_hi: f64| {
        let frac = (t - lo) / (hi - lo);
        (m_lo.ln() + frac * (m_hi.ln() - m_lo.ln())).exp()
    };
    if target >= 0.97 {
        1.0
    } else if target >= 0.85 {
        interp(target, 0.85, 0.97, tier.at_085, 1.0)
    } else if target >= 0.70 {
        interp(target, 0.70, 0.85, tier.at_070, tier.at_085)
    } else {
        tier.at_070
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::DEVICE_CLASSES;

    #[test]
    fn gateway_trains_at_forty_percent_of_cloud_time() {
        let model = CostModel::default();
        let egs = model
            .estimate_time(&DeviceProfile::table_default(DeviceClass::Egs), 0.97)
            .unwrap();
        let cloud = model
            .estimate_time(&DeviceProfile::table_default(DeviceClass::M5aXlarge), 0.97)
            .unwrap();
        assert!((egs / cloud - 0.40).abs() < 0.004, "ratio {}", egs / cloud);
    }

    #[test]
    fn lowering_target_to_085_cuts_time_by_over_sixty_percent() {
        let model = CostModel::default();
        for class in DEVICE_CLASSES {
            let device = DeviceProfile::table_default(class);
            let full = model.estimate_time(&device, 0.97).unwrap();
            let reduced = model.estimate_time(&device, 0.85).unwrap();
            assert!(
                reduced <= 0.40 * full,
                "{class}: {reduced} vs {full}"
            );
        }
    }

    #[test]
    fn constrained_devices_cut_ninety_percent_at_070() {
        let model = CostModel::default();
        let rpi4 = DeviceProfile::table_default(DeviceClass::Rpi4);
        let full = model.estimate_time(&rpi4, 0.97).unwrap();
        let reduced = model.estimate_time(&rpi4, 0.70).unwrap();
        assert!((reduced / full - 0.10).abs() < 0.001, "ratio {}", reduced / full);
    }

    #[test]
    fn estimate_is_nonincreasing_as_target_drops() {
        let model = CostModel::default();
        for class in DEVICE_CLASSES {
            let device = DeviceProfile::table_default(class);
            let targets = [0.99, 0.97, 0.93, 0.85, 0.78, 0.70, 0.60];
            let times: Vec<f64> = targets
                .iter()
                .map(|t| model.estimate_time(&device, *t).unwrap())
                .collect();
            assert!(
                times.windows(2).all(|w| w[0] >= w[1]),
                "{class}: {times:?}"
            );
        }
    }

    #[test]
    fn device_ordering_matches_narrative() {
        let model = CostModel::default();
        let time = |class| {
            model
                .estimate_time(&DeviceProfile::table_default(class), 0.97)
                .unwrap()
        };
        assert!(time(DeviceClass::Egs) < time(DeviceClass::M5aXlarge));
        assert!(time(DeviceClass::Njn) < time(DeviceClass::Rpi4));
    }

    #[test]
    fn missing_device_entry_is_an_error() {
        let mut model = CostModel::default();
        model.base_ms.remove(&DeviceClass::Njn);
        let err = model.estimate_time(&DeviceProfile::table_default(DeviceClass::Njn), 0.97);
        assert_eq!(err, Err(TrainerError::MissingDevice(DeviceClass::Njn)));
    }

    #[test]
    fn cost_model_round_trips_through_json() {
        let model = CostModel::default();
        let json = serde_json::to_string(&model).unwrap();
        let back: CostModel = serde_json::from_str(&json).unwrap();
        assert_eq!(model, back);
    }
}
