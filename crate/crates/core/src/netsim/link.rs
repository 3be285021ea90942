//! Device classes and point-to-point link profiles.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hardware classes of the federation testbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DeviceClass {
    #[serde(rename = "m5a.xlarge")]
    M5aXlarge,
    #[serde(rename = "c5.large")]
    C5Large,
    #[serde(rename = "es-large")]
    EsLarge,
    #[serde(rename = "es-medium")]
    EsMedium,
    #[serde(rename = "egs")]
    Egs,
    #[serde(rename = "njn")]
    Njn,
    #[serde(rename = "rpi4")]
    Rpi4,
}

pub const DEVICE_CLASSES: [DeviceClass; 7] = [
    DeviceClass::M5aXlarge,
    DeviceClass::C5Large,
    DeviceClass::EsLarge,
    DeviceClass::EsMedium,
    DeviceClass::Egs,
    DeviceClass::Njn,
    DeviceClass::Rpi4,
];

impl DeviceClass {
    pub fn name(self) -> &'static str {
        match self {
            DeviceClass::M5aXlarge => "m5a.xlarge",
            DeviceClass::C5Large => "c5.large",
            DeviceClass::EsLarge => "es-large",
            DeviceClass::EsMedium => "es-medium",
            DeviceClass::Egs => "egs",
            DeviceClass::Njn => "njn",
            DeviceClass::Rpi4 => "rpi4",
        }
    }

    /// Measured per-device bandwidth in megabits per second.
    pub fn bandwidth_mbps(self) -> f64 {
        match self {
            DeviceClass::M5aXlarge => 27.0,
            DeviceClass::C5Large => 26.0,
            DeviceClass::EsLarge => 65.0,
            DeviceClass::EsMedium => 65.0,
            DeviceClass::Egs => 813.0,
            DeviceClass::Njn => 450.0,
            DeviceClass::Rpi4 => 800.0,
        }
    }

    /// One-way latency: 12 ms on the fog-cluster tier, negligible elsewhere.
    pub fn base_latency_ms(self) -> f64 {
        match self {
            DeviceClass::EsLarge | DeviceClass::EsMedium | DeviceClass::Egs => 12.0,
            _ => 0.0,
        }
    }

    /// Low-powered single-board devices.
    pub fn constrained(self) -> bool {
        matches!(self, DeviceClass::Njn | DeviceClass::Rpi4)
    }

    /// Link to a same-class peer: own bandwidth, own base latency.
    pub fn self_link(self, jitter_frac: f64) -> LinkProfile {
        LinkProfile {
            bandwidth_mbps: self.bandwidth_mbps(),
            one_way_latency_ms: self.base_latency_ms(),
            jitter_frac,
        }
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown device class `{0}`")]
pub struct UnknownDeviceClass(pub String);

impl FromStr for DeviceClass {
    type Err = UnknownDeviceClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "m5a.xlarge" | "m5a" => Ok(DeviceClass::M5aXlarge),
            "c5.large" | "c5" => Ok(DeviceClass::C5Large),
            "es-large" => Ok(DeviceClass::EsLarge),
            "es-medium" => Ok(DeviceClass::EsMedium),
            "egs" => Ok(DeviceClass::Egs),
            "njn" => Ok(DeviceClass::Njn),
            "rpi4" => Ok(DeviceClass::Rpi4),
            _ => Err(UnknownDeviceClass(s.to_string())),
        }
    }
}

/// Point-to-point link parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    /// Megabits per second, > 0.
    pub bandwidth_mbps: f64,
    pub one_way_latency_ms: f64,
    /// Multiplicative uniform jitter on latency, in [0, 1); draws never
    /// push latency negative.
    pub jitter_frac: f64,
}

impl LinkProfile {
    pub fn new(bandwidth_mbps: f64, one_way_latency_ms: f64, jitter_frac: f64) -> Self {
        assert!(bandwidth_mbps > 0.0, "bandwidth must be positive");
        assert!(one_way_latency_ms >= 0.0, "latency must be non-negative");
        assert!(
            (0.0..1.0).contains(&jitter_frac),
            "jitter fraction must be in [0, 1)"
        );
        LinkProfile {
            bandwidth_mbps,
            one_way_latency_ms,
            jitter_frac,
        }
    }

    /// Zero-latency link too fast to matter; the default where no profile
    /// was configured.
    pub fn instant() -> Self {
        LinkProfile {
            bandwidth_mbps: f64::INFINITY,
            one_way_latency_ms: 0.0,
            jitter_frac: 0.0,
        }
    }

    /// Pairwise link: minimum of the endpoint bandwidths, maximum of the
    /// endpoint latencies.
    pub fn between(a: DeviceClass, b: DeviceClass, jitter_frac: f64) -> Self {
        LinkProfile {
            bandwidth_mbps: a.bandwidth_mbps().min(b.bandwidth_mbps()),
            one_way_latency_ms: a.base_latency_ms().max(b.base_latency_ms()),
            jitter_frac,
        }
    }

    /// One-way transfer time in ms: jittered latency plus serialization
    /// delay `size_bytes * 8 / (bandwidth_mbps * 1000)`.
    pub fn transfer_time(&self, size_bytes: u64, rng: &mut impl Rng) -> f64 {
        let mut latency = self.one_way_latency_ms;
        if self.jitter_frac > 0.0 && latency > 0.0 {
            latency *= 1.0 + rng.random_range(-self.jitter_frac..self.jitter_frac);
        }
        latency + self.serialization_ms(size_bytes)
    }

    /// Transfer time with the jitter draw skipped.
    pub fn nominal_transfer_time(&self, size_bytes: u64) -> f64 {
        self.one_way_latency_ms + self.serialization_ms(size_bytes)
    }

    fn serialization_ms(&self, size_bytes: u64) -> f64 {
        size_bytes as f64 * 8.0 / (self.bandwidth_mbps * 1000.0)
    }
}

/// Jitter-free link profile for every ordered device-class pair.
pub fn default_links() -> BTreeMap<(DeviceClass, DeviceClass), LinkProfile> {
    let mut map = BTreeMap::new();
    for a in DEVICE_CLASSES {
        for b in DEVICE_CLASSES {
            map.insert((a, b), LinkProfile::between(a, b, 0.0));
        }
    }
    map
}
