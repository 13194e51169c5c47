use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Physiological or derived signal identifiers.
///
/// `PawMonitor` is the patient monitor's own copy of the airway pressure; it
/// exists only to align the monitor's channels with the ventilator's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelId {
    #[serde(rename = "V")]
    Volume,
    #[serde(rename = "F")]
    Flow,
    #[serde(rename = "p_aw")]
    Paw,
    #[serde(rename = "p_ab")]
    Pab,
    #[serde(rename = "p_es")]
    Pes,
    #[serde(rename = "p_tp")]
    Ptp,
    #[serde(rename = "eit_sum")]
    EitSum,
    #[serde(rename = "p_aw_monitor")]
    PawMonitor,
}

/// Recording device a channel originates from; each has its own clock offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Eit,
    Ventilator,
    Monitor,
}

impl ChannelId {
    pub const ALL: [ChannelId; 8] = [
        ChannelId::Volume,
        ChannelId::Flow,
        ChannelId::Paw,
        ChannelId::Pab,
        ChannelId::Pes,
        ChannelId::Ptp,
        ChannelId::EitSum,
        ChannelId::PawMonitor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelId::Volume => "V",
            ChannelId::Flow => "F",
            ChannelId::Paw => "p_aw",
            ChannelId::Pab => "p_ab",
            ChannelId::Pes => "p_es",
            ChannelId::Ptp => "p_tp",
            ChannelId::EitSum => "eit_sum",
            ChannelId::PawMonitor => "p_aw_monitor",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            ChannelId::Volume => "ml",
            ChannelId::Flow => "l/s",
            ChannelId::Paw | ChannelId::Pes | ChannelId::Ptp | ChannelId::PawMonitor => "cmH2O",
            ChannelId::Pab => "mmHg",
            ChannelId::EitSum => "a.u.",
        }
    }

    pub fn device(self) -> Device {
        match self {
            ChannelId::Volume | ChannelId::Flow | ChannelId::Paw => Device::Ventilator,
            ChannelId::Pab | ChannelId::Pes | ChannelId::Ptp | ChannelId::PawMonitor => Device::Monitor,
            ChannelId::EitSum => Device::Eit,
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChannelId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown channel '{s}'"))
    }
}

/// A uniformly sampled signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub id: ChannelId,
    pub samples: Vec<f64>,
    /// Sampling rate in Hz.
    pub rate: f64,
    pub unit: String,
}

impl Channel {
    pub fn new(id: ChannelId, samples: Vec<f64>, rate: f64) -> Self {
        Channel { id, samples, rate, unit: id.unit().to_string() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for id in ChannelId::ALL {
            assert_eq!(id.as_str().parse::<ChannelId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
    }
}
