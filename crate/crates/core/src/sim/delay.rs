//! Message delay models in integer delay units.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayModel {
    /// Every message takes exactly `delta`.
    Fixed { delta: u64 },
    /// Uniform in `[min, max]`, before and after GST alike.
    Jitter { min: u64, max: u64 },
    /// Before GST, half of the messages are uniform in `[min, max]` and the
    /// rest may be held back until as late as `GST + max`. After GST every
    /// message is uniform in `[min, max]`.
    Adversarial { min: u64, max: u64 },
}

impl DelayModel {
    /// The post-GST bound Δ.
    pub fn max_delay(&self) -> u64 {
        match *self {
            DelayModel::Fixed { delta } => delta,
            DelayModel::Jitter { max, .. } | DelayModel::Adversarial { max, .. } => max,
        }
    }

    pub fn min_delay(&self) -> u64 {
        match *self {
            DelayModel::Fixed { delta } => delta,
            DelayModel::Jitter { min, .. } | DelayModel::Adversarial { min, .. } => min,
        }
    }

    pub fn is_valid(&self) -> bool {
        match *self {
            DelayModel::Fixed { delta } => delta > 0,
            DelayModel::Jitter { min, max } | DelayModel::Adversarial { min, max } => {
                min > 0 && min <= max
            }
        }
    }

    /// Delay for a message sent at `now`.
    pub fn sample<R: Rng + ?Sized>(&self, now: u64, gst: u64, rng: &mut R) -> u64 {
        match *self {
            DelayModel::Fixed { delta } => delta,
            DelayModel::Jitter { min, max } => rng.gen_range(min..=max),
            DelayModel::Adversarial { min, max } => {
                if now >= gst || rng.gen_bool(0.5) {
                    rng.gen_range(min..=max)
                } else {
                    let latest = (gst + max - now).max(min);
                    rng.gen_range(min..=latest)
                }
            }
        }
    }
}
