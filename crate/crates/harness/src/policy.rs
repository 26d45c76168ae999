//! Run-time thermal management driven by sensor readings.

use std::collections::{BTreeSet, HashSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use stackemu_core::{LayerRole, PowerMap, StackConfig};

use crate::config::layer_index;
use crate::error::{AtStage, HarnessError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TileRef {
    pub layer: LayerRole,
    pub tile: usize,
}

/// Management policy with hysteresis: acts at `trigger_c`, undoes at
/// `release_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DtmPolicy {
    /// Scale every tile of a layer whose hottest sensor reaches the trigger.
    Throttle {
        trigger_c: f64,
        release_c: f64,
        factor: f64,
    },
    /// Exchange the power profiles of every pair while any sensor is hot.
    CoreSwap {
        trigger_c: f64,
        release_c: f64,
        pairs: Vec<[TileRef; 2]>,
    },
}

impl DtmPolicy {
    pub fn thresholds(&self) -> (f64, f64) {
        match self {
            DtmPolicy::Throttle { trigger_c, release_c, .. }
            | DtmPolicy::CoreSwap { trigger_c, release_c, .. } => (*trigger_c, *release_c),
        }
    }

    pub fn validate(&self, stack: &StackConfig) -> Result<(), HarnessError> {
        let (trigger, release) = self.thresholds();
        if !(trigger.is_finite() && release.is_finite() && release < trigger) {
            return Err(HarnessError::config(format!(
                "policy needs release_c < trigger_c, got {release} and {trigger}"
            )));
        }
        match self {
            DtmPolicy::Throttle { factor, .. } => {
                if !(*factor > 0.0 && *factor < 1.0) {
                    return Err(HarnessError::config(format!(
                        "throttle factor must lie in (0, 1), got {factor}"
                    )));
                }
            }
            DtmPolicy::CoreSwap { pairs, .. } => {
                if pairs.is_empty() {
                    return Err(HarnessError::config("core_swap needs at least one pair"));
                }
                let mut seen = HashSet::new();
                for [a, b] in pairs {
                    for t in [a, b] {
                        let l = layer_index(stack, t.layer)?;
                        if t.tile >= stack.layers[l].n_tiles() {
                            return Err(HarnessError::config(format!(
                                "tile {} does not exist on {}",
                                t.tile, t.layer
                            )));
                        }
                        if !seen.insert(*t) {
                            return Err(HarnessError::config(format!(
                                "tile {} of {} appears in more than one swap slot",
                                t.tile, t.layer
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Throttle,
    Release,
    Swap,
    SwapBack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvent {
    pub time: f64,
    pub action: Action,
    /// Throttled or released layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    /// Sensor whose reading decided the action.
    pub sensor: usize,
    pub reading: f64,
}

/// Readings seen at one policy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySample {
    pub time: f64,
    pub readings: Vec<f64>,
}

/// Policy state machine over sensor readings.
#[derive(Debug, Clone)]
pub struct Controller {
    policy: DtmPolicy,
    sensor_layers: Vec<usize>,
    throttled: BTreeSet<usize>,
    swapped: bool,
}

/// Index and value of the largest reading among `idx`; lowest index on ties.
fn hottest(readings: &[f64], idx: impl Iterator<Item = usize>) -> Option<(usize, f64)> {
    idx.fold(None, |best, i| match best {
        Some((_, v)) if readings[i] <= v => best,
        _ => Some((i, readings[i])),
    })
}

impl Controller {
    pub fn new(policy: DtmPolicy, sensor_layers: Vec<usize>) -> Self {
        Controller {
            policy,
            sensor_layers,
            throttled: BTreeSet::new(),
            swapped: false,
        }
    }

    pub fn throttled_layers(&self) -> Vec<usize> {
        self.throttled.iter().copied().collect()
    }

    pub fn swapped(&self) -> bool {
        self.swapped
    }

    /// Feeds one set of readings; returns the actions taken, in layer order.
    pub fn observe(&mut self, time: f64, readings: &[f64]) -> Vec<PolicyEvent> {
        assert_eq!(readings.len(), self.sensor_layers.len(), "one reading per sensor");
        let (trigger, release) = self.policy.thresholds();
        let mut events = Vec::new();
        match self.policy {
            DtmPolicy::Throttle { .. } => {
                let layers: BTreeSet<usize> = self.sensor_layers.iter().copied().collect();
                for layer in layers {
                    let on_layer = (0..readings.len()).filter(|&i| self.sensor_layers[i] == layer);
                    let Some((sensor, reading)) = hottest(readings, on_layer) else {
                        continue;
                    };
                    let action = if !self.throttled.contains(&layer) && reading >= trigger {
                        self.throttled.insert(layer);
                        Action::Throttle
                    } else if self.throttled.contains(&layer) && reading < release {
                        self.throttled.remove(&layer);
                        Action::Release
                    } else {
                        continue;
                    };
                    events.push(PolicyEvent {
                        time,
                        action,
                        layer: Some(layer),
                        sensor,
                        reading,
                    });
                }
            }
            DtmPolicy::CoreSwap { .. } => {
                if let Some((sensor, reading)) = hottest(readings, 0..readings.len()) {
                    let action = if !self.swapped && reading >= trigger {
                        Some(Action::Swap)
                    } else if self.swapped && reading < release {
                        Some(Action::SwapBack)
                    } else {
                        None
                    };
                    if let Some(action) = action {
                        self.swapped = action == Action::Swap;
                        events.push(PolicyEvent {
                            time,
                            action,
                            layer: None,
                            sensor,
                            reading,
                        });
                    }
                }
            }
        }
        events
    }

    /// The power map with the current management state applied to `base`.
    pub fn apply(&self, base: &PowerMap, stack: &StackConfig) -> Result<PowerMap, HarnessError> {
        let mut map = base.clone();
        match &self.policy {
            DtmPolicy::Throttle { factor, .. } => {
                for &l in &self.throttled {
                    map = map.scale_layer(l, *factor).at(Stage::Policy)?;
                }
            }
            DtmPolicy::CoreSwap { pairs, .. } => {
                if self.swapped {
                    for [a, b] in pairs {
                        let a = (layer_index(stack, a.layer)?, a.tile);
                        let b = (layer_index(stack, b.layer)?, b.tile);
                        map = map.swap_tiles(a, b).at(Stage::Policy)?;
                    }
                }
            }
        }
        Ok(map)
    }
}

/// Re-runs the policy on logged readings.
pub fn replay(policy: &DtmPolicy, sensor_layers: &[usize], samples: &[PolicySample]) -> Vec<PolicyEvent> {
    let mut c = Controller::new(policy.clone(), sensor_layers.to_vec());
    samples
        .iter()
        .flat_map(|s| c.observe(s.time, &s.readings))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn throttle() -> DtmPolicy {
        DtmPolicy::Throttle {
            trigger_c: 80.0,
            release_c: 70.0,
            factor: 0.5,
        }
    }

    #[test]
    fn hysteresis_per_layer() {
        let mut c = Controller::new(throttle(), vec![1, 1, 3]);
        assert!(c.observe(0.1, &[60.0, 79.0, 90.0])[0].layer == Some(3));
        assert_eq!(c.throttled_layers(), vec![3]);
        // between release and trigger: nothing
        assert!(c.observe(0.2, &[75.0, 79.9, 75.0]).is_empty());
        let ev = c.observe(0.3, &[80.0, 80.0, 69.0]);
        assert_eq!(ev.len(), 2);
        assert_eq!((ev[0].action, ev[0].sensor), (Action::Throttle, 0));
        assert_eq!((ev[1].action, ev[1].layer), (Action::Release, Some(3)));
    }

    #[test]
    fn swap_and_back() {
        let p = DtmPolicy::CoreSwap {
            trigger_c: 50.0,
            release_c: 40.0,
            pairs: vec![],
        };
        let mut c = Controller::new(p, vec![0, 0]);
        assert_eq!(c.observe(1.0, &[51.0, 20.0])[0].action, Action::Swap);
        assert!(c.swapped());
        assert!(c.observe(2.0, &[45.0, 20.0]).is_empty());
        assert_eq!(c.observe(3.0, &[39.0, 20.0])[0].action, Action::SwapBack);
    }

    #[test]
    fn validation() {
        let s = stackemu_core::preset_stack(2).unwrap();
        assert!(throttle().validate(&s).is_ok());
        let bad = DtmPolicy::Throttle { trigger_c: 70.0, release_c: 70.0, factor: 0.5 };
        assert!(bad.validate(&s).is_err());
        let bad = DtmPolicy::Throttle { trigger_c: 80.0, release_c: 70.0, factor: 1.0 };
        assert!(bad.validate(&s).is_err());
        let t = |tile| TileRef { layer: LayerRole::Sp, tile };
        let overlap = DtmPolicy::CoreSwap {
            trigger_c: 80.0,
            release_c: 70.0,
            pairs: vec![[t(0), t(1)], [t(1), t(2)]],
        };
        assert!(overlap.validate(&s).is_err());
        let ok = DtmPolicy::CoreSwap {
            trigger_c: 80.0,
            release_c: 70.0,
            pairs: vec![[t(0), t(1)], [t(2), t(3)]],
        };
        assert!(ok.validate(&s).is_ok());
        let missing = DtmPolicy::CoreSwap {
            trigger_c: 80.0,
            release_c: 70.0,
            pairs: vec![[t(0), TileRef { layer: LayerRole::Sn1, tile: 0 }]],
        };
        assert!(missing.validate(&s).is_err());
    }
}
