//! Side-by-side comparison of scenarios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stackemu_core::LayerRole;

use crate::config::ScenarioConfig;
use crate::error::{ErrorKind, HarnessError, Stage};
use crate::scenario::{run_scenario_with, RunPlan};

const ROLE_ORDER: [LayerRole; 4] = [LayerRole::Sp, LayerRole::Sn1, LayerRole::Sn2, LayerRole::S0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    /// Steady max per device layer, bottom to top.
    pub layer_max_c: Vec<(LayerRole, f64)>,
    pub max_drop_mv: Option<f64>,
    pub min_mttf_layer: Option<LayerRole>,
}

impl ComparisonRow {
    pub fn max_c(&self) -> f64 {
        self.layer_max_c.iter().map(|(_, t)| *t).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn layer(&self, role: LayerRole) -> Option<f64> {
        self.layer_max_c.iter().find(|(r, _)| *r == role).map(|(_, t)| *t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

/// Runs every scenario (concurrently) without the transient stage; rows are
/// sorted by name, equal names keep their input order.
pub fn compare_scenarios(scenarios: &[ScenarioConfig]) -> Result<Comparison, HarnessError> {
    if scenarios.len() < 2 {
        return Err(HarnessError::new(
            Stage::Compare,
            ErrorKind::Validation,
            format!("compare needs at least 2 scenarios, got {}", scenarios.len()),
        ));
    }
    let plan = RunPlan {
        pdn: true,
        reliability: true,
        ..RunPlan::steady_only()
    };
    let mut rows = scenarios
        .par_iter()
        .map(|cfg| {
            let run = run_scenario_with(cfg, plan).map_err(|e| HarnessError {
                message: format!("scenario '{}': {}", cfg.name, e.message),
                ..e
            })?;
            let body = run.report.body;
            Ok(ComparisonRow {
                name: body.name,
                layer_max_c: body.steady.layers.iter().map(|l| (l.role, l.max_c)).collect(),
                max_drop_mv: body.pdn.map(|p| p.max_drop_mv),
                min_mttf_layer: body
                    .reliability
                    .map(|r| run.artifacts.stack.layers[r.min_mttf_layer].role),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(Comparison { rows })
}

impl Comparison {
    /// Fixed-width text table; missing values print as `-`.
    pub fn to_table(&self) -> String {
        let roles: Vec<LayerRole> = ROLE_ORDER
            .into_iter()
            .filter(|r| self.rows.iter().any(|row| row.layer(*r).is_some()))
            .collect();
        let mut header = vec!["scenario".to_string()];
        header.extend(roles.iter().map(|r| format!("{r} max C")));
        header.push("max drop mV".into());
        header.push("min MTTF".into());
        let mut lines = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.name.clone()];
            cells.extend(
                roles
                    .iter()
                    .map(|r| row.layer(*r).map_or("-".into(), |t| format!("{t:.3}"))),
            );
            cells.push(row.max_drop_mv.map_or("-".into(), |d| format!("{d:.3}")));
            cells.push(row.min_mttf_layer.map_or("-".into(), |r| r.to_string()));
            lines.push(cells);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
