use serde::{Deserialize, Serialize};

use super::{evaluate, train, EvalReport, Result, TrainConfig};
use crate::network::Variant;
use crate::synthdata::Dataset;

/// The five ablation runs derived from `base`: the full model, the full
/// model without edge regularization, and the three architecture variants.
pub fn ablation_configs(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let with = |variant: Variant, lambda_edge: f64| TrainConfig {
        variant,
        lambda_edge,
        ..base.clone()
    };
    vec![
        ("full", with(Variant::Full, base.lambda_edge)),
        ("no_edge", with(Variant::Full, 0.0)),
        ("no_spadain", with(Variant::NoSpadain, base.lambda_edge)),
        ("concat1", with(Variant::Concat1, base.lambda_edge)),
        ("maxpool", with(Variant::Maxpool, base.lambda_edge)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub variant: Variant,
    pub lambda_edge: f64,
    pub seen_pmd: f64,
    pub unseen_pmd: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub copy_seen_pmd: f64,
    pub copy_unseen_pmd: f64,
}

impl AblationTable {
    pub fn push(&mut self, name: &str, cfg: &TrainConfig, report: &EvalReport, final_loss: f64) {
        self.copy_seen_pmd = report.copy_seen_pmd;
        self.copy_unseen_pmd = report.copy_unseen_pmd;
        self.rows.push(AblationRow {
            name: name.to_owned(),
            variant: cfg.variant,
            lambda_edge: cfg.lambda_edge,
            seen_pmd: report.seen_pmd,
            unseen_pmd: report.unseen_pmd,
            final_loss,
        });
    }

    pub fn get(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("name,variant,lambda_edge,seen_pmd,unseen_pmd,final_loss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e}\n",
                r.name,
                r.variant,
                r.lambda_edge,
                r.seen_pmd,
                r.unseen_pmd,
                r.final_loss
            ));
        }
        out.push_str(&format!(
            "copy_identity,,,{:e},{:e},\n",
            self.copy_seen_pmd, self.copy_unseen_pmd
        ));
        out
    }

    /// Fixed-width table with PMD in units of 1e-4.
    pub fn text(&self) -> String {
        let mut out = format!("{:<14} {:>14} {:>14}\n", "model", "seen (1e-4)", "unseen (1e-4)");
        for r in &self.rows {
            out.push_str(&format!("{:<14} {:>14.3} {:>14.3}\n", r.name, r.seen_pmd * 1e4, r.unseen_pmd * 1e4));
        }
        out.push_str(&format!(
            "{:<14} {:>14.3} {:>14.3}\n",
            "copy_identity",
            self.copy_seen_pmd * 1e4,
            self.copy_unseen_pmd * 1e4
        ));
        out
    }
}

/// Trains every ablation configuration with the same data, seed and budget
/// and evaluates each on the held-out pairs.
pub fn run_ablation_suite(dataset: &Dataset, base: &TrainConfig) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for (name, cfg) in ablation_configs(base) {
        log::info!("ablation: training {name}");
        let cfg = TrainConfig {
            eval_each_epoch: false,
            ..cfg
        };
        let run = match cfg.precision {
            super::Precision::F32 => {
                let t = train::<f32>(dataset, &cfg, None)?;
                (evaluate(&t.params, &t.model, &dataset.eval)?, t.log)
            }
            super::Precision::F64 => {
                let t = train::<f64>(dataset, &cfg, None)?;
                (evaluate(&t.params, &t.model, &dataset.eval)?, t.log)
            }
        };
        let final_loss = run.1.last().map_or(f64::NAN, |r| r.total);
        table.push(name, &cfg, &run.0, final_loss);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_configs_share_everything_but_the_ablated_setting() {
        let base = TrainConfig {
            seed: 4,
            epochs: 3,
            ..TrainConfig::default()
        };
        let cfgs = ablation_configs(&base);
        let names: Vec<_> = cfgs.iter().map(|c| c.0).collect();
        assert_eq!(names, ["full", "no_edge", "no_spadain", "concat1", "maxpool"]);
        for (_, c) in &cfgs {
            assert_eq!((c.seed, c.epochs, c.lr, c.batch_size), (4, 3, base.lr, 8));
        }
        assert_eq!(cfgs[1].1.lambda_edge, 0.0);
        assert_eq!(cfgs[1].1.variant, Variant::Full);
    }
}
