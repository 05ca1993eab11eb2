//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "recipe": "burgers",
//!   "seed": 0,
//!   "dataset": { "n_points": 256, "t_total": 40.0, "coarse_factors": [2, 4, 8] },
//!   "train": { "q": 4, "epochs": 100, "lr": 0.001, "noise": "none" },
//!   "eval": { "horizon_factor": 1, "lyapunov": false },
//!   "data": "runs/burgers/data",
//!   "model": "runs/burgers/model.stnm",
//!   "out": "runs/burgers",
//!   "c": 4
//! }
//! ```
//!
//! `dataset` keys override the recipe preset; `train` keys override the
//! training defaults. Command-line flags override both.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use stencilnet::datagen::{Recipe, RecipeConfig};
use stencilnet::metrics::LyapunovConfig;
use stencilnet::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Rollout length as a multiple of the data window.
    pub horizon_factor: usize,
    pub lyapunov: bool,
    pub lyapunov_config: LyapunovConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { horizon_factor: 1, lyapunov: false, lyapunov_config: LyapunovConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub recipe: Recipe,
    pub seed: u64,
    pub dataset: RecipeConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Coarse-graining factor to train or evaluate on.
    pub c: Option<usize>,
}

/// `overlay` merged into `base`, recursing into objects.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    pub fn for_recipe(recipe: Recipe) -> Self {
        Self {
            recipe,
            seed: 0,
            dataset: RecipeConfig::preset(recipe),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            data: None,
            model: None,
            out: None,
            c: None,
        }
    }

    /// Reads `path`, or starts from the preset of `recipe` (burgers when
    /// neither names one).
    pub fn load(path: Option<&Path>, recipe: Option<Recipe>) -> Result<Self> {
        let user: Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).map_err(stencilnet::Error::from).context("parsing config")?
            }
            None => Value::Object(Default::default()),
        };
        let from_file = user
            .get("recipe")
            .map(|v| serde_json::from_value::<Recipe>(v.clone()))
            .transpose()
            .map_err(stencilnet::Error::from)?;
        let recipe = recipe.or(from_file).unwrap_or(Recipe::Burgers);
        let mut base = serde_json::to_value(Self::for_recipe(recipe)).map_err(stencilnet::Error::from)?;
        merge(&mut base, user);
        base["recipe"] = serde_json::to_value(recipe).map_err(stencilnet::Error::from)?;
        base["dataset"]["recipe"] = base["recipe"].clone();
        let cfg: Self = serde_json::from_value(base).map_err(stencilnet::Error::from).context("config schema")?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"recipe": "ks", "dataset": {"t_total": 10.0}, "train": {"q": 2}}"#).unwrap();
        let c = ExperimentConfig::load(Some(&p), None).unwrap();
        assert_eq!(c.recipe, Recipe::Ks);
        assert_eq!(c.dataset.t_total, 10.0);
        assert_eq!(c.dataset.length, 64.0);
        assert_eq!(c.train.q, 2);
        assert_eq!(c.train.gamma, 0.9);
    }

    #[test]
    fn unknown_recipe_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"recipe": "navier"}"#).unwrap();
        assert!(ExperimentConfig::load(Some(&p), None).is_err());
    }
}
