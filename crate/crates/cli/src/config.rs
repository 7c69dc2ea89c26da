//! Experiment configuration: JSON ingestion, validation, command-line
//! overrides and the config digest that names every output file.

use rfmc::campaign::{CampaignSpec, SplitPlan, SplitSize};
use rfmc::models::{
    BagParams, BaseParams, DtParams, GnbParams, KnnParams, LrParams, ModelKind, RfParams,
    StackParams, SvcParams, VoteParams,
};
use rfmc::stability::SlopeGeometry;
use rfmc::{Error, Real, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// JSON schema the config validates against, shipped with the crate.
pub const CONFIG_SCHEMA: &str = include_str!("../schema/experiment-config.schema.json");

/// Train/test split request. Exactly one of the two fields must be set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub repeats: usize,
}

/// Optional per-kind hyperparameter overrides. An absent entry means the
/// built-in defaults; a present entry must spell out the full parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<LrParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knn: Option<KnnParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<DtParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svc: Option<SvcParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf: Option<RfParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gnb: Option<GnbParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack: Option<StackParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bag: Option<BagParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote: Option<VoteParams>,
}

impl HyperConfig {
    fn base(&self) -> BaseParams {
        BaseParams {
            lr: self.lr.unwrap_or_default(),
            knn: self.knn.unwrap_or_default(),
            dt: self.dt.unwrap_or_default(),
            svc: self.svc.unwrap_or_default(),
            rf: self.rf.unwrap_or_default(),
            gnb: self.gnb.unwrap_or_default(),
        }
    }
}

/// The full experiment description. Unknown keys are rejected at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mean strength sweep (kPa), one level per entry.
    pub mu_values: Vec<Real>,
    /// Coefficients of variation; one dataset per (cov, delta_h) pair.
    pub cov_values: Vec<Real>,
    /// Horizontal correlation lengths (m).
    pub delta_h_values: Vec<Real>,
    /// Vertical correlation length (m), shared by all datasets.
    pub delta_v: Real,
    /// Realizations per mean level per dataset.
    pub n_per_mu: usize,
    pub seed: u64,
    #[serde(default)]
    pub geometry: SlopeGeometry,
    /// Center/radius step of the critical-circle search (m).
    pub search_step: Real,
    pub split: SplitConfig,
    pub cv: CvConfig,
    /// Model kinds to train: any of lr, knn, dt, svc, rf, gnb, stack, bag, vote.
    pub models: Vec<String>,
    #[serde(default)]
    pub hyperparams: HyperConfig,
}

/// Parses a model kind token from the config's model list.
pub fn parse_kind(s: &str) -> Result<ModelKind> {
    Ok(match s {
        "lr" => ModelKind::Lr,
        "knn" => ModelKind::Knn,
        "dt" => ModelKind::Dt,
        "svc" => ModelKind::Svc,
        "rf" => ModelKind::Rf,
        "gnb" => ModelKind::Gnb,
        "stack" => ModelKind::Stack,
        "bag" => ModelKind::Bag,
        "vote" => ModelKind::Vote,
        other => return Err(Error::config(format!("unknown model kind {other:?}"))),
    })
}

impl ExperimentConfig {
    /// Reads and validates a config file. serde reports unknown or malformed
    /// keys with line and column positions.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies the command-line overrides, returning the resolved config the
    /// run is actually keyed on.
    pub fn resolve(mut self, seed: Option<u64>, scale: Option<Real>) -> Result<ExperimentConfig> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(f) = scale {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::config(format!("scale must be positive, got {f}")));
            }
            self.n_per_mu = ((self.n_per_mu as Real * f).round() as usize).max(1);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu_values.is_empty() || self.cov_values.is_empty() || self.delta_h_values.is_empty()
        {
            return Err(Error::config(
                "mu_values, cov_values and delta_h_values must be non-empty",
            ));
        }
        if self.models.is_empty() {
            return Err(Error::config("model list must be non-empty"));
        }
        for m in &self.models {
            parse_kind(m)?;
        }
        match (self.split.fraction, self.split.count) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::config(
                    "split must set exactly one of fraction or count",
                ))
            }
        }
        if self.cv.k < 2 || self.cv.repeats == 0 {
            return Err(Error::config("cv needs k >= 2 and repeats >= 1"));
        }
        // exercise the campaign validation once per dataset
        for spec in self.campaign_specs() {
            spec_probe(&spec)?;
        }
        Ok(())
    }

    /// One campaign spec per (cov, delta_h) pair, in grid order.
    pub fn campaign_specs(&self) -> Vec<CampaignSpec> {
        let mut specs = Vec::new();
        for &cov in &self.cov_values {
            for &dh in &self.delta_h_values {
                specs.push(CampaignSpec {
                    mu_values: self.mu_values.clone(),
                    cov,
                    delta_h: dh,
                    delta_v: self.delta_v,
                    n_per_mu: self.n_per_mu,
                    seed: self.seed,
                    geometry: self.geometry,
                    search_step: self.search_step,
                });
            }
        }
        specs
    }

    /// Dataset label for a campaign of this config, used in file names and
    /// CSV dataset columns.
    pub fn dataset_name(spec: &CampaignSpec) -> String {
        let xi = spec.delta_h / spec.delta_v;
        format!("cov{}_xi{}", num_token(spec.cov), num_token(xi))
    }

    pub fn split_plan(&self) -> SplitPlan {
        let size = match (self.split.fraction, self.split.count) {
            (Some(f), _) => SplitSize::Fraction(f),
            (_, Some(c)) => SplitSize::Count(c),
            _ => unreachable!("validated"),
        };
        SplitPlan {
            size,
            seed: self.seed,
        }
    }

    pub fn base_params(&self) -> BaseParams {
        self.hyperparams.base()
    }

    pub fn stack_params(&self) -> StackParams {
        self.hyperparams.stack.clone().unwrap_or(StackParams {
            base: self.hyperparams.base(),
            ..StackParams::default()
        })
    }

    pub fn bag_params(&self) -> BagParams {
        self.hyperparams.bag.clone().unwrap_or_default()
    }

    pub fn vote_params(&self) -> VoteParams {
        self.hyperparams.vote.clone().unwrap_or(VoteParams {
            base: self.hyperparams.base(),
        })
    }

    /// Hex digest of the resolved config; prefixes every output file so a
    /// directory can hold runs of several configs without collision.
    pub fn digest(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let hash = Sha256::digest(&bytes);
        let mut s = String::with_capacity(12);
        for b in &hash[..6] {
            s.push_str(&format!("{b:02x}"));
        }
        Ok(s)
    }

    /// Writes the resolved config beside the outputs.
    pub fn write_resolved(&self, out: &Path, digest: &str) -> Result<()> {
        let path = out.join(format!("{digest}_config.json"));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Runs the cheap parts of campaign validation without generating anything.
fn spec_probe(spec: &CampaignSpec) -> Result<()> {
    rfmc::FieldStats::new(spec.mu_values[0], spec.cov, spec.delta_h, spec.delta_v)?;
    if spec.n_per_mu == 0 {
        return Err(Error::config("n_per_mu must be at least 1"));
    }
    if !(spec.search_step.is_finite() && spec.search_step > 0.0) {
        return Err(Error::config("search_step must be positive"));
    }
    Ok(())
}

/// Compact numeric token for file names: trailing zeros trimmed, `25` not
/// `25.0`.
pub fn num_token(v: Real) -> String {
    let s = format!("{v}");
    match s.strip_suffix(".0") {
        Some(t) => t.to_string(),
        None => s,
    }
}
