//! TOML experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use predfilt_core::environments::{BoFunction, BoKind};
use predfilt_core::filters::{FilterKind, PriorConfig};
use predfilt_core::net::{Activation, NetworkSpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Inbetween,
    Bandit,
    MnistBandit,
    Bo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Pbayes,
    Ts,
    EpsGreedy,
    Ei,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoFunctionName {
    Ackley,
    Branin,
    Hartmann6,
    Drawnn,
}

/// Factor ranks: `hidden` is `d_ω`, `last` is `d_η` (LoLoFi only), `joint` is
/// the LRKF rank `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ranks {
    pub hidden: usize,
    pub last: usize,
    pub joint: usize,
}

impl Default for Ranks {
    fn default() -> Self {
        Ranks {
            hidden: 50,
            last: 100,
            joint: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Dynamics noise of the last-layer block.
    pub q_last: f64,
    /// Dynamics noise of the hidden block (and of the LRKF factor).
    pub q_hidden: f64,
    /// Observation variance.
    pub r: f64,
    /// Jitter of the moment-matched classification covariance.
    pub eps: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            q_last: 1e-6,
            q_hidden: 1e-6,
            r: 0.01,
            eps: 1e-2,
        }
    }
}

/// Prior variances; unset values fall back to 1.0 for LRKF and 0.1 otherwise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub var_last: Option<f64>,
    pub var_hidden: Option<f64>,
}

/// Hidden widths; unset means four layers of 128 for `inbetween`, three of 64
/// for `bo` and two of 64 otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection {
            hidden: None,
            activation: Activation::Elu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditSection {
    pub arms: usize,
    pub context_dim: usize,
    pub noise_std: f64,
    pub drift_var: f64,
}

impl Default for BanditSection {
    fn default() -> Self {
        BanditSection {
            arms: 5,
            context_dim: 2,
            noise_std: 0.1,
            drift_var: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnistSection {
    /// Directory holding the IDX training files; falls back to
    /// `PREDFILT_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoSection {
    pub function: BoFunctionName,
    /// Input dimension for `ackley` and `drawnn`.
    pub dim: usize,
    /// Seed of the `drawnn` target network.
    pub target_seed: u64,
    /// Gradient refinement of Thompson-sampling proposals; on by default
    /// for `drawnn` only.
    pub refine: Option<bool>,
}

impl Default for BoSection {
    fn default() -> Self {
        BoSection {
            function: BoFunctionName::Branin,
            dim: 2,
            target_seed: 0,
            refine: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub filter: FilterKind,
    pub policy: PolicyKind,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub candidate_count: usize,
    /// ε of ε-greedy.
    pub epsilon: f64,
    pub diagnostics: bool,
    pub ranks: Ranks,
    pub noise: NoiseSection,
    pub prior: PriorSection,
    pub net: NetSection,
    pub bandit: BanditSection,
    pub mnist: MnistSection,
    pub bo: BoSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Bandit,
            filter: FilterKind::HiLoFi,
            policy: PolicyKind::Pbayes,
            steps: 1000,
            seeds: vec![0],
            candidate_count: 512,
            epsilon: 0.05,
            diagnostics: false,
            ranks: Ranks::default(),
            noise: NoiseSection::default(),
            prior: PriorSection::default(),
            net: NetSection::default(),
            bandit: BanditSection::default(),
            mnist: MnistSection::default(),
            bo: BoSection::default(),
        }
    }
}

/// Offending keys with one message each.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<(String, String)>,
}

impl ConfigError {
    fn single(key: &str, msg: impl Into<String>) -> Self {
        ConfigError {
            problems: vec![(key.to_string(), msg.into())],
        }
    }

    pub fn keys(&self) -> Vec<&str> {
        self.problems.iter().map(|(k, _)| k.as_str()).collect()
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for (k, m) in &self.problems {
            writeln!(f, "  {k}: {m}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Key path of the first unknown or mistyped field in a TOML parse error.
fn parse_error_key(err: &toml::de::Error, text: &str) -> String {
    let msg = err.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    err.span()
        .and_then(|s| text.get(s))
        .map(|s| s.split(['=', '\n']).next().unwrap_or(s).trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "<document>".to_string())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            ConfigError::single(&parse_error_key(&e, text), e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::single("<file>", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.net
            .hidden
            .clone()
            .unwrap_or_else(|| match self.experiment {
                ExperimentKind::Inbetween => vec![128; 4],
                ExperimentKind::Bo => vec![64; 3],
                _ => vec![64, 64],
            })
    }

    pub fn bo_function(&self) -> BoFunction {
        let kind = match self.bo.function {
            BoFunctionName::Ackley => BoKind::Ackley { dim: self.bo.dim },
            BoFunctionName::Branin => BoKind::Branin,
            BoFunctionName::Hartmann6 => BoKind::Hartmann6,
            BoFunctionName::Drawnn => BoKind::DrawNn {
                dim: self.bo.dim,
                seed: self.bo.target_seed,
            },
        };
        BoFunction::new(kind).expect("dimension checked by validate")
    }

    pub fn bo_refine(&self) -> bool {
        self.bo
            .refine
            .unwrap_or(self.bo.function == BoFunctionName::Drawnn)
    }

    /// Input and output widths of the network for this experiment.
    fn io_dims(&self) -> (usize, usize) {
        match self.experiment {
            ExperimentKind::Inbetween => (1, 1),
            ExperimentKind::Bandit => (self.bandit.context_dim, self.bandit.arms),
            ExperimentKind::MnistBandit => (28 * 28, 10),
            ExperimentKind::Bo => (
                match self.bo.function {
                    BoFunctionName::Branin => 2,
                    BoFunctionName::Hartmann6 => 6,
                    _ => self.bo.dim,
                },
                1,
            ),
        }
    }

    pub fn network(&self) -> NetworkSpec {
        let (i, o) = self.io_dims();
        NetworkSpec::new(i, self.hidden_widths(), o, self.net.activation)
            .expect("widths checked by validate")
    }

    pub fn prior(&self) -> PriorConfig {
        let fallback = if self.filter == FilterKind::Lrkf {
            1.0
        } else {
            0.1
        };
        PriorConfig {
            var_last: self.prior.var_last.unwrap_or(fallback),
            var_hidden: self.prior.var_hidden.unwrap_or(fallback),
            rank_hidden: self.ranks.hidden,
            rank_last: self.ranks.last,
            rank: self.ranks.joint,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut p: Vec<(String, String)> = Vec::new();
        let mut bad = |k: &str, m: String| p.push((k.to_string(), m));

        if self.steps == 0 {
            bad("steps", "must be at least 1".into());
        }
        if self.seeds.is_empty() {
            bad("seeds", "must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            bad("seeds", "seeds must be distinct".into());
        }
        if self.candidate_count == 0 {
            bad("candidate_count", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            bad("epsilon", format!("{} outside [0, 1]", self.epsilon));
        }
        for (k, v) in [
            ("noise.q_last", self.noise.q_last),
            ("noise.q_hidden", self.noise.q_hidden),
            ("noise.r", self.noise.r),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(k, format!("{v} is not a finite nonnegative number"));
            }
        }
        if !(self.noise.eps > 0.0 && self.noise.eps.is_finite()) {
            bad("noise.eps", format!("{} is not positive", self.noise.eps));
        }
        for (k, v) in [
            ("prior.var_last", self.prior.var_last),
            ("prior.var_hidden", self.prior.var_hidden),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    bad(k, format!("{v} is not positive"));
                }
            }
        }

        let policy_ok = match self.experiment {
            ExperimentKind::Inbetween => true,
            ExperimentKind::Bandit | ExperimentKind::MnistBandit => self.policy != PolicyKind::Ei,
            ExperimentKind::Bo => matches!(self.policy, PolicyKind::Ts | PolicyKind::Ei),
        };
        if !policy_ok {
            bad(
                "policy",
                format!("{:?} does not apply to {:?}", self.policy, self.experiment),
            );
        }

        match self.experiment {
            ExperimentKind::Bandit => {
                if self.bandit.arms == 0 {
                    bad("bandit.arms", "must be at least 1".into());
                }
                if self.bandit.context_dim == 0 {
                    bad("bandit.context_dim", "must be at least 1".into());
                }
                if !(self.bandit.noise_std >= 0.0) {
                    bad("bandit.noise_std", "must be nonnegative".into());
                }
                if !(self.bandit.drift_var >= 0.0) {
                    bad("bandit.drift_var", "must be nonnegative".into());
                }
            }
            ExperimentKind::Bo => {
                let needs_dim = matches!(
                    self.bo.function,
                    BoFunctionName::Ackley | BoFunctionName::Drawnn
                );
                if needs_dim
                    && !(1..=predfilt_core::decision::MAX_HALTON_DIM).contains(&self.bo.dim)
                {
                    bad(
                        "bo.dim",
                        format!(
                            "{} outside 1..={}",
                            self.bo.dim,
                            predfilt_core::decision::MAX_HALTON_DIM
                        ),
                    );
                }
            }
            _ => {}
        }

        let widths = self.hidden_widths();
        if widths.is_empty() || widths.contains(&0) {
            bad(
                "net.hidden",
                "needs at least one layer, all widths positive".into(),
            );
        }

        // rank checks need valid network dimensions
        if p.is_empty() {
            let spec = self.network();
            let (dw, dl) = (spec.hidden_len(), spec.last_len());
            let mut rank = |key: &str, r: usize, max: usize| {
                if r == 0 || r > max {
                    p.push((key.to_string(), format!("{r} outside 1..={max}")));
                }
            };
            match self.filter {
                FilterKind::Dense => {}
                FilterKind::Lrkf => rank("ranks.joint", self.ranks.joint, dw + dl),
                FilterKind::HiLoFi => rank("ranks.hidden", self.ranks.hidden, dw),
                FilterKind::LoLoFi => {
                    rank("ranks.hidden", self.ranks.hidden, dw);
                    rank("ranks.last", self.ranks.last, dl);
                }
            }
        }

        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems: p })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.prior().var_last, 0.1);
        assert_eq!(cfg.noise.q_hidden, 1e-6);
        assert_eq!(cfg.ranks.hidden, 50);
        assert_eq!(cfg.candidate_count, 512);
        assert_eq!(cfg.epsilon, 0.05);
    }

    #[test]
    fn lrkf_prior_defaults_to_unit() {
        let cfg = ExperimentConfig::from_toml_str("filter = \"lrkf\"").unwrap();
        assert_eq!(cfg.prior().var_hidden, 1.0);
    }

    #[test]
    fn roundtrip() {
        let mut cfg = ExperimentConfig {
            experiment: ExperimentKind::Bo,
            policy: PolicyKind::Ei,
            ..Default::default()
        };
        cfg.bo.function = BoFunctionName::Ackley;
        cfg.net.hidden = Some(vec![8, 8]);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("stepz = 3").unwrap_err();
        assert_eq!(err.keys(), vec!["stepz"]);
        let err = ExperimentConfig::from_toml_str("[noise]\nqq = 1.0").unwrap_err();
        assert_eq!(err.keys(), vec!["qq"]);
    }

    #[test]
    fn all_offending_keys_listed() {
        let err = ExperimentConfig::from_toml_str(
            "steps = 0\nseeds = []\n[noise]\nr = -1.0\n[prior]\nvar_last = 0.0",
        )
        .unwrap_err();
        assert_eq!(
            err.keys(),
            vec!["steps", "seeds", "noise.r", "prior.var_last"]
        );
    }

    #[test]
    fn rank_bounded_by_block() {
        let err = ExperimentConfig::from_toml_str(
            "[net]\nhidden = [3]\n[ranks]\nhidden = 50\n[bandit]\narms = 2\ncontext_dim = 1",
        )
        .unwrap_err();
        assert_eq!(err.keys(), vec!["ranks.hidden"]);
    }

    #[test]
    fn policy_must_fit_experiment() {
        let err = ExperimentConfig::from_toml_str("policy = \"ei\"").unwrap_err();
        assert_eq!(err.keys(), vec!["policy"]);
        let err = ExperimentConfig::from_toml_str("experiment = \"bo\"\npolicy = \"pbayes\"")
            .unwrap_err();
        assert_eq!(err.keys(), vec!["policy"]);
    }
}
