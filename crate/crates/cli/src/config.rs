//! Optional TOML config file. Every key mirrors a flag of the same name in the
//! section of its subcommand; flags win over the file.
//!
//! ```toml
//! seed = 7
//!
//! [matcher]
//! name = "reference"
//! match-on = "argmax"
//! thresholds = [0.45, 0.7]
//!
//! [protoem]
//! prototypes = 4
//! iters = 40
//!
//! [simulate]
//! noise = "0.1..0.5"
//! k-grid = [1, 2, 4, 6, 8, 10]
//! ```

use std::path::{Path, PathBuf};

use comatch_core::matcher::{DecisionMode, RelationConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "COMATCH_SEED";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub matcher: MatcherSection,
    pub gen: GenSection,
    pub protoem: ProtoemSection,
    pub fuse: FuseSection,
    pub simulate: SimulateSection,
    pub serve: ServeSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MatcherSection {
    pub name: Option<String>,
    pub match_on: Option<DecisionMode>,
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenSection {
    pub preset: Option<String>,
    pub spec: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub pairs: Option<usize>,
    pub records_per_prototype: Option<usize>,
    pub prototypes: Option<usize>,
    pub noise: Option<f64>,
    pub noise_model: Option<String>,
    pub machine_accuracy: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProtoemSection {
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub prototypes: Option<usize>,
    pub iters: Option<usize>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub naive: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FuseSection {
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub machine: Option<PathBuf>,
    pub human: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub relations_out: Option<PathBuf>,
    pub phi: Option<String>,
    pub noise: Option<f64>,
    pub noise_model: Option<String>,
    pub machine_accuracy: Option<f64>,
    pub seed: Option<u64>,
    #[serde(rename = "match")]
    pub match_pairs: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateSection {
    pub data: Option<PathBuf>,
    pub preset: Option<String>,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub noise: Option<String>,
    pub noise_model: Option<String>,
    pub variants: Option<String>,
    pub k_grid: Option<Vec<usize>>,
    pub em_grid: Option<Vec<usize>>,
    pub seeds: Option<u64>,
    pub seed: Option<u64>,
    pub machine_accuracy: Option<f64>,
    pub calibrate: Option<bool>,
    pub history_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ServeSection {
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub machine: Option<PathBuf>,
    pub addr: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Flag, then section, then top-level `seed`, then `COMATCH_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>, section: Option<u64>) -> CliResult<u64> {
        if let Some(s) = flag.or(section).or(self.seed) {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn matcher_name(&self, flag: Option<String>) -> String {
        flag.or_else(|| self.matcher.name.clone())
            .unwrap_or_else(|| comatch_core::matcher::REFERENCE_MATCHER.to_string())
    }

    pub fn match_on(&self, flag: Option<DecisionMode>) -> DecisionMode {
        flag.or(self.matcher.match_on).unwrap_or_default()
    }

    pub fn relation(&self) -> CliResult<RelationConfig> {
        let cfg = match &self.matcher.thresholds {
            Some(t) => RelationConfig { relations: t.len() + 1, thresholds: t.clone() },
            None => RelationConfig::default(),
        };
        cfg.check()?;
        Ok(cfg)
    }
}

/// Parse `a..b` (step 0.1), `a..b:step`, or a comma list.
pub fn parse_noise(text: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::Usage(format!("cannot parse noise grid \"{text}\"; use 0.1..0.5, 0.1..0.5:0.2 or 0.1,0.3"));
    let rates: Vec<f64> = if let Some((lo, rest)) = text.split_once("..") {
        let (hi, step) = rest.split_once(':').unwrap_or((rest, "0.1"));
        let (lo, hi, step): (f64, f64, f64) =
            (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?, step.trim().parse().map_err(|_| bad())?);
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        // Rounded to 1e-9 so 0.1 + 2·0.1 prints as 0.3.
        (0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if rates.is_empty() || rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CliError::Usage(format!("noise rates must lie in [0, 1]: \"{text}\"")));
    }
    Ok(rates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_grids() {
        assert_eq!(parse_noise("0.1..0.5").unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(parse_noise("0.1..0.5:0.2").unwrap(), vec![0.1, 0.3, 0.5]);
        assert_eq!(parse_noise("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_noise("0.1, 0.3").unwrap(), vec![0.1, 0.3]);
        assert!(parse_noise("0.5..0.1").is_err());
        assert!(parse_noise("1.5").is_err());
        assert!(parse_noise("x").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg: FileConfig = toml::from_str(
            "seed = 3\n[matcher]\nname = \"reference\"\nmatch-on = \"posterior\"\n[simulate]\nk-grid = [1, 4]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.match_on(None), DecisionMode::Posterior);
        assert_eq!(cfg.simulate.k_grid, Some(vec![1, 4]));
        assert_eq!(cfg.seed(Some(9), None).unwrap(), 9);
        assert_eq!(cfg.seed(None, None).unwrap(), 3);
        assert!(toml::from_str::<FileConfig>("[protoem]\nbogus = 1\n").is_err());
    }
}
