//! `key = value` settings shared by `--config FILE` and `--param`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mlmc::{MlmcError, Result, Scheme};

/// Settings collected from a config file or from flags. `None`/empty means unset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub model: Option<String>,
    pub payoff: Option<String>,
    pub schemes: Vec<Scheme>,
    pub ito_linearize: Option<bool>,
    pub refinements: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub samples: Option<u64>,
    pub max_level: Option<u32>,
    pub levels: Option<(u32, u32)>,
    pub out: Option<PathBuf>,
    /// Model and payoff parameters.
    pub params: BTreeMap<String, f64>,
}

impl Settings {
    /// `other` wins wherever it is set.
    pub fn overridden_by(mut self, other: Settings) -> Settings {
        fn pick<T>(a: &mut Option<T>, b: Option<T>) {
            if b.is_some() {
                *a = b;
            }
        }
        fn pick_list<T>(a: &mut Vec<T>, b: Vec<T>) {
            if !b.is_empty() {
                *a = b;
            }
        }
        pick(&mut self.model, other.model);
        pick(&mut self.payoff, other.payoff);
        pick_list(&mut self.schemes, other.schemes);
        pick(&mut self.ito_linearize, other.ito_linearize);
        pick_list(&mut self.refinements, other.refinements);
        pick_list(&mut self.epsilons, other.epsilons);
        pick(&mut self.seed, other.seed);
        pick(&mut self.threads, other.threads);
        pick(&mut self.samples, other.samples);
        pick(&mut self.max_level, other.max_level);
        pick(&mut self.levels, other.levels);
        pick(&mut self.out, other.out);
        self.params.extend(other.params);
        self
    }

    /// Applies one `key = value` pair. Unrecognized keys are numeric model parameters.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let value = value.trim();
        match key.replace('-', "_").as_str() {
            "model" => self.model = Some(value.to_string()),
            "payoff" => self.payoff = Some(value.to_string()),
            "scheme" | "schemes" => self.schemes = list(value)?,
            "ito_linearize" => self.ito_linearize = Some(parse(key, value)?),
            "refine" | "m" => self.refinements = list(value)?,
            "eps" | "epsilon" => self.epsilons = list(value)?,
            "seed" => self.seed = Some(parse(key, value)?),
            "threads" => self.threads = Some(parse(key, value)?),
            "samples" => self.samples = Some(parse(key, value)?),
            "max_level" => self.max_level = Some(parse(key, value)?),
            "levels" => self.levels = Some(parse_levels(value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => {
                self.params.insert(key.to_string(), parse(key, value)?);
            }
        }
        Ok(())
    }

    /// Parses a config file: one `key = value` per line, `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Settings> {
        let mut settings = Settings::default();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = split_pair(line)
                .map_err(|e| MlmcError::Config(format!("line {}: {e}", number + 1)))?;
            settings.set(key, value)?;
        }
        Ok(settings)
    }
}

pub fn split_pair(pair: &str) -> Result<(&str, &str)> {
    pair.split_once('=')
        .filter(|(k, _)| !k.trim().is_empty())
        .ok_or_else(|| MlmcError::Config(format!("expected key=value, got `{pair}`")))
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| MlmcError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn list<V: std::str::FromStr>(value: &str) -> Result<Vec<V>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| MlmcError::Config(format!("invalid list entry `{s}`"))))
        .collect()
}

/// `A-B` or `A..B`, inclusive.
pub fn parse_levels(value: &str) -> Result<(u32, u32)> {
    let (a, b) = value
        .split_once("..")
        .or_else(|| value.split_once('-'))
        .ok_or_else(|| MlmcError::Config(format!("levels must look like 2-6, got `{value}`")))?;
    let lo: u32 = parse("levels", a.trim())?;
    let hi: u32 = parse("levels", b.trim())?;
    if lo > hi {
        return Err(MlmcError::Config(format!("empty level range `{value}`")));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_grammar() {
        let text = "# sweep\nmodel = heston\nscheme = euler, antithetic\neps=0.01,0.005\n\neta = 0.3 # vol of asset\nlevels = 2-5\nito-linearize = true\n";
        let s = Settings::from_text(text).unwrap();
        assert_eq!(s.model.as_deref(), Some("heston"));
        assert_eq!(s.schemes, vec![Scheme::Euler, Scheme::Antithetic]);
        assert_eq!(s.epsilons, vec![0.01, 0.005]);
        assert_eq!(s.params["eta"], 0.3);
        assert_eq!(s.levels, Some((2, 5)));
        assert_eq!(s.ito_linearize, Some(true));
        assert!(Settings::from_text("just words").is_err());
        assert!(Settings::from_text("eta = fast").is_err());
        assert!(Settings::from_text("scheme = rk4").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = Settings::from_text("seed = 3\neps = 0.1\neta = 0.3\nxi = 2").unwrap();
        let mut flags = Settings::default();
        flags.set("eps", "0.02").unwrap();
        flags.set("eta", "0.4").unwrap();
        let s = file.overridden_by(flags);
        assert_eq!(s.seed, Some(3));
        assert_eq!(s.epsilons, vec![0.02]);
        assert_eq!(s.params["eta"], 0.4);
        assert_eq!(s.params["xi"], 2.0);
    }
}
