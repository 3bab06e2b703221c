//! Line-oriented run configuration: `key = value` pairs under `[section]`
//! headers, `#` comments. Unknown sections or keys are rejected outright —
//! a typo in an experiment config should fail the run, not silently fall
//! back to a default. Every accepted pair is kept verbatim so commands can
//! echo it into the manifests of the artifacts they produce.

use std::fmt;
use std::path::Path;

use evitraj::model::Selection;

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Default)]
pub struct Config {
    pub data_scale: Option<f64>,
    pub data_speed_threshold: Option<f64>,
    pub data_leak_fraction: Option<f64>,
    pub anchors_classes: Option<usize>,
    pub train_epochs: Option<usize>,
    pub train_batch_size: Option<usize>,
    pub train_lr: Option<f64>,
    pub train_weight_decay: Option<f64>,
    pub train_selection: Option<Selection>,
    /// Accepted pairs as written, `("section.key", "value")`.
    raw: Vec<(String, String)>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ConfigError { line, message };
            let body = raw_line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section {body:?}")))?
                    .trim();
                if !matches!(name, "data" | "anchors" | "train") {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {body:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(err(format!("key {key:?} before any [section]")));
            }
            cfg.assign(&section, key, value)
                .map_err(|message| err(message))?;
            cfg.raw.push((format!("{section}.{key}"), value.to_string()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Config::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn assign(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e| format!("{key} = {value:?}: {e}"))
        }
        match (section, key) {
            ("data", "scale") => self.data_scale = Some(num(key, value)?),
            ("data", "speed_threshold") => self.data_speed_threshold = Some(num(key, value)?),
            ("data", "leak_fraction") => self.data_leak_fraction = Some(num(key, value)?),
            ("anchors", "classes") => self.anchors_classes = Some(num(key, value)?),
            ("train", "epochs") => self.train_epochs = Some(num(key, value)?),
            ("train", "batch_size") => self.train_batch_size = Some(num(key, value)?),
            ("train", "lr") => self.train_lr = Some(num(key, value)?),
            ("train", "weight_decay") => self.train_weight_decay = Some(num(key, value)?),
            ("train", "selection") => {
                self.train_selection = Some(match value {
                    "final" => Selection::FinalEpoch,
                    "best_val" => Selection::BestVal,
                    other => {
                        return Err(format!(
                            "selection = {other:?}: expected final or best_val"
                        ))
                    }
                })
            }
            _ => return Err(format!("unknown key {key:?} in section [{section}]")),
        }
        Ok(())
    }

    /// Manifest echo: each accepted pair under a `config.` prefix.
    pub fn echo(&self) -> impl Iterator<Item = (String, &str)> {
        self.raw
            .iter()
            .map(|(k, v)| (format!("config.{k}"), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_overrides() {
        let text = "\
# run settings
[data]
scale = 0.05      # tiny
speed_threshold = 9.5

[train]
epochs = 7
selection = final
";
        let c = Config::parse(text).unwrap();
        assert_eq!(c.data_scale, Some(0.05));
        assert_eq!(c.data_speed_threshold, Some(9.5));
        assert_eq!(c.train_epochs, Some(7));
        assert_eq!(c.train_selection, Some(Selection::FinalEpoch));
        assert_eq!(c.data_leak_fraction, None);
        let echo: Vec<(String, &str)> = c.echo().collect();
        assert!(echo.contains(&("config.data.scale".to_string(), "0.05")));
        assert_eq!(echo.len(), 4);
    }

    #[test]
    fn rejects_unknown_and_malformed_input() {
        assert!(Config::parse("[nope]\n").is_err());
        assert!(Config::parse("[train]\nlearning_rate = 3\n").is_err());
        assert!(Config::parse("scale = 1\n").is_err(), "key before section");
        assert!(Config::parse("[train]\nepochs\n").is_err());
        assert!(Config::parse("[train]\nepochs = many\n").is_err());
        assert!(Config::parse("[train]\nselection = sometimes\n").is_err());
        let e = Config::parse("[data]\nscale = 0.1\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, 3);
    }
}
