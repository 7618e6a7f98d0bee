//! Flat `key=value` run configuration.
//!
//! Values are resolved in order: built-in defaults, the `--config` file,
//! `JNT_SEED` (seed only), `--set key=value` overrides, then dedicated flags.
//! Every value is type-checked when it is read, and unknown keys are
//! rejected wherever they appear.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

#[derive(Clone, Copy, Debug)]
pub enum Kind {
    Float,
    Count,
    Seed,
    Choice(&'static [&'static str]),
    FloatList,
    CountList,
}

#[derive(Clone, Copy, Debug)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
}

const fn key(name: &'static str, kind: Kind) -> Key {
    Key { name, kind }
}

pub const MODES: &[&str] = &["n2v", "supervised", "unsupervised", "pretrain-seg"];

pub const GEN_DATA_KEYS: &[Key] = &[
    key("count", Kind::Count),
    key("size", Kind::Count),
    key("style", Kind::Choice(&["soma", "plaque"])),
    key("sigma", Kind::FloatList),
    key("seed", Kind::Seed),
];

pub const TRAIN_KEYS: &[Key] = &[
    key("mode", Kind::Choice(MODES)),
    key("lr", Kind::Float),
    key("steps", Kind::Count),
    key("mask_count", Kind::Count),
    key("w1", Kind::Float),
    key("w2", Kind::Float),
    key("seed", Kind::Seed),
    key("weak_fraction", Kind::Float),
    key("log_every", Kind::Count),
    key("scales", Kind::Count),
    key("base_width", Kind::Count),
    key("seg_loss", Kind::Choice(&["bce", "mse"])),
];

pub const MASK_STUDY_KEYS: &[Key] = &[
    key("mask_counts", Kind::CountList),
    key("replicates", Kind::Count),
    key("steps", Kind::Count),
    key("lr", Kind::Float),
    key("seed", Kind::Seed),
    key("scales", Kind::Count),
    key("base_width", Kind::Count),
    key("workers", Kind::Count),
];

fn check(kind: Kind, value: &str) -> Result<(), String> {
    let float = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(|_| ())
            .ok_or_else(|| format!("`{s}` is not a finite number"))
    };
    let count = |s: &str| {
        s.parse::<usize>()
            .map(|_| ())
            .map_err(|_| format!("`{s}` is not a non-negative integer"))
    };
    let list = |f: &dyn Fn(&str) -> Result<(), String>| {
        if value.is_empty() {
            return Err("empty list".to_string());
        }
        value.split(',').try_for_each(|s| f(s.trim()))
    };
    match kind {
        Kind::Float => float(value),
        Kind::Count => count(value),
        Kind::Seed => value
            .parse::<u64>()
            .map(|_| ())
            .map_err(|_| format!("`{value}` is not a 64-bit unsigned seed")),
        Kind::Choice(options) => {
            if options.contains(&value) {
                Ok(())
            } else {
                Err(format!("`{value}` is not one of {}", options.join(", ")))
            }
        }
        Kind::FloatList => list(&float),
        Kind::CountList => list(&count),
    }
}

/// Resolved configuration for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Explicit values gathered before defaults are applied.
pub struct Overrides<'a> {
    schema: &'a [Key],
    values: BTreeMap<String, String>,
}

impl<'a> Overrides<'a> {
    pub fn new(schema: &'a [Key]) -> Self {
        Overrides {
            schema,
            values: BTreeMap::new(),
        }
    }

    fn set(&mut self, name: &str, value: &str, origin: &str) -> Result<(), CliError> {
        let key = self.schema.iter().find(|k| k.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.schema.iter().map(|k| k.name).collect();
            CliError::Usage(format!(
                "{origin}: unknown key `{name}` (known: {})",
                known.join(", ")
            ))
        })?;
        let value = value.trim();
        check(key.kind, value).map_err(|e| CliError::Usage(format!("{origin}: {name}: {e}")))?;
        self.values.insert(name.to_string(), value.to_string());
        Ok(())
    }

    pub fn read_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let origin = format!("{}:{}", path.display(), n + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}: expected key=value, got `{line}`"))
            })?;
            let k = k.trim();
            if seen.contains(&k.to_string()) {
                return Err(CliError::Usage(format!("{origin}: duplicate key `{k}`")));
            }
            seen.push(k.to_string());
            self.set(k, v, &origin)?;
        }
        Ok(())
    }

    pub fn apply_sets(&mut self, sets: &[String]) -> Result<(), CliError> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{s}`")))?;
            self.set(k.trim(), v, "--set")?;
        }
        Ok(())
    }

    pub fn apply_flag(&mut self, name: &str, value: Option<String>) -> Result<(), CliError> {
        match value {
            Some(v) => self.set(name, &v, &format!("--{}", name.replace('_', "-"))),
            None => Ok(()),
        }
    }

    /// Falls back to the `JNT_SEED` environment variable when no seed was given.
    pub fn seed_from_env(&mut self) -> Result<(), CliError> {
        if self.values.contains_key("seed") {
            return Ok(());
        }
        match std::env::var("JNT_SEED") {
            Ok(v) => self.set("seed", &v, "JNT_SEED"),
            Err(_) => Ok(()),
        }
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    /// Fills every key not given explicitly from `defaults`, which must
    /// cover the whole schema.
    pub fn finish(mut self, defaults: &[(&str, String)]) -> Result<RunConfig, CliError> {
        for (k, v) in defaults {
            if !self.values.contains_key(*k) {
                self.set(k, v, "default")?;
            }
        }
        if let Some(missing) = self
            .schema
            .iter()
            .find(|k| !self.values.contains_key(k.name))
        {
            return Err(CliError::Usage(format!("no value for `{}`", missing.name)));
        }
        Ok(RunConfig {
            values: self.values,
        })
    }
}

impl RunConfig {
    fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("config key `{name}` not in schema"))
    }

    pub fn str(&self, name: &str) -> &str {
        self.raw(name)
    }

    pub fn f64(&self, name: &str) -> f64 {
        self.raw(name).parse().expect("checked at parse time")
    }

    pub fn usize(&self, name: &str) -> usize {
        self.raw(name).parse().expect("checked at parse time")
    }

    pub fn u64(&self, name: &str) -> u64 {
        self.raw(name).parse().expect("checked at parse time")
    }

    pub fn f64_list(&self, name: &str) -> Vec<f64> {
        self.raw(name)
            .split(',')
            .map(|s| s.trim().parse().expect("checked at parse time"))
            .collect()
    }

    pub fn usize_list(&self, name: &str) -> Vec<usize> {
        self.raw(name)
            .split(',')
            .map(|s| s.trim().parse().expect("checked at parse time"))
            .collect()
    }

    /// The `effective_config.txt` text: every resolved key, sorted.
    pub fn render(&self, command: &str) -> String {
        let mut out = format!("# effective configuration for `jnt {command}`\n");
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> Vec<(&'static str, String)> {
        vec![
            ("count", "4".into()),
            ("size", "32".into()),
            ("style", "soma".into()),
            ("sigma", "0.2".into()),
            ("seed", "0".into()),
        ]
    }

    #[test]
    fn file_then_set_then_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(
            &path,
            "# comment\ncount = 7\nsize=16 # trailing\n\nstyle=plaque\n",
        )
        .unwrap();
        let mut o = Overrides::new(GEN_DATA_KEYS);
        o.read_file(&path).unwrap();
        o.apply_sets(&["count=9".into()]).unwrap();
        o.apply_flag("size", Some("64".into())).unwrap();
        let c = o.finish(&defaults()).unwrap();
        assert_eq!(c.usize("count"), 9);
        assert_eq!(c.usize("size"), 64);
        assert_eq!(c.str("style"), "plaque");
        assert_eq!(c.f64_list("sigma"), vec![0.2]);
    }

    #[test]
    fn render_round_trips() {
        let mut o = Overrides::new(GEN_DATA_KEYS);
        o.apply_sets(&["sigma=0.1,0.3".into()]).unwrap();
        let c = o.finish(&defaults()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("effective_config.txt");
        std::fs::write(&path, c.render("gen-data")).unwrap();
        let mut again = Overrides::new(GEN_DATA_KEYS);
        again.read_file(&path).unwrap();
        assert_eq!(again.finish(&[]).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_duplicate_and_ill_typed() {
        let mut o = Overrides::new(GEN_DATA_KEYS);
        assert!(o.apply_sets(&["colour=red".into()]).is_err());
        assert!(o.apply_sets(&["count=-1".into()]).is_err());
        assert!(o.apply_sets(&["sigma=0.1,x".into()]).is_err());
        assert!(o.apply_sets(&["style=neuron".into()]).is_err());
        assert!(o.apply_sets(&["count".into()]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "count=1\ncount=2\n").unwrap();
        assert!(Overrides::new(GEN_DATA_KEYS).read_file(&path).is_err());
    }
}
