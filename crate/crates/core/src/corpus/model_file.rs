use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const MAGIC: &str = "session-parse-model";
const VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    MentionCrf,
    TyperCrf,
    RelexEre,
    RelexTre,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MentionCrf => "mention-crf",
            ModelKind::TyperCrf => "typer-crf",
            ModelKind::RelexEre => "relex-ere",
            ModelKind::RelexTre => "relex-tre",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mention-crf" => ModelKind::MentionCrf,
            "typer-crf" => ModelKind::TyperCrf,
            "relex-ere" => ModelKind::RelexEre,
            "relex-tre" => ModelKind::RelexTre,
            _ => return Err(Error::Version(format!("{MAGIC} {VERSION} {s}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEntry {
    pub feature: String,
    pub label: String,
    pub weight: f64,
}

impl ModelEntry {
    pub fn new(feature: impl Into<String>, label: impl Into<String>, weight: f64) -> Self {
        ModelEntry {
            feature: feature.into(),
            label: label.into(),
            weight,
        }
    }
}

/// A `feature \t label \t weight` table under a versioned header.
///
/// Weights are written with Rust's shortest round-trip float formatting, so
/// reading a file back reproduces every bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub entries: Vec<ModelEntry>,
}

impl ModelFile {
    pub fn new(kind: ModelKind) -> Self {
        ModelFile {
            kind,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, feature: impl Into<String>, label: impl Into<String>, weight: f64) {
        self.entries.push(ModelEntry::new(feature, label, weight));
    }

    /// Serializes with entries sorted by `(feature, label)`.
    pub fn to_text(&self) -> Result<String> {
        let mut entries: Vec<&ModelEntry> = self.entries.iter().collect();
        entries.sort_by(|a, b| (&a.feature, &a.label).cmp(&(&b.feature, &b.label)));
        let mut out = format!("{MAGIC} {VERSION} {}\n", self.kind);
        for e in entries {
            if !e.weight.is_finite() {
                return Err(Error::NonFinite(format!(
                    "weight for ({}, {})",
                    e.feature, e.label
                )));
            }
            if [&e.feature, &e.label]
                .iter()
                .any(|s| s.is_empty() || s.contains(['\t', '\n', '\r']))
            {
                return Err(Error::invalid(format!(
                    "model key ({:?}, {:?}) is empty or contains a tab/newline",
                    e.feature, e.label
                )));
            }
            out.push_str(&e.feature);
            out.push('\t');
            out.push_str(&e.label);
            out.push('\t');
            out.push_str(&e.weight.to_string());
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 3 || parts[0] != MAGIC || parts[1] != VERSION {
            return Err(Error::Version(header.to_owned()));
        }
        let kind: ModelKind = parts[2].parse()?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(i + 2, "expected feature, label, weight"));
            }
            let weight: f64 = cols[2]
                .parse()
                .map_err(|_| Error::parse(i + 2, format!("bad weight {:?}", cols[2])))?;
            if !weight.is_finite() {
                return Err(Error::NonFinite(format!("line {}", i + 2)));
            }
            entries.push(ModelEntry::new(cols[0], cols[1], weight));
        }
        Ok(ModelFile { kind, entries })
    }

    pub fn kind_must_be(&self, kind: ModelKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "expected a {kind} model, found {}",
                self.kind
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    #[test]
    fn single_weight_round_trip() {
        let mut m = ModelFile::new(ModelKind::MentionCrf);
        m.push("w=gatsby", "B-ENT", 1.25);
        let back = ModelFile::parse(&m.to_text().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            m.to_text().unwrap(),
            "session-parse-model v1 mention-crf\nw=gatsby\tB-ENT\t1.25\n"
        );
    }

    #[test]
    fn unknown_version_rejected() {
        assert!(matches!(
            ModelFile::parse("session-parse-model v2 mention-crf\n"),
            Err(Error::Version(_))
        ));
        assert!(matches!(
            ModelFile::parse("session-parse-model v1 hmm\n"),
            Err(Error::Version(_))
        ));
        assert!(matches!(ModelFile::parse(""), Err(Error::Version(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = ModelFile::new(ModelKind::TyperCrf);
        m.push("f", "film", f64::NAN);
        assert!(matches!(m.to_text(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn thousand_random_weights_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = ModelFile::new(ModelKind::RelexEre);
        for i in 0..1000 {
            let scale = 10f64.powi(rng.random_range(-12..12));
            let w = (rng.random::<f64>() - 0.5) * scale;
            m.push(format!("f{}", rng.random_range(0..100_000)), format!("l{}", i % 7), w);
        }
        let text = m.to_text().unwrap();
        let back = ModelFile::parse(&text).unwrap();
        let key = |f: &ModelFile| -> BTreeMap<(String, String), Vec<u64>> {
            let mut map: BTreeMap<_, Vec<u64>> = BTreeMap::new();
            for e in &f.entries {
                map.entry((e.feature.clone(), e.label.clone()))
                    .or_default()
                    .push(e.weight.to_bits());
            }
            map.values_mut().for_each(|v| v.sort_unstable());
            map
        };
        assert_eq!(key(&back), key(&m));
        // sorted on disk
        let keys: Vec<(String, String)> = back
            .entries
            .iter()
            .map(|e| (e.feature.clone(), e.label.clone()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
