use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitSet {
    Train,
    Test,
}

impl fmt::Display for SplitSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitSet::Train => "TRAIN",
            SplitSet::Test => "TEST",
        })
    }
}

/// Train/test assignment per essay id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSpec {
    assignment: BTreeMap<String, SplitSet>,
}

impl SplitSpec {
    pub fn get(&self, essay_id: &str) -> Option<SplitSet> {
        self.assignment.get(essay_id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn ids(&self, set: SplitSet) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, &s)| s == set)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, set: SplitSet) -> usize {
        self.ids(set).count()
    }

    /// Check that the split covers exactly the essays in `known`.
    pub fn validate<'a>(&self, known: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let known: std::collections::BTreeSet<&str> = known.into_iter().collect();
        let unknown: Vec<&str> = self
            .assignment
            .keys()
            .map(String::as_str)
            .filter(|id| !known.contains(id))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Split(format!("unknown essay ids in split: {}", unknown.join(", "))));
        }
        let missing: Vec<&str> = known
            .iter()
            .copied()
            .filter(|id| !self.assignment.contains_key(*id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Split(format!("essays missing from split: {}", missing.join(", "))));
        }
        Ok(())
    }
}

/// Parse a `;`-separated split file with header `ID;SET` (fields may be
/// quoted). Set names are case-insensitive.
pub fn load_split(csv_content: &str) -> Result<SplitSpec> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(csv_content.as_bytes());
    let mut assignment = BTreeMap::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 1;
        let record = record.map_err(|e| Error::Split(format!("line {line}: {e}")))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Split(format!(
                "line {line}: expected two fields, found {}",
                record.len()
            )));
        }
        let (id, set) = (&record[0], &record[1]);
        if line == 1 && id.eq_ignore_ascii_case("id") && set.eq_ignore_ascii_case("set") {
            continue;
        }
        let set = match set.to_ascii_uppercase().as_str() {
            "TRAIN" => SplitSet::Train,
            "TEST" => SplitSet::Test,
            other => {
                return Err(Error::Split(format!("line {line}: unknown set `{other}`")));
            }
        };
        if id.is_empty() {
            return Err(Error::Split(format!("line {line}: empty essay id")));
        }
        if assignment.insert(id.to_string(), set).is_some() {
            return Err(Error::Split(format!("line {line}: duplicate essay id `{id}`")));
        }
    }
    if assignment.is_empty() {
        return Err(Error::Split("split file assigns no essays".into()));
    }
    Ok(SplitSpec { assignment })
}
