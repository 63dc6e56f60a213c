//! Class taxonomies with synonyms, thing/stuff flags and an optional
//! seen/unseen partition.
//!
//! The JSON file is either a bare array of class entries or an object
//! `{"classes": [...], "seen": [indices]}`:
//!
//! ```json
//! {"classes": [{"name": "signboard, sign", "synonyms": [], "is_thing": true}], "seen": [0]}
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    pub is_thing: bool,
}

impl ClassEntry {
    pub fn new(name: impl Into<String>, is_thing: bool) -> Self {
        ClassEntry {
            name: name.into(),
            synonyms: Vec::new(),
            is_thing,
        }
    }

    /// All normalized names of this class: the comma-separated parts of the
    /// name and of every listed synonym.
    pub fn normalized_synonyms(&self) -> BTreeSet<String> {
        std::iter::once(&self.name)
            .chain(&self.synonyms)
            .flat_map(|s| s.split(','))
            .map(normalize_name)
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    classes: Vec<ClassEntry>,
    seen: Option<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TaxonomyFile {
    Bare(Vec<ClassEntry>),
    WithSplit {
        classes: Vec<ClassEntry>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seen: Option<Vec<usize>>,
    },
}

impl Taxonomy {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for c in &classes {
            let n = normalize_name(&c.name);
            if n.is_empty() {
                return Err(Error::validation("taxonomy", "empty class name"));
            }
            if !names.insert(n.clone()) {
                return Err(Error::validation(
                    "taxonomy",
                    format!("duplicate class name {n:?} after normalization"),
                ));
            }
        }
        Ok(Taxonomy {
            classes,
            seen: None,
        })
    }

    /// Attaches a seen/unseen partition given the seen indices; every other
    /// index is unseen.
    pub fn with_seen(mut self, seen: &[usize]) -> Result<Self> {
        let mut flags = vec![false; self.classes.len()];
        for &i in seen {
            match flags.get_mut(i) {
                Some(f) if !*f => *f = true,
                Some(_) => {
                    return Err(Error::validation("taxonomy", format!("seen index {i} listed twice")))
                }
                None => {
                    return Err(Error::validation(
                        "taxonomy",
                        format!("seen index {i} out of range for {} classes", self.classes.len()),
                    ))
                }
            }
        }
        self.seen = Some(flags);
        Ok(self)
    }

    pub fn with_split(self, split: &Split) -> Result<Self> {
        if split.seen.len() != self.classes.len() {
            return Err(Error::validation(
                "taxonomy",
                format!("split covers {} classes, taxonomy has {}", split.seen.len(), self.classes.len()),
            ));
        }
        self.with_seen(&split.seen_indices())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn class(&self, index: u32) -> Option<&ClassEntry> {
        self.classes.get(index as usize)
    }

    pub fn is_thing(&self, index: u32) -> bool {
        self.class(index).is_some_and(|c| c.is_thing)
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Per-class seen flags, when a split is attached.
    pub fn seen(&self) -> Option<&[bool]> {
        self.seen.as_deref()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaxonomyFile = serde_json::from_str(text)
            .map_err(|e| Error::validation("taxonomy", format!("malformed JSON: {e}")))?;
        match file {
            TaxonomyFile::Bare(classes) => Taxonomy::new(classes),
            TaxonomyFile::WithSplit { classes, seen } => {
                let t = Taxonomy::new(classes)?;
                match seen {
                    Some(seen) => t.with_seen(&seen),
                    None => Ok(t),
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        let file = match &self.seen {
            None => TaxonomyFile::Bare(self.classes.clone()),
            Some(flags) => TaxonomyFile::WithSplit {
                classes: self.classes.clone(),
                seen: Some(flags.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()),
            },
        };
        serde_json::to_string_pretty(&file).expect("taxonomy serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Taxonomy::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::codec::write_file(path, self.to_json().as_bytes())
    }
}

/// Seen/unseen partition of a test taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub seen: Vec<bool>,
}

impl Split {
    pub fn seen_indices(&self) -> Vec<usize> {
        self.seen.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    }

    pub fn unseen_indices(&self) -> Vec<usize> {
        self.seen.iter().enumerate().filter(|(_, &s)| !s).map(|(i, _)| i).collect()
    }
}

/// Marks a test class seen when any of its normalized synonyms matches a
/// normalized synonym of some training class.
pub fn taxonomy_split(train: &Taxonomy, test: &Taxonomy) -> Split {
    let vocabulary: BTreeSet<String> = train
        .classes
        .iter()
        .flat_map(ClassEntry::normalized_synonyms)
        .collect();
    Split {
        seen: test
            .classes
            .iter()
            .map(|c| c.normalized_synonyms().iter().any(|s| vocabulary.contains(s)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax(names: &[&str]) -> Taxonomy {
        Taxonomy::new(names.iter().map(|n| ClassEntry::new(*n, true)).collect()).unwrap()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_name("  Traffic   LIGHT \t"), "traffic light");
        let c = ClassEntry {
            name: "Signboard, sign".into(),
            synonyms: vec!["Placard".into()],
            is_thing: true,
        };
        let syn: Vec<_> = c.normalized_synonyms().into_iter().collect();
        assert_eq!(syn, vec!["placard", "sign", "signboard"]);
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(Taxonomy::new(vec![ClassEntry::new("Cat", true), ClassEntry::new(" cat ", true)]).is_err());
    }

    #[test]
    fn split_examples() {
        let t = tax(&["person", "wall", "sky"]);
        assert!(taxonomy_split(&t, &t).seen.iter().all(|&s| s));

        let other = tax(&["lamp", "bed"]);
        assert!(taxonomy_split(&other, &t).seen.iter().all(|&s| !s));

        let train = tax(&["sign", "car"]);
        let test = tax(&["signboard, sign", "tree"]);
        assert_eq!(taxonomy_split(&train, &test).seen, vec![true, false]);
    }

    #[test]
    fn json_forms() {
        let bare = r#"[{"name": "a", "is_thing": true}, {"name": "b", "synonyms": ["bee"], "is_thing": false}]"#;
        let t = Taxonomy::from_json(bare).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.seen().is_none());
        assert_eq!(Taxonomy::from_json(&t.to_json()).unwrap(), t);

        let split = r#"{"classes": [{"name": "a", "is_thing": true}, {"name": "b", "is_thing": false}], "seen": [1]}"#;
        let t = Taxonomy::from_json(split).unwrap();
        assert_eq!(t.seen(), Some(&[false, true][..]));
        assert_eq!(Taxonomy::from_json(&t.to_json()).unwrap(), t);

        assert!(Taxonomy::from_json(r#"{"classes": [{"name": "a", "is_thing": true}], "seen": [3]}"#).is_err());
        assert!(Taxonomy::from_json("{").is_err());
    }
}
