use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A named set of mutually exclusive attribute labels, served by one softmax head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeGroup {
    pub name: String,
    pub labels: Vec<String>,
}

/// Position of one attribute inside the schema's grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AttributeRef {
    pub group: usize,
    pub class: usize,
}

/// The attribute set partitioned into mutually exclusive groups.
///
/// Attributes are numbered group by group, in label order, so the partition
/// holds by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeSchema {
    groups: Vec<AttributeGroup>,
    attributes: Vec<AttributeRef>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl AttributeSchema {
    pub fn new(groups: Vec<AttributeGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidArgument("schema needs at least one group".into()));
        }
        let mut seen_groups = HashSet::new();
        let mut attributes = Vec::new();
        for (g, group) in groups.iter().enumerate() {
            if !valid_name(&group.name) {
                return Err(Error::InvalidArgument(format!(
                    "invalid group name {:?}",
                    group.name
                )));
            }
            if !seen_groups.insert(group.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate group {:?}",
                    group.name
                )));
            }
            if group.labels.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "group {:?} needs at least two labels",
                    group.name
                )));
            }
            let mut seen_labels = HashSet::new();
            for (c, label) in group.labels.iter().enumerate() {
                if !valid_name(label) || !seen_labels.insert(label.as_str()) {
                    return Err(Error::InvalidArgument(format!(
                        "invalid or duplicate label {label:?} in group {:?}",
                        group.name
                    )));
                }
                attributes.push(AttributeRef { group: g, class: c });
            }
        }
        let schema = AttributeSchema { groups, attributes };
        debug_assert!(schema.is_partition());
        Ok(schema)
    }

    pub fn from_spec(groups: &[(&str, &[&str])]) -> Result<Self> {
        Self::new(
            groups
                .iter()
                .map(|(name, labels)| AttributeGroup {
                    name: name.to_string(),
                    labels: labels.iter().map(|l| l.to_string()).collect(),
                })
                .collect(),
        )
    }

    pub fn groups(&self) -> &[AttributeGroup] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute(&self, index: usize) -> AttributeRef {
        self.attributes[index]
    }

    pub fn attributes(&self) -> &[AttributeRef] {
        &self.attributes
    }

    pub fn attribute_index(&self, group: usize, class: usize) -> Option<usize> {
        self.attributes
            .iter()
            .position(|a| a.group == group && a.class == class)
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn class_index(&self, group: usize, label: &str) -> Option<usize> {
        self.groups[group].labels.iter().position(|l| l == label)
    }

    /// Bare label of an attribute, e.g. `smiling`.
    pub fn label(&self, index: usize) -> &str {
        let a = self.attributes[index];
        &self.groups[a.group].labels[a.class]
    }

    /// `group.label`, unique across the schema.
    pub fn qualified_name(&self, index: usize) -> String {
        let a = self.attributes[index];
        format!("{}.{}", self.groups[a.group].name, self.label(index))
    }

    /// Preferred display name: the bare label when it is unambiguous, the
    /// qualified name otherwise.
    pub fn display_name(&self, index: usize) -> String {
        let label = self.label(index);
        let clashes = (0..self.attribute_count())
            .filter(|&i| self.label(i) == label)
            .count();
        if clashes == 1 {
            label.to_string()
        } else {
            self.qualified_name(index)
        }
    }

    /// Resolves `label` or `group.label` to an attribute index.
    pub fn resolve(&self, name: &str) -> Result<usize> {
        let name = name.trim();
        let found = if let Some((group, label)) = name.split_once('.') {
            self.group_index(group)
                .and_then(|g| self.class_index(g, label).map(|c| (g, c)))
                .and_then(|(g, c)| self.attribute_index(g, c))
        } else {
            let matches: Vec<usize> = (0..self.attribute_count())
                .filter(|&i| self.label(i) == name)
                .collect();
            if matches.len() > 1 {
                let options: Vec<String> =
                    matches.iter().map(|&i| self.qualified_name(i)).collect();
                return Err(Error::InvalidArgument(format!(
                    "attribute {name:?} is ambiguous; use one of: {}",
                    options.join(", ")
                )));
            }
            matches.first().copied()
        };
        found.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown attribute {name:?}; valid attributes: {}",
                self.valid_names().join(", ")
            ))
        })
    }

    pub fn valid_names(&self) -> Vec<String> {
        (0..self.attribute_count())
            .map(|i| self.display_name(i))
            .collect()
    }

    fn is_partition(&self) -> bool {
        let mut counts = vec![0usize; self.attributes.len()];
        for (g, group) in self.groups.iter().enumerate() {
            for c in 0..group.labels.len() {
                if let Some(i) = self.attribute_index(g, c) {
                    counts[i] += 1;
                }
            }
        }
        counts.iter().all(|&n| n == 1)
    }

    /// One line per group: `name: label label ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let _ = writeln!(out, "{}: {}", g.name, g.labels.join(" "));
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, labels) = line.split_once(':').ok_or_else(|| {
                Error::format("schema", format!("line {}: expected `group: labels`", n + 1))
            })?;
            groups.push(AttributeGroup {
                name: name.trim().to_string(),
                labels: labels.split_whitespace().map(str::to_string).collect(),
            });
        }
        Self::new(groups).map_err(|e| Error::format("schema", e.to_string()))
    }
}

/// The six-group face schema used by the synthetic dataset.
pub fn default_schema() -> AttributeSchema {
    AttributeSchema::from_spec(&[
        ("hair_color", &["black", "blond", "brown"]),
        ("skin_tone", &["light", "dark"]),
        ("eyewear", &["none", "glasses"]),
        ("expression", &["neutral", "smiling"]),
        ("face_shape", &["round", "oval"]),
        ("accessory", &["none", "hat"]),
    ])
    .expect("built-in schema is valid")
}
