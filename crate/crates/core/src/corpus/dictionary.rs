//! Closed wound-care vocabularies and canonicalization of surface labels.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

const DEFAULT_DICTIONARY: &str = include_str!("../../data/dictionary.json");

/// Vocabularies that are fixed by the task definition and may not be edited.
const FIXED_VOCABULARIES: [(Attribute, &[&str]); 4] = [
    (
        Attribute::WoundThickness,
        &["stage_I", "stage_II", "stage_III", "stage_IV", "unstageable", "not_applicable"],
    ),
    (Attribute::DrainageAmount, &["none", "scant", "minimal", "moderate", "copious"]),
    (Attribute::DrainageType, &["sanguineous", "serous", "serosanguinous", "purulent"]),
    (Attribute::Infection, &["infected", "not_infected", "unclear"]),
];

#[derive(Debug, thiserror::Error)]
pub enum DictionaryError {
    #[error("failed to read dictionary {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dictionary: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("vocabulary for `{0}` is missing or empty")]
    MissingVocabulary(Attribute),
    #[error("vocabulary for `{attribute}` must be exactly {expected:?}")]
    FixedVocabulary {
        attribute: Attribute,
        expected: Vec<String>,
    },
    #[error("label `{label}` of `{attribute}` is not canonical (empty or contains whitespace)")]
    NonCanonicalLabel { attribute: Attribute, label: String },
    #[error("labels `{first}` and `{second}` of `{attribute}` collide after folding")]
    FoldCollision {
        attribute: Attribute,
        first: String,
        second: String,
    },
    #[error("synonym `{surface}` of `{attribute}` targets `{target}`, which is not in the vocabulary")]
    DanglingSynonym {
        attribute: Attribute,
        surface: String,
        target: String,
    },
    #[error("synonym `{surface}` of `{attribute}` shadows the label `{label}`")]
    ShadowingSynonym {
        attribute: Attribute,
        surface: String,
        label: String,
    },
}

/// The structured wound attributes predicted alongside the free-text response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    AnatomicLocations,
    WoundType,
    WoundThickness,
    TissueColor,
    DrainageAmount,
    DrainageType,
    Infection,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::AnatomicLocations,
        Attribute::WoundType,
        Attribute::WoundThickness,
        Attribute::TissueColor,
        Attribute::DrainageAmount,
        Attribute::DrainageType,
        Attribute::Infection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::AnatomicLocations => "anatomic_locations",
            Attribute::WoundType => "wound_type",
            Attribute::WoundThickness => "wound_thickness",
            Attribute::TissueColor => "tissue_color",
            Attribute::DrainageAmount => "drainage_amount",
            Attribute::DrainageType => "drainage_type",
            Attribute::Infection => "infection",
        }
    }

    pub fn is_multi_valued(self) -> bool {
        self == Attribute::AnatomicLocations
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = DictionaryError;

    /// Accepts the canonical names plus the spellings used by the dataset release.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace([' ', '-'], "_");
        let attr = match key.as_str() {
            "anatomic_locations" | "anatomic_location" | "location" | "locations" => {
                Attribute::AnatomicLocations
            }
            "wound_type" | "type" => Attribute::WoundType,
            "wound_thickness" | "thickness" => Attribute::WoundThickness,
            "tissue_color" | "tissue_colour" | "color" => Attribute::TissueColor,
            "drainage_amount" => Attribute::DrainageAmount,
            "drainage_type" => Attribute::DrainageType,
            "infection" | "infection_status" => Attribute::Infection,
            _ => return Err(DictionaryError::UnknownAttribute(s.to_string())),
        };
        Ok(attr)
    }
}

/// Raw, uncanonicalized attribute values as they appear in gold files or model output.
pub type RawAttributes = BTreeMap<Attribute, Vec<String>>;

/// Canonical wound attributes. `None` (or an empty location set) marks an absent value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WoundAttributes {
    pub anatomic_locations: BTreeSet<String>,
    pub wound_type: Option<String>,
    pub wound_thickness: Option<String>,
    pub tissue_color: Option<String>,
    pub drainage_amount: Option<String>,
    pub drainage_type: Option<String>,
    pub infection: Option<String>,
}

impl WoundAttributes {
    pub fn single(&self, attr: Attribute) -> Option<&str> {
        match attr {
            Attribute::AnatomicLocations => None,
            Attribute::WoundType => self.wound_type.as_deref(),
            Attribute::WoundThickness => self.wound_thickness.as_deref(),
            Attribute::TissueColor => self.tissue_color.as_deref(),
            Attribute::DrainageAmount => self.drainage_amount.as_deref(),
            Attribute::DrainageType => self.drainage_type.as_deref(),
            Attribute::Infection => self.infection.as_deref(),
        }
    }

    fn single_mut(&mut self, attr: Attribute) -> Option<&mut Option<String>> {
        match attr {
            Attribute::AnatomicLocations => None,
            Attribute::WoundType => Some(&mut self.wound_type),
            Attribute::WoundThickness => Some(&mut self.wound_thickness),
            Attribute::TissueColor => Some(&mut self.tissue_color),
            Attribute::DrainageAmount => Some(&mut self.drainage_amount),
            Attribute::DrainageType => Some(&mut self.drainage_type),
            Attribute::Infection => Some(&mut self.infection),
        }
    }

    /// All present labels of an attribute, in canonical order.
    pub fn values(&self, attr: Attribute) -> Vec<&str> {
        match attr {
            Attribute::AnatomicLocations => {
                self.anatomic_locations.iter().map(String::as_str).collect()
            }
            other => self.single(other).into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        Attribute::ALL.iter().all(|a| self.values(*a).is_empty())
    }

    pub fn to_raw(&self) -> RawAttributes {
        Attribute::ALL
            .iter()
            .map(|a| (*a, self.values(*a).into_iter().map(str::to_string).collect()))
            .collect()
    }

    /// True when every present label belongs to the dictionary vocabulary.
    pub fn validate(&self, dict: &AttributeDictionary) -> bool {
        Attribute::ALL
            .iter()
            .all(|a| self.values(*a).iter().all(|v| dict.contains(*a, v)))
    }
}

/// What happened to one raw value during canonicalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Canonical(String),
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub attribute: Attribute,
    pub surface: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DictionaryFile {
    vocabularies: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    synonyms: BTreeMap<String, BTreeMap<String, String>>,
    version: String,
}

/// Closed vocabularies per attribute plus a synonym table.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDictionary {
    vocabularies: BTreeMap<Attribute, Vec<String>>,
    synonyms: BTreeMap<Attribute, BTreeMap<String, String>>,
    folded: BTreeMap<Attribute, BTreeMap<String, String>>,
    version: String,
}

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_surface(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Fold separators so `foot sole`, `foot_sole` and `Foot-Sole` compare equal.
fn fold(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_sep = false;
    for c in s.trim().chars() {
        if c.is_whitespace() || matches!(c, '_' | '-' | '/') {
            pending_sep = !out.is_empty();
        } else {
            if pending_sep {
                out.push('_');
                pending_sep = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

impl AttributeDictionary {
    /// The dictionary shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_DICTIONARY).expect("bundled dictionary is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DictionaryError> {
        let text = std::fs::read_to_string(path).map_err(|source| DictionaryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, DictionaryError> {
        let file: DictionaryFile = serde_json::from_str(text)?;
        let mut vocabularies = BTreeMap::new();
        for (name, labels) in file.vocabularies {
            vocabularies.insert(name.parse::<Attribute>()?, labels);
        }
        let mut synonyms = BTreeMap::new();
        for (name, table) in file.synonyms {
            let attr = name.parse::<Attribute>()?;
            let table = table
                .into_iter()
                .map(|(k, v)| (normalize_surface(&k), v))
                .collect();
            synonyms.insert(attr, table);
        }
        Self::new(vocabularies, synonyms, file.version)
    }

    pub fn new(
        vocabularies: BTreeMap<Attribute, Vec<String>>,
        synonyms: BTreeMap<Attribute, BTreeMap<String, String>>,
        version: String,
    ) -> Result<Self, DictionaryError> {
        for attr in Attribute::ALL {
            if vocabularies.get(&attr).is_none_or(|v| v.is_empty()) {
                return Err(DictionaryError::MissingVocabulary(attr));
            }
        }
        for (attr, expected) in FIXED_VOCABULARIES {
            let got: BTreeSet<&str> = vocabularies[&attr].iter().map(String::as_str).collect();
            let want: BTreeSet<&str> = expected.iter().copied().collect();
            if got != want || vocabularies[&attr].len() != expected.len() {
                return Err(DictionaryError::FixedVocabulary {
                    attribute: attr,
                    expected: expected.iter().map(|s| s.to_string()).collect(),
                });
            }
        }

        let mut folded = BTreeMap::new();
        for (attr, labels) in &vocabularies {
            let mut table: BTreeMap<String, String> = BTreeMap::new();
            for label in labels {
                if label.is_empty() || label.chars().any(char::is_whitespace) {
                    return Err(DictionaryError::NonCanonicalLabel {
                        attribute: *attr,
                        label: label.clone(),
                    });
                }
                if let Some(prev) = table.insert(fold(label), label.clone()) {
                    return Err(DictionaryError::FoldCollision {
                        attribute: *attr,
                        first: prev,
                        second: label.clone(),
                    });
                }
            }
            folded.insert(*attr, table);
        }

        for (attr, table) in &synonyms {
            let labels = &folded[attr];
            for (surface, target) in table {
                if !vocabularies[attr].contains(target) {
                    return Err(DictionaryError::DanglingSynonym {
                        attribute: *attr,
                        surface: surface.clone(),
                        target: target.clone(),
                    });
                }
                if let Some(label) = labels.get(&fold(surface)) {
                    if label != target {
                        return Err(DictionaryError::ShadowingSynonym {
                            attribute: *attr,
                            surface: surface.clone(),
                            label: label.clone(),
                        });
                    }
                }
            }
        }

        Ok(Self {
            vocabularies,
            synonyms,
            folded,
            version,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn vocabulary(&self, attr: Attribute) -> &[String] {
        &self.vocabularies[&attr]
    }

    pub fn contains(&self, attr: Attribute, label: &str) -> bool {
        self.vocabularies[&attr].iter().any(|l| l == label)
    }

    /// Exact-or-folded membership, with no synonym lookup. Used for OOV accounting.
    pub fn matches_vocabulary(&self, attr: Attribute, surface: &str) -> Option<&str> {
        self.folded[&attr].get(&fold(surface)).map(String::as_str)
    }

    /// Map a surface form onto a canonical label, if any.
    pub fn resolve(&self, attr: Attribute, surface: &str) -> Option<&str> {
        let norm = normalize_surface(surface);
        if let Some(target) = self.synonyms.get(&attr).and_then(|t| t.get(&norm)) {
            return Some(target.as_str());
        }
        self.matches_vocabulary(attr, &norm)
    }

    /// One line per attribute, used to show the allowed labels in prompts.
    pub fn render_labels(&self) -> String {
        Attribute::ALL
            .iter()
            .map(|a| format!("- {}: {}", a, self.vocabularies[a].join(", ")))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_json(&self) -> String {
        let file = DictionaryFile {
            vocabularies: self
                .vocabularies
                .iter()
                .map(|(a, v)| (a.name().to_string(), v.clone()))
                .collect(),
            synonyms: self
                .synonyms
                .iter()
                .map(|(a, t)| (a.name().to_string(), t.clone()))
                .collect(),
            version: self.version.clone(),
        };
        serde_json::to_string_pretty(&file).expect("dictionary serializes")
    }
}

/// Canonicalize raw attribute values against the dictionary.
///
/// Values are trimmed and lowercased, mapped through the synonym table and
/// then checked for membership. Anything that does not resolve is dropped and
/// reported; a second value for a single-valued attribute is dropped as well.
/// Every raw value that is not returned verbatim yields one correction.
pub fn canonicalize_attributes(
    raw: &RawAttributes,
    dict: &AttributeDictionary,
) -> (WoundAttributes, Vec<Correction>) {
    let mut attrs = WoundAttributes::default();
    let mut corrections = Vec::new();

    for (&attr, values) in raw {
        for surface in values {
            if surface.trim().is_empty() {
                continue;
            }
            let resolved = dict.resolve(attr, surface).map(str::to_string);
            let accepted = match (&resolved, attr.is_multi_valued()) {
                (None, _) => false,
                (Some(label), true) => {
                    attrs.anatomic_locations.insert(label.clone());
                    true
                }
                (Some(label), false) => {
                    let slot = attrs.single_mut(attr).expect("single-valued attribute");
                    match slot {
                        None => {
                            *slot = Some(label.clone());
                            true
                        }
                        Some(existing) => existing == label,
                    }
                }
            };
            match (accepted, resolved) {
                (true, Some(label)) if &label == surface => {}
                (true, Some(label)) => corrections.push(Correction {
                    attribute: attr,
                    surface: surface.clone(),
                    outcome: Outcome::Canonical(label),
                }),
                _ => corrections.push(Correction {
                    attribute: attr,
                    surface: surface.clone(),
                    outcome: Outcome::Discarded,
                }),
            }
        }
    }

    (attrs, corrections)
}

/// Read a JSON metadata object into raw attribute values.
///
/// Strings and arrays of strings are accepted; `null` is absent. Unknown keys
/// and non-textual values are returned separately as `(key, value)` pairs.
pub fn raw_attributes_from_json(value: &Value) -> (RawAttributes, Vec<(String, String)>) {
    let mut raw = RawAttributes::new();
    let mut rejected = Vec::new();
    let Some(obj) = value.as_object() else {
        rejected.push(("metadata".to_string(), value.to_string()));
        return (raw, rejected);
    };
    for (key, v) in obj {
        let Ok(attr) = key.parse::<Attribute>() else {
            rejected.push((key.clone(), v.to_string()));
            continue;
        };
        let slot = raw.entry(attr).or_default();
        match v {
            Value::Null => {}
            Value::String(s) => slot.push(s.clone()),
            Value::Array(items) => {
                for item in items {
                    match item {
                        Value::String(s) => slot.push(s.clone()),
                        Value::Null => {}
                        other => rejected.push((attr.name().to_string(), other.to_string())),
                    }
                }
            }
            other => rejected.push((attr.name().to_string(), other.to_string())),
        }
    }
    (raw, rejected)
}
