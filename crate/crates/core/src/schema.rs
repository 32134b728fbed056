//! Class catalogue: names, raw annotation values, palette colours, loss
//! weights and safety tiers.
//!
//! The built-in schema is the ten-class desert terrain catalogue. Any other
//! catalogue can be supplied as a JSON document of the form
//!
//! ```json
//! { "classes": [ {"index": 0, "name": "Trees", "raw_value": 100,
//!                 "color": [34, 139, 34], "weight": 1.0, "tier": "Obstacle"} ],
//!   "ignore_value": 255 }
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Label-map value reserved for ignored pixels.
pub const IGNORE_INDEX: u8 = 255;

/// Largest class count representable alongside [`IGNORE_INDEX`].
pub const MAX_CLASSES: usize = 255;

/// Navigation safety tier of a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tier {
    Safe,
    Caution,
    Obstacle,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tier::Safe => "Safe",
            Tier::Caution => "Caution",
            Tier::Obstacle => "Obstacle",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub index: u8,
    pub name: String,
    /// Value stored for this class in grayscale annotation PNGs.
    pub raw_value: u8,
    pub color: [u8; 3],
    /// Loss weight, strictly positive.
    pub weight: f64,
    pub tier: Tier,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SchemaError {
    #[error("entry {entry}: missing field `{field}`")]
    MissingField { entry: String, field: &'static str },
    #[error("entry {entry}: field `{field}` is invalid: {reason}")]
    InvalidField {
        entry: String,
        field: &'static str,
        reason: String,
    },
    #[error("entry {entry}: raw value {raw_value} already used by {previous}")]
    DuplicateRawValue {
        entry: String,
        raw_value: u8,
        previous: String,
    },
    #[error("entry {entry}: index {index} already used by {previous}")]
    DuplicateIndex {
        entry: String,
        index: u8,
        previous: String,
    },
    #[error("entry {entry}: weight {weight} must be positive")]
    NonPositiveWeight { entry: String, weight: f64 },
    #[error("class indices must be contiguous from 0; index {missing} is missing")]
    NonContiguousIndex { missing: usize },
    #[error("schema must define between 1 and {MAX_CLASSES} classes, got {0}")]
    ClassCount(usize),
    #[error("ignore_value {0} collides with a class raw value")]
    IgnoreCollision(u8),
    #[error("malformed schema document: {0}")]
    Parse(String),
    #[error("cannot read schema: {0}")]
    Io(String),
}

/// Immutable, validated class catalogue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSchema {
    classes: Vec<ClassDef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ignore_value: Option<u8>,
    #[serde(skip)]
    raw_lookup: RawLookup,
}

#[derive(Clone, PartialEq)]
struct RawLookup([Option<u8>; 256]);

impl fmt::Debug for RawLookup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RawLookup")
    }
}

impl Default for RawLookup {
    fn default() -> Self {
        RawLookup([None; 256])
    }
}

// (name, raw value, colour, weight, tier) in index order.
const DEFAULT_CLASSES: [(&str, u8, [u8; 3], f64, Tier); 10] = [
    ("Trees", 100, [34, 139, 34], 1.0, Tier::Obstacle),
    ("Lush Bushes", 110, [0, 200, 0], 3.5, Tier::Caution),
    ("Dry Grass", 120, [210, 180, 140], 1.2, Tier::Safe),
    ("Dry Bushes", 130, [139, 90, 43], 1.3, Tier::Obstacle),
    ("Ground Clutter", 140, [128, 128, 0], 2.5, Tier::Caution),
    ("Flowers", 150, [255, 105, 180], 4.5, Tier::Caution),
    ("Logs", 160, [139, 69, 19], 5.0, Tier::Obstacle),
    ("Rocks", 170, [128, 128, 128], 2.0, Tier::Obstacle),
    ("Landscape", 180, [244, 164, 96], 0.6, Tier::Safe),
    ("Sky", 190, [0, 0, 255], 0.4, Tier::Safe),
];

impl Default for ClassSchema {
    fn default() -> Self {
        let classes = DEFAULT_CLASSES
            .iter()
            .enumerate()
            .map(|(i, &(name, raw_value, color, weight, tier))| ClassDef {
                index: i as u8,
                name: name.to_string(),
                raw_value,
                color,
                weight,
                tier,
            })
            .collect();
        ClassSchema::new(classes, None).expect("built-in schema is valid")
    }
}

#[derive(Deserialize)]
struct RawDocument {
    classes: Option<Vec<RawEntry>>,
    #[serde(default)]
    ignore_value: Option<u8>,
}

#[derive(Deserialize)]
struct RawEntry {
    index: Option<serde_json::Value>,
    name: Option<String>,
    raw_value: Option<serde_json::Value>,
    color: Option<serde_json::Value>,
    weight: Option<f64>,
    tier: Option<Tier>,
}

fn small_int(entry: &str, field: &'static str, value: &serde_json::Value) -> Result<u8, SchemaError> {
    value
        .as_u64()
        .and_then(|v| u8::try_from(v).ok())
        .ok_or_else(|| SchemaError::InvalidField {
            entry: entry.to_string(),
            field,
            reason: format!("expected an integer in [0, 255], got {value}"),
        })
}

impl ClassSchema {
    /// Builds a schema from class definitions, enforcing every invariant.
    /// Classes may be given in any order; they are stored by index.
    pub fn new(mut classes: Vec<ClassDef>, ignore_value: Option<u8>) -> Result<Self, SchemaError> {
        if classes.is_empty() || classes.len() > MAX_CLASSES {
            return Err(SchemaError::ClassCount(classes.len()));
        }
        let mut raw_owner: [Option<usize>; 256] = [None; 256];
        let mut index_owner: Vec<Option<usize>> = vec![None; 256];
        for (pos, class) in classes.iter().enumerate() {
            if !class.weight.is_finite() || class.weight <= 0.0 {
                return Err(SchemaError::NonPositiveWeight {
                    entry: class.name.clone(),
                    weight: class.weight,
                });
            }
            if let Some(prev) = raw_owner[class.raw_value as usize] {
                return Err(SchemaError::DuplicateRawValue {
                    entry: class.name.clone(),
                    raw_value: class.raw_value,
                    previous: classes[prev].name.clone(),
                });
            }
            raw_owner[class.raw_value as usize] = Some(pos);
            if let Some(prev) = index_owner[class.index as usize] {
                return Err(SchemaError::DuplicateIndex {
                    entry: class.name.clone(),
                    index: class.index,
                    previous: classes[prev].name.clone(),
                });
            }
            index_owner[class.index as usize] = Some(pos);
        }
        if let Some(missing) = (0..classes.len()).find(|&i| index_owner[i].is_none()) {
            return Err(SchemaError::NonContiguousIndex { missing });
        }
        if let Some(iv) = ignore_value {
            if raw_owner[iv as usize].is_some() {
                return Err(SchemaError::IgnoreCollision(iv));
            }
        }
        classes.sort_by_key(|c| c.index);
        let mut lookup = RawLookup::default();
        for c in &classes {
            lookup.0[c.raw_value as usize] = Some(c.index);
        }
        if let Some(iv) = ignore_value {
            lookup.0[iv as usize] = Some(IGNORE_INDEX);
        }
        Ok(ClassSchema {
            classes,
            ignore_value,
            raw_lookup: lookup,
        })
    }

    /// Parses and validates a JSON schema document.
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let doc: RawDocument =
            serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        let entries = doc.classes.ok_or(SchemaError::MissingField {
            entry: "<document>".into(),
            field: "classes",
        })?;
        let mut classes = Vec::with_capacity(entries.len());
        for (pos, e) in entries.into_iter().enumerate() {
            let label = e.name.clone().unwrap_or_else(|| format!("#{pos}"));
            let missing = |field| SchemaError::MissingField {
                entry: label.clone(),
                field,
            };
            let name = e.name.clone().ok_or_else(|| missing("name"))?;
            let index = small_int(&label, "index", e.index.as_ref().ok_or_else(|| missing("index"))?)?;
            let raw_value = small_int(
                &label,
                "raw_value",
                e.raw_value.as_ref().ok_or_else(|| missing("raw_value"))?,
            )?;
            let color_value = e.color.as_ref().ok_or_else(|| missing("color"))?;
            let color = match color_value.as_array() {
                Some(parts) if parts.len() == 3 => [
                    small_int(&label, "color", &parts[0])?,
                    small_int(&label, "color", &parts[1])?,
                    small_int(&label, "color", &parts[2])?,
                ],
                _ => {
                    return Err(SchemaError::InvalidField {
                        entry: label,
                        field: "color",
                        reason: "expected [r, g, b]".into(),
                    })
                }
            };
            let weight = e.weight.ok_or_else(|| missing("weight"))?;
            let tier = e.tier.ok_or_else(|| missing("tier"))?;
            classes.push(ClassDef {
                index,
                name,
                raw_value,
                color,
                weight,
                tier,
            });
        }
        ClassSchema::new(classes, doc.ignore_value)
    }

    /// Loads a schema from a JSON file, or the built-in schema when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, SchemaError> {
        match path {
            None => Ok(ClassSchema::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| SchemaError::Io(format!("{}: {e}", p.display())))?;
                ClassSchema::from_json(&text)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialises")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        let compact = serde_json::to_vec(self).expect("schema serialises");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn class(&self, index: usize) -> Option<&ClassDef> {
        self.classes.get(index)
    }

    pub fn ignore_value(&self) -> Option<u8> {
        self.ignore_value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Maps an annotation raw value to a class index (or [`IGNORE_INDEX`]).
    #[inline]
    pub fn index_for_raw(&self, raw: u8) -> Option<u8> {
        self.raw_lookup.0[raw as usize]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.weight).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn tier(&self, index: usize) -> Option<Tier> {
        self.classes.get(index).map(|c| c.tier)
    }

    /// Resolves class names to indices; unknown names are reported.
    pub fn resolve_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>, String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for n in names {
            let idx = self
                .index_of(n.as_ref())
                .ok_or_else(|| format!("unknown class name `{}`", n.as_ref()))?;
            if seen.insert(idx) {
                out.push(idx);
            }
        }
        Ok(out)
    }
}
