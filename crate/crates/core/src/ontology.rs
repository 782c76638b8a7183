//! The fixed inventory of tracked domain-slot pairs.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CdstError, Result};

const MULTIWOZ_ONTOLOGY: &str = include_str!("../data/ontology.json");

/// One tracked attribute, e.g. `restaurant-name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainSlot {
    pub domain: String,
    pub slot: String,
    /// Text fed to the encoder in the slot segment.
    pub surface_form: String,
}

impl DomainSlot {
    /// Canonical `domain-slot` key used in belief states and files.
    pub fn name(&self) -> String {
        format!("{}-{}", self.domain, self.slot)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct OntologyFile {
    slots: Vec<DomainSlot>,
}

/// Ordered slot inventory. The order defines head indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotInventory {
    slots: Vec<DomainSlot>,
    index: HashMap<String, usize>,
}

impl SlotInventory {
    pub fn new(slots: Vec<DomainSlot>) -> Result<Self> {
        if slots.is_empty() {
            return Err(CdstError::Config("empty slot inventory".into()));
        }
        let mut index = HashMap::with_capacity(slots.len());
        for (i, s) in slots.iter().enumerate() {
            if index.insert(s.name(), i).is_some() {
                return Err(CdstError::Config(format!("duplicate slot `{}`", s.name())));
            }
        }
        Ok(Self { slots, index })
    }

    /// The 30 canonical MultiWOZ slots over five domains.
    pub fn multiwoz() -> Self {
        Self::from_json(MULTIWOZ_ONTOLOGY).expect("bundled ontology is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: OntologyFile =
            serde_json::from_str(text).map_err(|e| CdstError::json("ontology", e))?;
        Self::new(file.slots)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CdstError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&OntologyFile {
            slots: self.slots.clone(),
        })
        .expect("ontology serializes")
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[DomainSlot] {
        &self.slots
    }

    pub fn names(&self) -> impl Iterator<Item = String> + '_ {
        self.slots.iter().map(DomainSlot::name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&DomainSlot> {
        self.position(name).map(|i| &self.slots[i])
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.position(name)
            .ok_or_else(|| CdstError::UnknownSlot(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.slots.iter().map(|s| s.domain.as_str()).collect()
    }
}
