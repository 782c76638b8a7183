use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{coref_statistics, CorefStats, Dialogue, LoadReport, Split};
use crate::ontology::SlotInventory;

/// Published reference figures for the full MultiWOZ corpus.
pub const REFERENCE_SPLITS: [(Split, usize); 3] = [(Split::Train, 8348), (Split::Dev, 1000), (Split::Test, 1000)];
pub const REFERENCE_SLOTS: usize = 30;
pub const REFERENCE_DOMAINS: usize = 5;
pub const REFERENCE_COREF_FRACTION: f64 = 0.2016;
pub const REFERENCE_COREF_FRACTION_TOLERANCE: f64 = 0.005;
pub const REFERENCE_COREF_SLOTS: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub slots: usize,
    pub domains: usize,
    pub domain_names: Vec<String>,
    pub dialogues: usize,
    pub turns: usize,
    pub split_sizes: BTreeMap<Split, usize>,
    pub coref: CorefStats,
    pub skipped_dialogues: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub expected: String,
    pub observed: String,
    pub pass: bool,
}

pub fn audit_dataset(dialogues: &[Dialogue], inventory: &SlotInventory, load: Option<&LoadReport>) -> AuditReport {
    let mut split_sizes: BTreeMap<Split, usize> = Split::ALL.iter().map(|s| (*s, 0)).collect();
    for d in dialogues {
        *split_sizes.entry(d.split).or_default() += 1;
    }
    let domains = inventory.domains();
    AuditReport {
        slots: inventory.len(),
        domains: domains.len(),
        domain_names: domains.into_iter().map(str::to_string).collect(),
        dialogues: dialogues.len(),
        turns: dialogues.iter().map(|d| d.turns.len()).sum(),
        split_sizes,
        coref: coref_statistics(dialogues),
        skipped_dialogues: load.map_or(0, |l| l.skipped.len()),
    }
}

impl AuditReport {
    /// Comparison against the reference figures for the full corpus.
    pub fn reference_checks(&self) -> Vec<AuditCheck> {
        let mut checks = Vec::new();
        let mut exact = |name: &str, expected: usize, observed: usize| {
            checks.push(AuditCheck {
                name: name.into(),
                expected: expected.to_string(),
                observed: observed.to_string(),
                pass: expected == observed,
            });
        };
        for (split, n) in REFERENCE_SPLITS {
            exact(&format!("{split} dialogues"), n, self.split_sizes.get(&split).copied().unwrap_or(0));
        }
        exact("slots", REFERENCE_SLOTS, self.slots);
        exact("domains", REFERENCE_DOMAINS, self.domains);
        exact("distinct coreferred slots", REFERENCE_COREF_SLOTS, self.coref.distinct_coref_slots);
        let f = self.coref.coref_dialogue_fraction;
        checks.push(AuditCheck {
            name: "coref dialogue fraction".into(),
            expected: format!(
                "{:.2}% ± {:.1}pp",
                100.0 * REFERENCE_COREF_FRACTION,
                100.0 * REFERENCE_COREF_FRACTION_TOLERANCE
            ),
            observed: format!("{:.2}%", 100.0 * f),
            pass: (f - REFERENCE_COREF_FRACTION).abs() <= REFERENCE_COREF_FRACTION_TOLERANCE,
        });
        checks
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("slots                     {}\n", self.slots));
        out.push_str(&format!("domains                   {} ({})\n", self.domains, self.domain_names.join(", ")));
        out.push_str(&format!("dialogues                 {}\n", self.dialogues));
        for (split, n) in &self.split_sizes {
            out.push_str(&format!("  {:<23} {}\n", split.to_string(), n));
        }
        out.push_str(&format!("turns                     {}\n", self.turns));
        out.push_str(&format!("skipped dialogues         {}\n", self.skipped_dialogues));
        out.push_str(&format!(
            "coref dialogues           {} ({:.2}%)\n",
            self.coref.coref_dialogues,
            100.0 * self.coref.coref_dialogue_fraction
        ));
        out.push_str(&format!("coref labels              {}\n", self.coref.labels));
        out.push_str(&format!("distinct coreferred slots {}\n", self.coref.distinct_coref_slots));
        for (slot, n) in &self.coref.per_slot_labels {
            out.push_str(&format!("  {slot:<23} {n}\n"));
        }
        out
    }
}
