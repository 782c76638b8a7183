//! Text and value normalization.
//!
//! Utterances are lowercased with whitespace runs collapsed to one space.
//! Slot values additionally go through the MultiWOZ value map so that
//! spelling variants ("center", "guesthouse", "9:30") compare equal to the
//! canonical label form.

/// Lowercase, collapse whitespace runs, trim.
pub fn normalize_text(raw: &str) -> String {
    normalize_text_with_offsets(raw).0
}

/// Like [`normalize_text`], also returning for every raw char index the byte
/// offset in the normalized string where that char's output begins. The map
/// has `raw.chars().count() + 1` entries; the last one is the output length.
pub fn normalize_text_with_offsets(raw: &str) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(raw.len());
    let mut map = Vec::with_capacity(raw.len() + 1);
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            if !out.is_empty() {
                pending_space = true;
            }
            map.push(out.len());
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        map.push(out.len());
        out.extend(ch.to_lowercase());
    }
    map.push(out.len());
    (out, map)
}

const VALUE_MAP: &[(&str, &str)] = &[
    ("", "none"),
    ("not mentioned", "none"),
    ("not given", "none"),
    ("dont care", "dontcare"),
    ("don't care", "dontcare"),
    ("do n't care", "dontcare"),
    ("do not care", "dontcare"),
    ("does not care", "dontcare"),
    ("doesn't care", "dontcare"),
    ("any", "dontcare"),
    ("center", "centre"),
    ("city center", "centre"),
    ("city centre", "centre"),
    ("town centre", "centre"),
    ("town center", "centre"),
    ("guesthouse", "guest house"),
    ("guesthouses", "guest house"),
    ("moderately", "moderate"),
    ("moderatly", "moderate"),
    ("mutiple sports", "multiple sports"),
    ("swimmingpool", "swimming pool"),
    ("concerthall", "concert hall"),
    ("night club", "nightclub"),
    ("colleges", "college"),
    ("architectural", "architecture"),
    ("musuem", "museum"),
    ("churches", "church"),
    ("cheaper", "cheap"),
];

/// Canonical form of a slot value.
pub fn normalize_value(raw: &str) -> String {
    let text = normalize_text(raw);
    let text = text
        .trim_matches(|c: char| matches!(c, '.' | ',' | '?' | '!' | ';' | '"' | '\''))
        .trim()
        .to_string();
    if let Some((_, canonical)) = VALUE_MAP.iter().find(|(from, _)| *from == text) {
        return (*canonical).to_string();
    }
    normalize_time(&text).unwrap_or(text)
}

/// Surface variants that normalize to `canonical` (including itself).
pub fn value_variants(canonical: &str) -> Vec<String> {
    let mut variants = vec![canonical.to_string()];
    for (from, to) in VALUE_MAP {
        if *to == canonical && !from.is_empty() {
            variants.push((*from).to_string());
        }
    }
    if let Some(stripped) = canonical.strip_prefix('0') {
        if normalize_time(stripped).as_deref() == Some(canonical) {
            variants.push(stripped.to_string());
        }
    }
    variants
}

/// `h:mm` → `hh:mm`, `hh.mm` → `hh:mm`.
fn normalize_time(text: &str) -> Option<String> {
    let (h, m) = text.split_once([':', '.'])?;
    if h.is_empty() || h.len() > 2 || m.len() != 2 {
        return None;
    }
    if !h.bytes().all(|b| b.is_ascii_digit()) || !m.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let hour: u32 = h.parse().ok()?;
    let minute: u32 = m.parse().ok()?;
    if hour > 24 || minute > 59 {
        return None;
    }
    Some(format!("{hour:02}:{minute:02}"))
}

pub fn is_none_value(value: &str) -> bool {
    value == "none"
}
