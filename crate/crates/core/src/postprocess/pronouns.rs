//! Pronoun conformance to the subject's pronoun class.

use std::collections::BTreeMap;

use regex::Regex;
use serde::Deserialize;

use super::PostError;
use crate::model::PronounClass;

pub const PRONOUNS: &str = include_str!("../../assets/postprocess/pronouns.json");

const SUBJECT: usize = 0;
const OBJECT: usize = 1;
const POSSESSIVE: usize = 2;
const POSSESSIVE_PRONOUN: usize = 3;

#[derive(Deserialize)]
struct RawTable {
    forms: Vec<String>,
    classes: BTreeMap<String, Vec<String>>,
}

/// Forms per class, in the order subject, object, possessive determiner,
/// possessive pronoun, reflexive.
#[derive(Debug, Clone)]
pub struct PronounTable {
    forms: Vec<String>,
    classes: BTreeMap<PronounClass, Vec<String>>,
    word_re: Regex,
}

impl PronounTable {
    pub fn builtin() -> Self {
        Self::from_json(PRONOUNS).expect("shipped pronoun table parses")
    }

    pub fn from_json(text: &str) -> Result<Self, PostError> {
        let raw: RawTable = serde_json::from_str(text).map_err(|e| PostError::Config(format!("pronouns: {e}")))?;
        if raw.forms.len() < 4 {
            return Err(PostError::Config("pronouns: need at least subject, object and both possessive forms".into()));
        }
        let mut classes = BTreeMap::new();
        for (name, forms) in raw.classes {
            let class = PronounClass::parse(&name).ok_or_else(|| PostError::Config(format!("pronouns: unknown class `{name}`")))?;
            if forms.len() != raw.forms.len() {
                return Err(PostError::Config(format!("pronouns: class `{name}` has {} forms", forms.len())));
            }
            classes.insert(class, forms.into_iter().map(|f| f.to_lowercase()).collect());
        }
        let mut words: Vec<String> = classes.values().flatten().cloned().collect();
        words.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        words.dedup();
        let alt = words.iter().map(|w| regex::escape(w)).collect::<Vec<_>>().join("|");
        let word_re = Regex::new(&format!(r"(?i)\b(?:{alt})\b")).map_err(|e| PostError::Config(e.to_string()))?;
        Ok(Self {
            forms: raw.forms,
            classes,
            word_re,
        })
    }

    pub fn forms(&self, class: PronounClass) -> &[String] {
        self.classes.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn form_names(&self) -> &[String] {
        &self.forms
    }

    /// Every form index `word` can fill in any class.
    fn slots(&self, word: &str) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .classes
            .values()
            .flat_map(|forms| forms.iter().enumerate().filter(|(_, f)| *f == word).map(|(i, _)| i))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl Default for PronounTable {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Words after which an ambiguous `her`/`his` reads as standing alone rather
/// than as a determiner.
const NOT_A_NOUN: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "to", "in", "on", "at", "for", "with", "from", "by", "of", "as", "is", "was",
    "are", "were", "be", "that", "this", "than", "then", "when", "while", "after", "before", "again", "too", "up",
    "down", "out", "off", "over", "into", "back", "so", "if",
];

fn next_word(rest: &str) -> Option<&str> {
    let rest = rest.strip_prefix(' ')?;
    let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-')).unwrap_or(rest.len());
    (end > 0).then(|| &rest[..end])
}

/// Picks the grammatical slot for a token that fills several (`her` is object
/// or possessive, `his` is possessive determiner or pronoun).
fn resolve_slot(slots: &[usize], rest: &str) -> usize {
    if slots.len() == 1 {
        return slots[0];
    }
    let followed_by_noun = next_word(rest).is_some_and(|w| !NOT_A_NOUN.contains(&w.to_lowercase().as_str()));
    if slots.contains(&POSSESSIVE) && followed_by_noun {
        POSSESSIVE
    } else if slots.contains(&OBJECT) {
        OBJECT
    } else if slots.contains(&POSSESSIVE_PRONOUN) {
        POSSESSIVE_PRONOUN
    } else if slots.contains(&SUBJECT) {
        SUBJECT
    } else {
        slots[0]
    }
}

fn match_case(template: &str, word: &str) -> String {
    let mut letters = template.chars().filter(|c| c.is_alphabetic());
    let first_upper = letters.next().is_some_and(char::is_uppercase);
    let all_upper = first_upper && template.chars().count() > 1 && template.chars().filter(|c| c.is_alphabetic()).all(char::is_uppercase);
    if all_upper {
        word.to_uppercase()
    } else if first_upper {
        let mut c = word.chars();
        c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
    } else {
        word.to_string()
    }
}

/// Rewrites every pronoun not in `desired`'s forms into the matching form of
/// `desired`, keeping the original capitalization.
pub fn enforce_pronouns(text: &str, desired: PronounClass, table: &PronounTable) -> String {
    let target = table.forms(desired);
    if target.is_empty() {
        return text.to_string();
    }
    table
        .word_re
        .replace_all(text, |caps: &regex::Captures<'_>| {
            let m = caps.get(0).expect("whole match");
            let original = m.as_str();
            let lower = original.to_lowercase();
            if target.contains(&lower) {
                return original.to_string();
            }
            let slot = resolve_slot(&table.slots(&lower), &text[m.end()..]);
            match_case(original, &target[slot])
        })
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neutral_rewrite() {
        let t = PronounTable::builtin();
        assert_eq!(enforce_pronouns("She released her album", PronounClass::Neutral, &t), "They released their album");
        assert_eq!(enforce_pronouns("The fans cheered for her.", PronounClass::Neutral, &t), "The fans cheered for them.");
        assert_eq!(enforce_pronouns("The trophy is hers.", PronounClass::Masculine, &t), "The trophy is his.");
        assert_eq!(enforce_pronouns("He lifted his cup.", PronounClass::Feminine, &t), "She lifted her cup.");
        assert_eq!(enforce_pronouns("The cup is his.", PronounClass::Feminine, &t), "The cup is hers.");
    }

    #[test]
    fn conforming_unchanged() {
        let t = PronounTable::builtin();
        let s = "She birdied the 4th and her lead grew.";
        assert_eq!(enforce_pronouns(s, PronounClass::Feminine, &t), s);
    }

    #[test]
    fn case_matrix() {
        let t = PronounTable::builtin();
        // Oracle: for every class pair and every unambiguous form, the
        // lowercase, Capitalized and UPPER variants map to the same variant
        // of the target form.
        let classes = [PronounClass::Masculine, PronounClass::Feminine, PronounClass::Neutral];
        for from in classes {
            for to in classes {
                for (i, w) in t.forms(from).iter().enumerate() {
                    if t.slots(w).len() != 1 {
                        continue;
                    }
                    let want = &t.forms(to)[i];
                    let cap = |s: &str| format!("{}{}", s[..1].to_uppercase(), &s[1..]);
                    assert_eq!(enforce_pronouns(w, to, &t), *want);
                    assert_eq!(enforce_pronouns(&cap(w), to, &t), cap(want));
                    assert_eq!(enforce_pronouns(&w.to_uppercase(), to, &t), want.to_uppercase());
                }
            }
        }
        assert_eq!(
            enforce_pronouns("her album sold. Her album charted.", PronounClass::Neutral, &t),
            "their album sold. Their album charted."
        );
    }

    #[test]
    fn words_containing_pronouns_untouched() {
        let t = PronounTable::builtin();
        let s = "There, the theme hershey hermit shed";
        assert_eq!(enforce_pronouns(s, PronounClass::Neutral, &t), s);
    }
}
