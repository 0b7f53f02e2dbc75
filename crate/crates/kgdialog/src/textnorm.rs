//! Deterministic text normalization that maps written-style text toward
//! ASR-transcript style: lowercasing, whole-token abbreviation expansion,
//! writing out integer numbers, punctuation stripping, whitespace collapse.
//!
//! The pipeline order is fixed (lowercase → abbreviations → numbers →
//! punctuation → whitespace) and the whole pipeline is idempotent:
//! `normalize(normalize(s)) == normalize(s)` for every string.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest integer that gets written out in words.
pub const MAX_EXPANDED_NUMBER: u64 = 999_999;

/// Whitespace tokenization used throughout the toolkit (applied after
/// normalization, so tokens are plain lowercase words).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Configuration for [`normalize`]. Construct via [`NormalizerConfig::default`]
/// (all steps on, small built-in abbreviation table) and customize with the
/// builder methods. The abbreviation table is sanitized on construction: keys
/// must be lowercase and whitespace-free, values are lowercased, and no value
/// may contain a token that is itself a key (that would defeat idempotence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormalizerConfigData", into = "NormalizerConfigData")]
pub struct NormalizerConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub expand_numbers: bool,
    pub expand_abbreviations: bool,
    abbreviation_table: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizerConfigData {
    #[serde(default = "default_true")]
    lowercase: bool,
    #[serde(default = "default_true")]
    strip_punctuation: bool,
    #[serde(default = "default_true")]
    expand_numbers: bool,
    #[serde(default = "default_true")]
    expand_abbreviations: bool,
    #[serde(default = "default_abbreviations")]
    abbreviation_table: BTreeMap<String, String>,
}

fn default_true() -> bool {
    true
}

impl TryFrom<NormalizerConfigData> for NormalizerConfig {
    type Error = Error;

    fn try_from(data: NormalizerConfigData) -> Result<Self> {
        NormalizerConfig {
            lowercase: data.lowercase,
            strip_punctuation: data.strip_punctuation,
            expand_numbers: data.expand_numbers,
            expand_abbreviations: data.expand_abbreviations,
            abbreviation_table: BTreeMap::new(),
        }
        .with_abbreviations(data.abbreviation_table)
    }
}

impl From<NormalizerConfig> for NormalizerConfigData {
    fn from(cfg: NormalizerConfig) -> Self {
        NormalizerConfigData {
            lowercase: cfg.lowercase,
            strip_punctuation: cfg.strip_punctuation,
            expand_numbers: cfg.expand_numbers,
            expand_abbreviations: cfg.expand_abbreviations,
            abbreviation_table: cfg.abbreviation_table,
        }
    }
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            lowercase: true,
            strip_punctuation: true,
            expand_numbers: true,
            expand_abbreviations: true,
            abbreviation_table: default_abbreviations(),
        }
    }
}

impl NormalizerConfig {
    /// All steps disabled except whitespace collapse.
    pub fn passthrough() -> Self {
        NormalizerConfig {
            lowercase: false,
            strip_punctuation: false,
            expand_numbers: false,
            expand_abbreviations: false,
            abbreviation_table: BTreeMap::new(),
        }
    }

    /// Replaces the abbreviation table, validating and sanitizing it.
    pub fn with_abbreviations(mut self, table: BTreeMap<String, String>) -> Result<Self> {
        let mut clean = BTreeMap::new();
        for (key, value) in table {
            if key.is_empty() || key.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return Err(Error::config(format!(
                    "abbreviation key `{key}` must be lowercase and whitespace-free"
                )));
            }
            let value = value.to_lowercase();
            if value.trim().is_empty() {
                return Err(Error::config(format!("abbreviation `{key}` has an empty expansion")));
            }
            clean.insert(key, value);
        }
        for (key, value) in &clean {
            for (start, end) in word_spans(value) {
                let token: String = value[start..end].to_string();
                if clean.contains_key(&token) {
                    return Err(Error::config(format!(
                        "expansion of `{key}` contains abbreviation key `{token}`"
                    )));
                }
            }
        }
        self.abbreviation_table = clean;
        Ok(self)
    }

    pub fn abbreviations(&self) -> &BTreeMap<String, String> {
        &self.abbreviation_table
    }
}

/// Built-in abbreviation table covering the usual unit and address shorthand.
pub fn default_abbreviations() -> BTreeMap<String, String> {
    [
        ("mm", "millimeters"),
        ("cm", "centimeters"),
        ("km", "kilometers"),
        ("kg", "kilograms"),
        ("lb", "pounds"),
        ("st", "street"),
        ("ave", "avenue"),
        ("blvd", "boulevard"),
        ("rd", "road"),
        ("dr", "drive"),
        ("apt", "apartment"),
        ("etc", "et cetera"),
        ("vs", "versus"),
        ("tel", "telephone"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Loads an abbreviation table from a UTF-8 file of `abbrev<TAB>expansion`
/// lines. Blank lines and lines starting with `#` are skipped.
pub fn load_abbreviation_table(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut table = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('\t').ok_or_else(|| {
            Error::data(format!(
                "{}:{}: expected `abbrev<TAB>expansion`",
                path.display(),
                lineno + 1
            ))
        })?;
        table.insert(key.to_string(), value.to_string());
    }
    Ok(table)
}

/// Spans (byte ranges) of word tokens. A word token is a maximal run of
/// alphanumeric characters plus apostrophes and hyphens that sit between two
/// alphanumerics ("wi-fi", "it's"); everything else separates tokens.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let is_word_char = |i: usize| -> bool {
        let c = chars[i].1;
        if c.is_alphanumeric() {
            return true;
        }
        if c == '\'' || c == '-' {
            let prev = i.checked_sub(1).map(|j| chars[j].1.is_alphanumeric());
            let next = chars.get(i + 1).map(|&(_, c)| c.is_alphanumeric());
            return prev == Some(true) && next == Some(true);
        }
        false
    };

    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    #[allow(clippy::needless_range_loop)] // the closure indexes neighbors too
    for i in 0..chars.len() {
        if is_word_char(i) {
            if start.is_none() {
                start = Some(chars[i].0);
            }
        } else if let Some(s) = start.take() {
            spans.push((s, chars[i].0));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Rewrites each word token of `text` through `f`, leaving separators intact.
fn map_word_tokens(text: &str, mut f: impl FnMut(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (start, end) in word_spans(text) {
        out.push_str(&text[cursor..start]);
        let token = &text[start..end];
        match f(token) {
            Some(replacement) => out.push_str(&replacement),
            None => out.push_str(token),
        }
        cursor = end;
    }
    out.push_str(&text[cursor..]);
    out
}

/// English cardinal words for `n`, space-separated and unhyphenated
/// ("forty two"). Supports `0..=999_999`.
pub fn number_to_words(n: u64) -> Option<String> {
    const ONES: [&str; 20] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
        "nineteen",
    ];
    const TENS: [&str; 10] = [
        "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];

    fn under_thousand(n: u64, out: &mut Vec<&'static str>) {
        let (hundreds, rest) = (n / 100, n % 100);
        if hundreds > 0 {
            out.push(ONES[hundreds as usize]);
            out.push("hundred");
        }
        if rest >= 20 {
            out.push(TENS[(rest / 10) as usize]);
            if rest % 10 > 0 {
                out.push(ONES[(rest % 10) as usize]);
            }
        } else if rest > 0 || n == 0 {
            out.push(ONES[rest as usize]);
        }
    }

    if n > MAX_EXPANDED_NUMBER {
        return None;
    }
    let mut words = Vec::new();
    if n >= 1000 {
        under_thousand(n / 1000, &mut words);
        words.push("thousand");
        if !n.is_multiple_of(1000) {
            under_thousand(n % 1000, &mut words);
        }
    } else {
        under_thousand(n, &mut words);
    }
    Some(words.join(" "))
}

/// Writes out digit-only word tokens as English cardinals. Tokens mixing
/// digits with letters ("b3") or joined by hyphens ("101-103") and runs longer
/// than six digits are left unchanged.
pub fn expand_numbers(text: &str) -> String {
    map_word_tokens(text, |token| {
        if !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit()) {
            token.parse::<u64>().ok().and_then(number_to_words)
        } else {
            None
        }
    })
}

/// Whole-token, case-insensitive abbreviation replacement. Substrings never
/// match ("command" is untouched by `mm`). Keys must be lowercase.
pub fn expand_abbreviations(text: &str, table: &BTreeMap<String, String>) -> String {
    if table.is_empty() {
        return text.to_string();
    }
    map_word_tokens(text, |token| {
        let lower = token.to_lowercase();
        table.get(&lower).cloned()
    })
}

/// Removes punctuation, keeping apostrophes and intra-word hyphens. Stripped
/// characters become spaces so adjoining words never merge.
fn strip_punctuation(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    for i in 0..chars.len() {
        let c = chars[i];
        let keep = c.is_alphanumeric()
            || c.is_whitespace()
            || c == '\''
            || (c == '-'
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        out.push(if keep { c } else { ' ' });
    }
    out
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Applies the normalization pipeline: lowercase → abbreviation expansion →
/// number expansion → punctuation stripping → whitespace collapse, each step
/// gated by its config flag (whitespace collapse always runs). Total and
/// idempotent.
pub fn normalize(text: &str, config: &NormalizerConfig) -> String {
    let mut s = if config.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    if config.expand_abbreviations {
        s = expand_abbreviations(&s, &config.abbreviation_table);
    }
    if config.expand_numbers {
        s = expand_numbers(&s);
    }
    if config.strip_punctuation {
        s = strip_punctuation(&s);
    }
    collapse_whitespace(&s)
}
