//! Shared text normalization: case folding and whitespace collapsing, plus a
//! normalized view of a document that can map matches back to original
//! character offsets.

/// Case-fold, trim, and collapse whitespace runs to single spaces.
///
/// This is the normalization used for mention dedup keys and for all
/// hint/surface matching.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.trim().chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// A normalized copy of a document that remembers, for every normalized
/// character, the original character range it came from.
pub struct NormalizedText {
    norm: Vec<char>,
    /// (orig_char_start, orig_char_end_exclusive) per normalized char.
    map: Vec<(usize, usize)>,
}

impl NormalizedText {
    pub fn new(text: &str) -> Self {
        let mut norm = Vec::with_capacity(text.len());
        let mut map = Vec::with_capacity(text.len());
        let mut ws_start: Option<usize> = None;
        for (i, c) in text.chars().enumerate() {
            if c.is_whitespace() {
                if ws_start.is_none() {
                    ws_start = Some(i);
                }
            } else {
                if let Some(start) = ws_start.take() {
                    // A whole whitespace run becomes one space.
                    if !norm.is_empty() {
                        norm.push(' ');
                        map.push((start, i));
                    }
                }
                for lc in c.to_lowercase() {
                    norm.push(lc);
                    map.push((i, i + 1));
                }
            }
        }
        NormalizedText { norm, map }
    }

    /// All start positions (in normalized coordinates) where `pattern`
    /// (already normalized) occurs.
    pub fn find_all(&self, pattern: &str) -> Vec<usize> {
        let pat: Vec<char> = pattern.chars().collect();
        if pat.is_empty() || pat.len() > self.norm.len() {
            return Vec::new();
        }
        (0..=self.norm.len() - pat.len())
            .filter(|&i| self.norm[i..i + pat.len()] == pat[..])
            .collect()
    }

    /// First occurrence of `pattern` within the normalized range
    /// [from, to), if any.
    pub fn find_within(&self, pattern: &str, from: usize, to: usize) -> Option<usize> {
        let pat: Vec<char> = pattern.chars().collect();
        if pat.is_empty() || from + pat.len() > to || to > self.norm.len() {
            return None;
        }
        (from..=to - pat.len()).find(|&i| self.norm[i..i + pat.len()] == pat[..])
    }

    /// Map a normalized range back to original character offsets
    /// (start inclusive, end exclusive).
    pub fn to_original(&self, start: usize, len: usize) -> (usize, usize) {
        debug_assert!(len > 0 && start + len <= self.map.len());
        (self.map[start].0, self.map[start + len - 1].1)
    }
}
