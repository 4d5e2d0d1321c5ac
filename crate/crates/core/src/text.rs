//! Byte-level matching helpers shared by keyword filtering, tagging and
//! config value coercion. All offsets are byte offsets into ASCII-lowercased
//! copies, which keep the same offsets as the original text.

pub(crate) fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// True when the byte before `start` does not continue a word. A single `-`
/// or `.` glued to a preceding word character (as in `foo-bar`) counts as
/// part of that word.
pub(crate) fn boundary_before(s: &[u8], start: usize) -> bool {
    if start == 0 {
        return true;
    }
    let prev = s[start - 1];
    if is_word_byte(prev) || prev == b'\'' {
        return false;
    }
    if matches!(prev, b'-' | b'.') && start >= 2 && is_word_byte(s[start - 2]) {
        return false;
    }
    true
}

pub(crate) fn boundary_after(s: &[u8], end: usize) -> bool {
    match s.get(end) {
        None => true,
        Some(&b) if is_word_byte(b) => false,
        Some(&b) if matches!(b, b'-' | b'.') => !s.get(end + 1).is_some_and(|&n| is_word_byte(n)),
        Some(_) => true,
    }
}

/// Does `needle` occur at `pos` in `hay` with word boundaries on each side
/// whose edge character is itself a word character?
pub(crate) fn word_at(hay: &[u8], pos: usize, needle: &[u8]) -> bool {
    if needle.is_empty() || !hay[pos..].starts_with(needle) {
        return false;
    }
    let end = pos + needle.len();
    let left_ok = !is_word_byte(needle[0]) || boundary_before(hay, pos);
    let right_ok = !is_word_byte(needle[needle.len() - 1]) || boundary_after(hay, end);
    left_ok && right_ok
}

/// Length of a number starting at `pos`: optional sign, integer part with
/// optional thousands separators, then any number of `.digits` groups
/// (so version strings like `11.7.8` form one token). No exponent.
pub(crate) fn scan_number(s: &[u8], pos: usize) -> Option<usize> {
    let mut i = pos;
    if matches!(s.get(i), Some(b'-') | Some(b'+')) {
        let sign_ok = pos == 0 || matches!(s[pos - 1], b' ' | b'\t' | b'\n' | b'(' | b'[');
        if !sign_ok {
            return None;
        }
        i += 1;
    }
    let digits = |from: usize| s[from..].iter().take_while(|b| b.is_ascii_digit()).count();
    let lead = digits(i);
    if lead == 0 {
        return None;
    }
    let mut end = i + lead;
    if lead <= 3 {
        // thousands groups: ",ddd" not followed by another digit
        let mut j = end;
        let mut grouped = end;
        while s.get(j) == Some(&b',') && digits(j + 1) == 3 {
            j += 4;
            grouped = j;
        }
        end = grouped;
    }
    while s.get(end) == Some(&b'.') && digits(end + 1) > 0 {
        end += 1 + digits(end + 1);
    }
    Some(end - pos)
}

/// Parses a number the way it is written in prose: thousands separators
/// stripped, optional sign. Returns `None` for version-like strings.
pub fn parse_prose_number(s: &str) -> Option<f64> {
    let t = s.trim();
    let bytes = t.as_bytes();
    if scan_number(bytes, 0) != Some(bytes.len()) {
        return None;
    }
    let cleaned: String = t.chars().filter(|&c| c != ',' && c != '+').collect();
    if cleaned.matches('.').count() > 1 {
        return None;
    }
    cleaned.parse().ok()
}

/// Canonical DSL rendering of a prose number (`"10,240"` → `"10240"`).
pub fn normalize_number(s: &str) -> Option<String> {
    let t = s.trim();
    if parse_prose_number(t).is_none() {
        return None;
    }
    let cleaned: String = t.chars().filter(|&c| c != ',' && c != '+').collect();
    let (neg, body) = match cleaned.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, cleaned.as_str()),
    };
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, f.trim_end_matches('0')),
        None => (body, ""),
    };
    let int = int.trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let mut out = String::new();
    if neg && (int != "0" || !frac.is_empty()) {
        out.push('-');
    }
    out.push_str(int);
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    Some(out)
}
