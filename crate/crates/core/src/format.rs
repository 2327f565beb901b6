//! Number formatting shared by prompts, mock responses and reports.

/// Rounds to at most `max_decimals` places and trims trailing zeros, keeping
/// at least one decimal: `0.5`, `4.0`, `2.8333`.
pub fn compact(value: f64, max_decimals: usize) -> String {
    let s = format!("{:.*}", max_decimals, value + 0.0);
    let trimmed = if s.contains('.') {
        s.trim_end_matches('0')
    } else {
        s.as_str()
    };
    let out = if trimmed.ends_with('.') {
        format!("{trimmed}0")
    } else {
        trimmed.to_string()
    };
    if out == "-0.0" {
        "0.0".to_string()
    } else {
        out
    }
}

/// Fixed number of decimals, with negative zero printed as zero.
pub fn fixed(value: f64, decimals: usize) -> String {
    let s = format!("{:.*}", decimals, value);
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}
