//! ASCII field codecs for the space-padded EDF header layout.

use super::EdfError;

/// Extract a trimmed text field from `bytes[offset..offset+width]`.
pub fn read_text(bytes: &[u8], offset: usize, width: usize, field: &str) -> Result<String, EdfError> {
    let end = offset + width;
    if bytes.len() < end {
        return Err(EdfError::Truncated { region: format!("header field {field}") });
    }
    let raw = &bytes[offset..end];
    let text: String = raw.iter().map(|&b| b as char).collect();
    Ok(text.trim().to_string())
}

pub fn read_f64(bytes: &[u8], offset: usize, width: usize, field: &str) -> Result<f64, EdfError> {
    let text = read_text(bytes, offset, width, field)?;
    text.parse::<f64>().map_err(|_| EdfError::Parse {
        field: field.to_string(),
        offset,
        content: text,
    })
}

pub fn read_i64(bytes: &[u8], offset: usize, width: usize, field: &str) -> Result<i64, EdfError> {
    let text = read_text(bytes, offset, width, field)?;
    text.parse::<i64>().map_err(|_| EdfError::Parse {
        field: field.to_string(),
        offset,
        content: text,
    })
}

/// Space-pad `text` to `width` bytes. Overlong content is an error: the EDF
/// layout is fixed-width and silent truncation would corrupt round trips.
pub fn write_text(out: &mut Vec<u8>, text: &str, width: usize, field: &str) -> Result<(), EdfError> {
    if !text.is_ascii() {
        return Err(EdfError::InvalidField {
            field: field.to_string(),
            reason: format!("non-ASCII content {text:?}"),
        });
    }
    if text.len() > width {
        return Err(EdfError::InvalidField {
            field: field.to_string(),
            reason: format!("{} bytes exceed field width {width}", text.len()),
        });
    }
    out.extend_from_slice(text.as_bytes());
    out.extend(std::iter::repeat(b' ').take(width - text.len()));
    Ok(())
}

/// Canonical decimal rendering of an f64 into at most `width` characters:
/// try 6 decimals first, trim trailing zeros (and a trailing dot), and reduce
/// precision until the text fits. Stable under reparse-and-reformat, which
/// keeps write -> read -> write byte-identical.
pub fn format_f64(value: f64, width: usize) -> String {
    for precision in (0..=6).rev() {
        let s = format!("{value:.precision$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s.len() <= width {
            return s;
        }
    }
    // Fall back to scientific notation for magnitudes that cannot fit.
    format!("{value:.1e}")
}
