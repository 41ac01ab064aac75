use super::AgentError;
use crate::model::RatingScale;

/// Extracts the first whole decimal number in `text` that is a valid level.
///
/// Digit runs are taken greedily, so "10" is read as ten, never as one.
pub fn parse_rating(text: &str, scale: RatingScale) -> Result<u32, AgentError> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        // Runs too long for u64 are certainly out of range.
        if let Ok(value) = text[start..i].parse::<u64>() {
            if value >= 1 && value <= u64::from(scale.levels_max()) {
                return Ok(value as u32);
            }
        }
    }
    Err(AgentError::NoRatingFound {
        text: text.to_string(),
        max: scale.levels_max(),
    })
}
